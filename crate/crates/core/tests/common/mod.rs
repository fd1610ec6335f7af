#![allow(dead_code)]

use std::collections::BTreeMap;

use mzinb::frame::{Family, ModelSpec};
use mzinb::sim::{SimConfig, Truth};

pub fn levels(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// One conditional random intercept over `groups` levels.
pub fn single_block_config(n: usize, groups: usize, sd: f64, seed: u64) -> SimConfig {
    SimConfig {
        seed,
        n,
        response: "y".into(),
        model: ModelSpec::new(Family::Zinb)
            .with_cond_covariates(&["x1", "x2"])
            .with_zi_covariates(&["x1"])
            .with_cond_factors(&["group"]),
        levels: levels(&[("group", groups)]),
        binary_covariates: vec![],
        truth: Truth {
            cond: vec![1.0, 0.4, -0.3],
            zi: vec![-0.5, 0.6],
            alpha: 0.6,
            sd_cond: vec![sd],
            sd_zi: vec![],
            sd_observation: 0.0,
        },
        target_nonzero: None,
    }
}

/// Random intercepts in both parts, crossed factors.
pub fn crossed_config(n: usize, seed: u64) -> SimConfig {
    SimConfig {
        seed,
        n,
        response: "y".into(),
        model: ModelSpec::new(Family::Zinb)
            .with_cond_covariates(&["x1", "x2"])
            .with_zi_covariates(&["x1"])
            .with_cond_factors(&["state", "industry"])
            .with_zi_factors(&["state"]),
        levels: levels(&[("state", 7), ("industry", 4)]),
        binary_covariates: vec!["x2".into()],
        truth: Truth {
            cond: vec![0.8, 0.4, -0.3],
            zi: vec![-0.3, 0.6],
            alpha: 0.7,
            sd_cond: vec![0.5, 0.3],
            sd_zi: vec![0.6],
            sd_observation: 0.0,
        },
        target_nonzero: None,
    }
}
