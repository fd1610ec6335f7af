mod common;

use mzinb::dist::{expit, zinb_log_pmf, NbParams, ZinbParams};
use mzinb::estimator::FitOptions;
use mzinb::frame::{build_frame, Family, ModelSpec};
use mzinb::prep::{load_csv_reader, schema_for, write_csv};
use mzinb::sim::{
    gauss_hermite, recovery_experiment, simulate, simulate_dataset, SimConfig, Truth, SATURATED_LOGIT,
};

fn intercept_config(family: Family, n: usize, cond0: f64, zi0: Option<f64>, alpha: f64, seed: u64) -> SimConfig {
    SimConfig {
        seed,
        n,
        response: "y".into(),
        model: ModelSpec::new(family),
        levels: common::levels(&[("g", 2)]),
        binary_covariates: vec![],
        truth: Truth {
            cond: vec![cond0],
            zi: zi0.into_iter().collect(),
            alpha,
            sd_cond: vec![],
            sd_zi: vec![],
            sd_observation: 0.0,
        },
        target_nonzero: None,
    }
}

#[test]
fn identical_configs_give_identical_datasets() {
    let cfg = common::crossed_config(500, 12);
    let a = simulate_dataset(&cfg).unwrap();
    let b = simulate_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    let c = simulate_dataset(&cfg.with_seed(13)).unwrap();
    assert_ne!(a.response, c.response);
}

#[test]
fn saturated_inflation_gives_all_zeros() {
    let cfg = intercept_config(Family::Zinb, 5000, 2.0, Some(SATURATED_LOGIT), 0.5, 1);
    let d = simulate_dataset(&cfg).unwrap();
    assert!(d.response.iter().all(|&y| y == 0));
}

#[test]
fn sample_mean_obeys_law_of_large_numbers() {
    let n = 100_000;
    let alpha = 0.5;
    let cfg = intercept_config(Family::Nb, n, 5f64.ln(), None, alpha, 2);
    let d = simulate_dataset(&cfg).unwrap();
    let mean = d.total_response() as f64 / n as f64;
    let bound = 4.0 * ((5.0 + alpha * 25.0) / n as f64).sqrt();
    assert!((mean - 5.0).abs() <= bound, "mean {mean}");
}

#[test]
fn zero_fraction_matches_closed_form() {
    let n = 100_000;
    let phi: f64 = 0.4;
    let cfg = intercept_config(Family::Zinb, n, 3f64.ln(), Some((phi / (1.0 - phi)).ln()), 0.5, 3);
    let d = simulate_dataset(&cfg).unwrap();
    let zeros = d.response.iter().filter(|&&y| y == 0).count() as f64 / n as f64;
    let expected = 0.4 + 0.6 * (1.0f64 + 1.5).powi(-2);
    assert!((expected - 0.496).abs() < 1e-12);
    let pmf0 = zinb_log_pmf(0, ZinbParams::new(0.4, NbParams::new(3.0, 0.5).unwrap()).unwrap()).unwrap().exp();
    assert!((pmf0 - expected).abs() < 1e-12);
    assert!((zeros - expected).abs() < 0.01, "zero fraction {zeros}");
}

#[test]
fn target_nonzero_calibrates_inflation_intercept() {
    let mut cfg = common::crossed_config(4000, 14);
    cfg.target_nonzero = Some(900.0);
    let sim = simulate(&cfg).unwrap();
    let nonzero = sim.data.response.iter().filter(|&&y| y > 0).count() as f64;
    // Binomial-scale tolerance around the calibrated expectation.
    assert!((nonzero - 900.0).abs() < 4.0 * 900f64.sqrt(), "{nonzero}");
    assert_ne!(sim.theta, cfg.true_theta());
}

#[test]
fn csv_round_trip_preserves_dataset() {
    let cfg = common::crossed_config(300, 15);
    let d = simulate_dataset(&cfg).unwrap();
    let mut buf = Vec::new();
    write_csv(&d, &mut buf).unwrap();
    let back = load_csv_reader(buf.as_slice(), &schema_for(&d)).unwrap();
    assert_eq!(back.data, d);
    assert_eq!(back.dropped_rows, 0);
}

#[test]
fn gauss_hermite_integrates_polynomials_exactly() {
    let (x, w) = gauss_hermite(64);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let moment = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
    assert!((moment(0) - sqrt_pi).abs() < 1e-13);
    assert!((moment(2) - sqrt_pi / 2.0).abs() < 1e-13);
    assert!((moment(4) - 3.0 * sqrt_pi / 4.0).abs() < 1e-12);
    assert!(moment(3).abs() < 1e-12);
    assert!(x.windows(2).all(|p| p[0] < p[1]));
}

/// Exact per-observation entropy by summing the pmf, averaged over rows.
#[test]
fn simulated_nll_matches_entropy_rate() {
    let n = 100_000;
    let mut cfg = common::crossed_config(n, 16);
    cfg.model.cond_factors.clear();
    cfg.model.zi_factors.clear();
    cfg.truth.sd_cond.clear();
    cfg.truth.sd_zi.clear();
    let sim = simulate(&cfg).unwrap();
    let frame = build_frame(&sim.data, &cfg.model).unwrap();
    let sample = mzinb::estimator::marginal_nll(&frame, &sim.theta).unwrap() / n as f64;
    let x1 = &sim.data.covariate("x1").unwrap().values;
    let x2 = &sim.data.covariate("x2").unwrap().values;
    let t = &cfg.truth;
    let mut entropy = 0.0;
    for i in 0..n {
        let mu = (t.cond[0] + t.cond[1] * x1[i] + t.cond[2] * x2[i]).exp();
        let phi = expit(t.zi[0] + t.zi[1] * x1[i]);
        let p = ZinbParams::new(phi, NbParams::new(mu, t.alpha).unwrap()).unwrap();
        let mut h = 0.0;
        let mut mass = 0.0;
        for y in 0..2000u64 {
            let lp = zinb_log_pmf(y, p).unwrap();
            let pr = lp.exp();
            h -= pr * lp;
            mass += pr;
            if mass > 1.0 - 1e-13 {
                break;
            }
        }
        entropy += h;
    }
    entropy /= n as f64;
    assert!(((sample - entropy) / entropy).abs() < 0.005, "sample {sample} entropy {entropy}");
}

#[test]
fn intercept_only_recovery_has_nominal_coverage() {
    let cfg = intercept_config(Family::Nb, 2000, 2f64.ln(), None, 0.8, 100);
    let opts = FitOptions { restarts: 0, ..Default::default() };
    let report = recovery_experiment(&cfg, 100, &opts).unwrap();
    assert_eq!(report.replicates, 100);
    assert_eq!(report.failures, 0);
    let b0 = report.parameter("cond:(Intercept)").unwrap();
    assert!((0.90..=0.99).contains(&b0.coverage), "coverage {}", b0.coverage);
    assert!((report.parameters.iter().all(|p| (0.0..=1.0).contains(&p.coverage))));
}

#[test]
fn recovery_requires_enough_replicates() {
    let cfg = intercept_config(Family::Nb, 100, 1.0, None, 0.8, 1);
    assert!(recovery_experiment(&cfg, 0, &FitOptions::default()).is_err());
    assert!(recovery_experiment(&cfg, 49, &FitOptions::default()).is_err());
}

#[test]
fn config_validation() {
    let mut cfg = common::crossed_config(100, 1);
    cfg.truth.cond.pop();
    assert!(simulate(&cfg).is_err());
    let mut cfg = common::crossed_config(100, 1);
    cfg.levels.remove("state");
    assert!(cfg.validate().is_err());
    let cfg = common::crossed_config(100, 1);
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
}
