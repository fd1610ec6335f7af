//! Model specification, parameter layout, design matrices, and linear
//! predictors with crossed random intercepts.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::expit;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Poisson,
    Nb,
    Zip,
    Zinb,
}

impl Family {
    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::Nb | Family::Zinb)
    }

    pub fn zero_inflated(self) -> bool {
        matches!(self, Family::Zip | Family::Zinb)
    }

    /// True when `self` is a special case of `other`.
    pub fn nested_in(self, other: Family) -> bool {
        (!self.has_dispersion() || other.has_dispersion())
            && (!self.zero_inflated() || other.zero_inflated())
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Nb => "nb",
            Family::Zip => "zip",
            Family::Zinb => "zinb",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "nb" | "negbin" => Ok(Family::Nb),
            "zip" => Ok(Family::Zip),
            "zinb" => Ok(Family::Zinb),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

/// Which linear predictor a random-effect block enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Cond,
    Zi,
}

impl Part {
    pub fn index(self) -> usize {
        match self {
            Part::Cond => 0,
            Part::Zi => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub cond_covariates: Vec<String>,
    #[serde(default)]
    pub zi_covariates: Vec<String>,
    #[serde(default, rename = "re_cond")]
    pub cond_factors: Vec<String>,
    #[serde(default, rename = "re_zi")]
    pub zi_factors: Vec<String>,
    /// Adds one random intercept per observation to the conditional part.
    #[serde(default)]
    pub observation_effect: bool,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            cond_covariates: Vec::new(),
            zi_covariates: Vec::new(),
            cond_factors: Vec::new(),
            zi_factors: Vec::new(),
            observation_effect: false,
        }
    }

    pub fn with_cond_covariates<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.cond_covariates = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn with_zi_covariates<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.zi_covariates = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn with_cond_factors<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.cond_factors = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn with_zi_factors<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.zi_factors = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    /// Checks internal consistency, independent of any dataset.
    pub fn check(&self) -> Result<()> {
        if !self.family.zero_inflated() && !(self.zi_covariates.is_empty() && self.zi_factors.is_empty()) {
            return Err(Error::Config(format!(
                "family `{}` has no zero-inflation part but zero-inflation terms were given",
                self.family
            )));
        }
        for (what, list) in [
            ("conditional covariate", &self.cond_covariates),
            ("zero-inflation covariate", &self.zi_covariates),
            ("conditional random effect", &self.cond_factors),
            ("zero-inflation random effect", &self.zi_factors),
        ] {
            let mut seen = HashSet::new();
            for name in list {
                if !seen.insert(name.as_str()) {
                    return Err(Error::Config(format!("duplicate {what} `{name}`")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        self.check()?;
        for name in self.cond_covariates.iter().chain(&self.zi_covariates) {
            if data.covariate(name).is_none() {
                return Err(Error::Config(format!("unknown covariate `{name}`")));
            }
        }
        for name in self.cond_factors.iter().chain(&self.zi_factors) {
            let f = data
                .factor(name)
                .ok_or_else(|| Error::Config(format!("unknown factor `{name}`")))?;
            if f.n_levels() < 2 {
                return Err(Error::Config(format!(
                    "factor `{name}` has a single level; its random effect is unidentifiable"
                )));
            }
        }
        Ok(())
    }

    /// True when every term of `self` also appears in `other`.
    pub fn nested_in(&self, other: &ModelSpec) -> bool {
        let subset = |a: &[String], b: &[String]| a.iter().all(|x| b.contains(x));
        self.family.nested_in(other.family)
            && subset(&self.cond_covariates, &other.cond_covariates)
            && subset(&self.zi_covariates, &other.zi_covariates)
            && subset(&self.cond_factors, &other.cond_factors)
            && subset(&self.zi_factors, &other.zi_factors)
            && (!self.observation_effect || other.observation_effect)
    }
}

pub const OBSERVATION_BLOCK: &str = "(observation)";
pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub factor: String,
    pub part: Part,
    pub n_levels: usize,
    /// Start of this block's slots in the random-effect vector.
    pub offset: usize,
}

impl BlockLayout {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.n_levels
    }
}

/// Flat parameter ordering: conditional fixed effects, zero-inflation fixed
/// effects, log dispersion, then one log standard deviation per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub family: Family,
    pub cond_fixed: Range<usize>,
    pub zi_fixed: Range<usize>,
    pub log_alpha: Option<usize>,
    pub log_sd: Vec<usize>,
    pub blocks: Vec<BlockLayout>,
    pub names: Vec<String>,
}

/// Unpacked view of a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub cond: Vec<f64>,
    pub zi: Vec<f64>,
    pub log_alpha: Option<f64>,
    pub log_sd: Vec<f64>,
}

impl ParameterLayout {
    pub fn new(
        family: Family,
        cond_covariates: &[String],
        zi_covariates: &[String],
        blocks: Vec<BlockLayout>,
    ) -> Self {
        let mut names = Vec::new();
        names.push(format!("cond:{INTERCEPT}"));
        names.extend(cond_covariates.iter().map(|c| format!("cond:{c}")));
        let cond_fixed = 0..names.len();
        let zi_start = names.len();
        if family.zero_inflated() {
            names.push(format!("zi:{INTERCEPT}"));
            names.extend(zi_covariates.iter().map(|c| format!("zi:{c}")));
        }
        let zi_fixed = zi_start..names.len();
        let log_alpha = family.has_dispersion().then(|| {
            names.push("log_alpha".to_string());
            names.len() - 1
        });
        let log_sd = blocks
            .iter()
            .map(|b| {
                let part = match b.part {
                    Part::Cond => "cond",
                    Part::Zi => "zi",
                };
                names.push(format!("log_sd:{part}:{}", b.factor));
                names.len() - 1
            })
            .collect();
        Self {
            family,
            cond_fixed,
            zi_fixed,
            log_alpha,
            log_sd,
            blocks,
            names,
        }
    }

    /// Structural parameter count (fixed effects, dispersion, variance components).
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn n_random(&self) -> usize {
        self.blocks.iter().map(|b| b.n_levels).sum()
    }

    pub fn unpack(&self, theta: &[f64]) -> Result<Parameters> {
        self.check_len(theta)?;
        Ok(Parameters {
            cond: theta[self.cond_fixed.clone()].to_vec(),
            zi: theta[self.zi_fixed.clone()].to_vec(),
            log_alpha: self.log_alpha.map(|i| theta[i]),
            log_sd: self.log_sd.iter().map(|&i| theta[i]).collect(),
        })
    }

    pub fn pack(&self, p: &Parameters) -> Result<Vec<f64>> {
        if p.cond.len() != self.cond_fixed.len()
            || p.zi.len() != self.zi_fixed.len()
            || p.log_alpha.is_some() != self.log_alpha.is_some()
            || p.log_sd.len() != self.log_sd.len()
        {
            return Err(Error::Contract("parameters do not conform to the layout".into()));
        }
        let mut v = Vec::with_capacity(self.k());
        v.extend_from_slice(&p.cond);
        v.extend_from_slice(&p.zi);
        v.extend(p.log_alpha);
        v.extend_from_slice(&p.log_sd);
        Ok(v)
    }

    pub fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.k() {
            return Err(Error::Contract(format!(
                "parameter vector has length {}, layout expects {}",
                theta.len(),
                self.k()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReBlock {
    pub layout: BlockLayout,
    /// Level index of each observation.
    pub levels: Vec<u32>,
    /// Level labels (empty for the observation-level block).
    pub labels: Vec<String>,
}

/// Immutable design for one model on one dataset.
#[derive(Debug, Clone)]
pub struct ModelFrame {
    pub spec: ModelSpec,
    pub layout: ParameterLayout,
    pub y: Vec<u64>,
    /// Row-major `n × cond_width`, leading intercept column.
    pub x_cond: Vec<f64>,
    pub cond_width: usize,
    /// Row-major `n × zi_width`; zero width when not zero-inflated.
    pub x_zi: Vec<f64>,
    pub zi_width: usize,
    pub blocks: Vec<ReBlock>,
    pub checksum: String,
}

fn design(data: &Dataset, names: &[String]) -> Vec<f64> {
    let n = data.n();
    let cols: Vec<&[f64]> = names
        .iter()
        .map(|c| data.covariate(c).expect("validated").values.as_slice())
        .collect();
    let width = cols.len() + 1;
    let mut x = vec![0.0; n * width];
    for i in 0..n {
        let row = &mut x[i * width..(i + 1) * width];
        row[0] = 1.0;
        for (j, col) in cols.iter().enumerate() {
            row[j + 1] = col[i];
        }
    }
    x
}

pub fn build_frame(data: &Dataset, spec: &ModelSpec) -> Result<ModelFrame> {
    spec.validate(data)?;
    let n = data.n();
    if n == 0 {
        return Err(Error::Data("dataset has no observations".into()));
    }
    let mut blocks = Vec::new();
    let mut offset = 0;
    let mut push = |factor: &str, part: Part, levels: Vec<u32>, labels: Vec<String>, n_levels: usize| {
        blocks.push(ReBlock {
            layout: BlockLayout {
                factor: factor.to_string(),
                part,
                n_levels,
                offset,
            },
            levels,
            labels,
        });
        offset += n_levels;
    };
    for (part, list) in [(Part::Cond, &spec.cond_factors), (Part::Zi, &spec.zi_factors)] {
        for name in list {
            let f = data.factor(name).expect("validated");
            push(name, part, f.codes.clone(), f.levels.clone(), f.n_levels());
        }
    }
    if spec.observation_effect {
        push(OBSERVATION_BLOCK, Part::Cond, (0..n as u32).collect(), Vec::new(), n);
    }
    let layout = ParameterLayout::new(
        spec.family,
        &spec.cond_covariates,
        &spec.zi_covariates,
        blocks.iter().map(|b| b.layout.clone()).collect(),
    );
    let x_cond = design(data, &spec.cond_covariates);
    let (x_zi, zi_width) = if spec.family.zero_inflated() {
        (design(data, &spec.zi_covariates), spec.zi_covariates.len() + 1)
    } else {
        (Vec::new(), 0)
    };
    Ok(ModelFrame {
        spec: spec.clone(),
        layout,
        y: data.response.clone(),
        x_cond,
        cond_width: spec.cond_covariates.len() + 1,
        x_zi,
        zi_width,
        blocks,
        checksum: data.response_checksum(),
    })
}

/// Per-observation structural-zero probabilities and conditional means.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub phi: Vec<f64>,
    pub mu: Vec<f64>,
}

impl ModelFrame {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn has_random_effects(&self) -> bool {
        !self.blocks.is_empty()
    }

    #[inline]
    pub fn cond_row(&self, i: usize) -> &[f64] {
        &self.x_cond[i * self.cond_width..(i + 1) * self.cond_width]
    }

    #[inline]
    pub fn zi_row(&self, i: usize) -> &[f64] {
        &self.x_zi[i * self.zi_width..(i + 1) * self.zi_width]
    }

    /// Fixed-effect parts of both linear predictors.
    pub fn fixed_predictors(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let beta = &theta[self.layout.cond_fixed.clone()];
        let gamma = &theta[self.layout.zi_fixed.clone()];
        let n = self.n();
        let eta_c = (0..n).map(|i| dot(self.cond_row(i), beta)).collect();
        let eta_z = if self.spec.family.zero_inflated() {
            (0..n).map(|i| dot(self.zi_row(i), gamma)).collect()
        } else {
            vec![f64::NEG_INFINITY; n]
        };
        (eta_c, eta_z)
    }

    /// Adds random-effect contributions to fixed-effect predictors in place.
    pub fn add_random_effects(&self, u: &[f64], eta_c: &mut [f64], eta_z: &mut [f64]) {
        for b in &self.blocks {
            let off = b.layout.offset;
            let target = match b.layout.part {
                Part::Cond => &mut *eta_c,
                Part::Zi => &mut *eta_z,
            };
            for (e, &l) in target.iter_mut().zip(&b.levels) {
                *e += u[off + l as usize];
            }
        }
    }

    pub fn check_random_effects(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.layout.n_random() {
            return Err(Error::Contract(format!(
                "random-effect vector has length {}, layout expects {}",
                u.len(),
                self.layout.n_random()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn linear_predictors(frame: &ModelFrame, theta: &[f64], u: &[f64]) -> Result<Predictions> {
    frame.layout.check_len(theta)?;
    frame.check_random_effects(u)?;
    let (mut eta_c, mut eta_z) = frame.fixed_predictors(theta);
    frame.add_random_effects(u, &mut eta_c, &mut eta_z);
    Ok(Predictions {
        phi: eta_z.iter().map(|&e| expit(e)).collect(),
        mu: eta_c.iter().map(|&e| e.exp()).collect(),
    })
}

/// Predictions on new data using fitted parameters and random-effect modes.
/// Factor levels not seen when `frame` was built get a zero random effect.
pub fn predict(frame: &ModelFrame, theta: &[f64], u: &[f64], data: &Dataset) -> Result<Predictions> {
    frame.layout.check_len(theta)?;
    frame.check_random_effects(u)?;
    if frame.spec.observation_effect {
        return Err(Error::Unsupported(
            "prediction with an observation-level effect".into(),
        ));
    }
    let target = build_frame_unchecked_levels(data, &frame.spec)?;
    let (mut eta_c, mut eta_z) = target.fixed_predictors(theta);
    for b in &frame.blocks {
        let f = data.factor(&b.layout.factor).ok_or_else(|| {
            Error::Config(format!("unknown factor `{}`", b.layout.factor))
        })?;
        let map: Vec<Option<usize>> = f
            .levels
            .iter()
            .map(|l| b.labels.iter().position(|x| x == l))
            .collect();
        let eta = match b.layout.part {
            Part::Cond => &mut eta_c,
            Part::Zi => &mut eta_z,
        };
        for (e, &code) in eta.iter_mut().zip(&f.codes) {
            if let Some(l) = map[code as usize] {
                *e += u[b.layout.offset + l];
            }
        }
    }
    Ok(Predictions {
        phi: eta_z.iter().map(|&e| expit(e)).collect(),
        mu: eta_c.iter().map(|&e| e.exp()).collect(),
    })
}

fn build_frame_unchecked_levels(data: &Dataset, spec: &ModelSpec) -> Result<ModelFrame> {
    let mut fixed = spec.clone();
    fixed.cond_factors.clear();
    fixed.zi_factors.clear();
    fixed.observation_effect = false;
    build_frame(data, &fixed)
}
