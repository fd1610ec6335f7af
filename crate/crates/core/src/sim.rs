//! Synthetic data from the full generative model, brute-force likelihood
//! oracles, and parameter-recovery experiments.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Covariate, Dataset, Factor};
use crate::dist::{expit, log_add_exp, nb_log_pmf, zinb_log_pmf, NbParams, ZinbParams};
use crate::error::{Error, Result};
use crate::estimator::{fit, FitOptions};
use crate::frame::{BlockLayout, Family, ModelFrame, ModelSpec, ParameterLayout, Part};

/// Inflation intercept standing in for a structural-zero probability of one.
pub const SATURATED_LOGIT: f64 = 30.0;

/// Generating parameters on their natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    /// Intercept followed by one slope per conditional covariate.
    pub cond: Vec<f64>,
    /// Intercept followed by one slope per inflation covariate.
    #[serde(default)]
    pub zi: Vec<f64>,
    /// NB dispersion; ignored by Poisson-type families.
    #[serde(default)]
    pub alpha: f64,
    /// One standard deviation per conditional random-effect factor.
    #[serde(default)]
    pub sd_cond: Vec<f64>,
    /// One standard deviation per inflation random-effect factor.
    #[serde(default)]
    pub sd_zi: Vec<f64>,
    #[serde(default)]
    pub sd_observation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n: usize,
    #[serde(default = "default_response")]
    pub response: String,
    pub model: ModelSpec,
    /// Levels per grouping factor; factors not used by `model` are still generated.
    #[serde(default)]
    pub levels: BTreeMap<String, usize>,
    /// Covariates drawn as Bernoulli(0.5) instead of standard normal.
    #[serde(default)]
    pub binary_covariates: Vec<String>,
    pub truth: Truth,
    /// Expected number of nonzero responses; the inflation intercept is
    /// recalibrated to hit it.
    #[serde(default)]
    pub target_nonzero: Option<f64>,
}

fn default_response() -> String {
    "y".to_string()
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid simulation config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read `{}`: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.check()?;
        if self.n == 0 {
            return Err(Error::Config("simulation needs n >= 1".into()));
        }
        for f in self.model.cond_factors.iter().chain(&self.model.zi_factors) {
            match self.levels.get(f) {
                Some(&l) if l >= 1 => {}
                _ => return Err(Error::Config(format!("factor `{f}` needs a positive level count"))),
            }
        }
        if self.levels.values().any(|&l| l == 0) {
            return Err(Error::Config("level counts must be positive".into()));
        }
        let t = &self.truth;
        let fam = self.model.family;
        if t.cond.len() != self.model.cond_covariates.len() + 1 {
            return Err(Error::Config(format!(
                "truth.cond needs {} values",
                self.model.cond_covariates.len() + 1
            )));
        }
        let zi_len = if fam.zero_inflated() { self.model.zi_covariates.len() + 1 } else { 0 };
        if t.zi.len() != zi_len {
            return Err(Error::Config(format!("truth.zi needs {zi_len} values")));
        }
        if fam.has_dispersion() && !(t.alpha > 0.0 && t.alpha.is_finite()) {
            return Err(Error::Config("truth.alpha must be positive".into()));
        }
        if t.sd_cond.len() != self.model.cond_factors.len() || t.sd_zi.len() != self.model.zi_factors.len() {
            return Err(Error::Config("one standard deviation is needed per random-effect factor".into()));
        }
        let sds = t.sd_cond.iter().chain(&t.sd_zi).chain(std::iter::once(&t.sd_observation));
        if sds.clone().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("standard deviations must be finite and non-negative".into()));
        }
        if self.target_nonzero.is_some() && !fam.zero_inflated() {
            return Err(Error::Config("target_nonzero requires a zero-inflated family".into()));
        }
        if let Some(t) = self.target_nonzero {
            if !(t > 0.0 && t < self.n as f64) {
                return Err(Error::Config("target_nonzero must lie strictly between 0 and n".into()));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    fn covariate_names(&self) -> Vec<String> {
        let mut names = self.model.cond_covariates.clone();
        for c in &self.model.zi_covariates {
            if !names.contains(c) {
                names.push(c.clone());
            }
        }
        names
    }

    fn blocks(&self) -> Vec<(BlockLayout, f64)> {
        let mut out = Vec::new();
        let mut offset = 0;
        let t = &self.truth;
        for (part, names, sds) in [
            (Part::Cond, &self.model.cond_factors, &t.sd_cond),
            (Part::Zi, &self.model.zi_factors, &t.sd_zi),
        ] {
            for (f, &sd) in names.iter().zip(sds) {
                let n_levels = self.levels[f];
                out.push((BlockLayout { factor: f.clone(), part, n_levels, offset }, sd));
                offset += n_levels;
            }
        }
        if self.model.observation_effect {
            let b = BlockLayout {
                factor: crate::frame::OBSERVATION_BLOCK.to_string(),
                part: Part::Cond,
                n_levels: self.n,
                offset,
            };
            out.push((b, t.sd_observation));
        }
        out
    }

    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout::new(
            self.model.family,
            &self.model.cond_covariates,
            &self.model.zi_covariates,
            self.blocks().into_iter().map(|(b, _)| b).collect(),
        )
    }

    /// True structural parameter vector in the fitting parameterization,
    /// before any `target_nonzero` recalibration.
    pub fn true_theta(&self) -> Vec<f64> {
        let t = &self.truth;
        let mut v = t.cond.clone();
        v.extend(&t.zi);
        if self.model.family.has_dispersion() {
            v.push(t.alpha.ln());
        }
        v.extend(self.blocks().iter().map(|(_, sd)| sd.ln()));
        v
    }
}

/// A simulated dataset with the values that generated it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: Dataset,
    /// True parameters, including a recalibrated inflation intercept.
    pub theta: Vec<f64>,
    /// Realized random effects in layout order.
    pub random_effects: Vec<f64>,
}

fn level_label(factor: &str, j: usize) -> String {
    format!("{factor}_{:02}", j + 1)
}

/// Expected nonzero count for a given inflation intercept shift.
fn expected_nonzero(eta_c: &[f64], eta_z: &[f64], shift: f64, family: Family, alpha: f64) -> f64 {
    eta_c
        .iter()
        .zip(eta_z)
        .map(|(&ec, &ez)| {
            let mu = ec.exp();
            let p0 = if family.has_dispersion() {
                (-(alpha * mu).ln_1p() / alpha).exp()
            } else {
                (-mu).exp()
            };
            (1.0 - expit(ez + shift)) * (1.0 - p0)
        })
        .sum()
}

pub fn simulate(cfg: &SimConfig) -> Result<Simulation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let blocks = cfg.blocks();

    let mut u = Vec::new();
    for (b, sd) in &blocks {
        for _ in 0..b.n_levels {
            let z: f64 = rng.sample(StandardNormal);
            u.push(sd * z);
        }
    }

    let mut codes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (name, &l) in &cfg.levels {
        codes.insert(name, (0..n).map(|_| rng.random_range(0..l)).collect());
    }

    let coin = Bernoulli::new(0.5).expect("valid");
    let covariates: Vec<Covariate> = cfg
        .covariate_names()
        .into_iter()
        .map(|name| {
            let binary = cfg.binary_covariates.contains(&name);
            let values = (0..n)
                .map(|_| {
                    if binary {
                        f64::from(u8::from(coin.sample(&mut rng)))
                    } else {
                        rng.sample(StandardNormal)
                    }
                })
                .collect();
            Covariate { name, values }
        })
        .collect();
    let column = |name: &str| &covariates.iter().find(|c| c.name == name).expect("generated").values;

    let fam = cfg.model.family;
    let t = &cfg.truth;
    let mut eta_c = vec![t.cond[0]; n];
    for (c, &b) in cfg.model.cond_covariates.iter().zip(&t.cond[1..]) {
        for (e, x) in eta_c.iter_mut().zip(column(c)) {
            *e += b * x;
        }
    }
    let mut eta_z = vec![f64::NEG_INFINITY; n];
    if fam.zero_inflated() {
        eta_z.fill(t.zi[0]);
        for (c, &g) in cfg.model.zi_covariates.iter().zip(&t.zi[1..]) {
            for (e, x) in eta_z.iter_mut().zip(column(c)) {
                *e += g * x;
            }
        }
    }
    for (b, _) in &blocks {
        let eta = match b.part {
            Part::Cond => &mut eta_c,
            Part::Zi => &mut eta_z,
        };
        if b.factor == crate::frame::OBSERVATION_BLOCK {
            for (i, e) in eta.iter_mut().enumerate() {
                *e += u[b.offset + i];
            }
        } else {
            for (e, &j) in eta.iter_mut().zip(&codes[b.factor.as_str()]) {
                *e += u[b.offset + j];
            }
        }
    }

    let mut theta = cfg.true_theta();
    if let Some(target) = cfg.target_nonzero {
        let f = |s: f64| expected_nonzero(&eta_c, &eta_z, s, fam, t.alpha) - target;
        let (mut lo, mut hi) = (-60.0, 60.0);
        if f(lo) < 0.0 || f(hi) > 0.0 {
            return Err(Error::Config(format!("target_nonzero {target} is unreachable")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let shift = 0.5 * (lo + hi);
        for e in &mut eta_z {
            *e += shift;
        }
        theta[cfg.model.cond_covariates.len() + 1] += shift;
    }

    let mut response = Vec::with_capacity(n);
    for i in 0..n {
        let structural = fam.zero_inflated() && rng.random::<f64>() < expit(eta_z[i]);
        let mu = eta_c[i].exp();
        if !mu.is_finite() {
            return Err(Error::Overflow { index: i });
        }
        let lambda = if fam.has_dispersion() {
            Gamma::new(1.0 / t.alpha, t.alpha * mu)
                .map_err(|e| Error::Domain(e.to_string()))?
                .sample(&mut rng)
        } else {
            mu
        };
        let y = if lambda > 0.0 {
            Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?.sample(&mut rng) as u64
        } else {
            0
        };
        response.push(if structural { 0 } else { y });
    }

    let factors = codes
        .iter()
        .map(|(name, c)| {
            let labels: Vec<String> = c.iter().map(|&j| level_label(name, j)).collect();
            Factor::from_labels(name, &labels)
        })
        .collect();
    let data = Dataset::new(cfg.response.clone(), response, covariates, factors)?;
    Ok(Simulation { data, theta, random_effects: u })
}

pub fn simulate_dataset(cfg: &SimConfig) -> Result<Dataset> {
    Ok(simulate(cfg)?.data)
}

/// Gauss–Hermite nodes and weights for the weight function `exp(-x^2)`.
pub fn gauss_hermite(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let n = nodes;
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-14 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Per-observation negative log-likelihood straight from the pmf.
fn obs_nll(family: Family, y: u64, eta_c: f64, eta_z: f64, alpha: f64) -> Result<f64> {
    let nb = NbParams::new(eta_c.exp(), if family.has_dispersion() { alpha } else { 0.0 })?;
    let v = if family.zero_inflated() {
        zinb_log_pmf(y, ZinbParams::new(expit(eta_z), nb)?)?
    } else {
        nb_log_pmf(y, nb)?
    };
    Ok(-v)
}

/// One random-intercept group: its observations and how `u` enters them.
struct Group {
    rows: Vec<usize>,
}

struct SingleBlock<'a> {
    frame: &'a ModelFrame,
    part: Part,
    sd: f64,
    alpha: f64,
    eta_c: Vec<f64>,
    eta_z: Vec<f64>,
    groups: Vec<Group>,
}

impl<'a> SingleBlock<'a> {
    fn new(frame: &'a ModelFrame, theta: &[f64]) -> Result<Self> {
        frame.layout.check_len(theta)?;
        if frame.blocks.len() != 1 {
            return Err(Error::Unsupported(format!(
                "likelihood oracle needs exactly one random-effect block, frame has {}",
                frame.blocks.len()
            )));
        }
        let block = &frame.blocks[0];
        let (eta_c, eta_z) = frame.fixed_predictors(theta);
        let mut groups: Vec<Group> = (0..block.layout.n_levels).map(|_| Group { rows: Vec::new() }).collect();
        for (i, &l) in block.levels.iter().enumerate() {
            groups[l as usize].rows.push(i);
        }
        Ok(Self {
            frame,
            part: block.layout.part,
            sd: theta[frame.layout.log_sd[0]].exp(),
            alpha: frame.layout.log_alpha.map(|i| theta[i].exp()).unwrap_or(0.0),
            eta_c,
            eta_z,
            groups,
        })
    }

    /// Data negative log-likelihood of one group at random effect `u`.
    fn data_nll(&self, g: &Group, u: f64) -> Result<f64> {
        let fam = self.frame.spec.family;
        let mut s = 0.0;
        for &i in &g.rows {
            let (ec, ez) = match self.part {
                Part::Cond => (self.eta_c[i] + u, self.eta_z[i]),
                Part::Zi => (self.eta_c[i], self.eta_z[i] + u),
            };
            s += obs_nll(fam, self.frame.y[i], ec, ez, self.alpha)?;
        }
        Ok(s)
    }

    fn objective(&self, g: &Group, u: f64) -> Result<f64> {
        Ok(self.data_nll(g, u)? + 0.5 * (u / self.sd).powi(2))
    }

    /// Posterior mode of a group's random effect by golden-section search.
    fn mode(&self, g: &Group) -> Result<f64> {
        // nll >= 0 bounds the mode: |u| <= sd * sqrt(2 h(0)).
        let h0 = self.objective(g, 0.0)?;
        let bound = self.sd * ((2.0 * h0).sqrt() + 1.0);
        let (mut a, mut b) = (-bound, bound);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let (mut fc, mut fd) = (self.objective(g, c)?, self.objective(g, d)?);
        for _ in 0..400 {
            if (b - a).abs() <= 1e-12 * (1.0 + c.abs()) {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = self.objective(g, c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = self.objective(g, d)?;
            }
        }
        Ok(0.5 * (a + b))
    }

    /// Posterior scale at the mode from a central second difference.
    fn scale(&self, g: &Group, mode: f64) -> Result<f64> {
        let mut s = self.sd;
        for _ in 0..2 {
            let d = 1e-3 * s;
            let f0 = self.objective(g, mode)?;
            let curv = (self.objective(g, mode + d)? - 2.0 * f0 + self.objective(g, mode - d)?) / (d * d);
            if curv > 0.0 && curv.is_finite() {
                s = 1.0 / curv.sqrt();
            }
        }
        Ok(s)
    }

    fn prior_norm(&self) -> f64 {
        0.5 * (2.0 * std::f64::consts::PI).ln() + self.sd.ln()
    }
}

/// Marginal negative log-likelihood by adaptive Gauss–Hermite quadrature,
/// centred and scaled at each group's posterior mode. Single block only.
pub fn quadrature_marginal_nll(frame: &ModelFrame, theta: &[f64], nodes: usize) -> Result<f64> {
    if nodes < 16 {
        return Err(Error::Contract("quadrature needs at least 16 nodes".into()));
    }
    let sb = SingleBlock::new(frame, theta)?;
    let (x, w) = gauss_hermite(nodes);
    let mut total = 0.0;
    for g in &sb.groups {
        if g.rows.is_empty() {
            continue;
        }
        let m = sb.mode(g)?;
        let s = sb.scale(g, m)?;
        let hm = sb.objective(g, m)?;
        let mut acc = f64::NEG_INFINITY;
        for (&xk, &wk) in x.iter().zip(&w) {
            let u = m + std::f64::consts::SQRT_2 * s * xk;
            let term = wk.ln() + xk * xk - (sb.objective(g, u)? - hm);
            acc = log_add_exp(acc, term);
        }
        let log_integral = -hm + (std::f64::consts::SQRT_2 * s).ln() + acc;
        total += sb.prior_norm() - log_integral;
    }
    Ok(total)
}

/// Marginal negative log-likelihood by the trapezoid rule on `[-8 sd, 8 sd]`.
/// Single block only.
pub fn grid_marginal_nll(frame: &ModelFrame, theta: &[f64], points: usize) -> Result<f64> {
    if points < 3 {
        return Err(Error::Contract("grid needs at least 3 points".into()));
    }
    let sb = SingleBlock::new(frame, theta)?;
    let lo = -8.0 * sb.sd;
    let h = 16.0 * sb.sd / (points - 1) as f64;
    let mut total = 0.0;
    for g in &sb.groups {
        if g.rows.is_empty() {
            continue;
        }
        let vals: Vec<f64> = (0..points)
            .map(|k| sb.objective(g, lo + k as f64 * h).map(|v| -v))
            .collect::<Result<_>>()?;
        let peak = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = vals
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let wt = if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
                wt * (v - peak).exp()
            })
            .sum();
        total += sb.prior_norm() - (peak + (sum * h).ln());
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterRecovery {
    pub name: String,
    /// Mean true value across replicates.
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Standard deviation of the estimates across replicates.
    pub empirical_se: f64,
    pub mean_se: f64,
    /// Share of 95% Wald intervals containing the truth.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub replicates: usize,
    pub failures: usize,
    pub parameters: Vec<ParameterRecovery>,
}

impl RecoveryReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterRecovery> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

struct Replicate {
    truth: Vec<f64>,
    estimate: Vec<f64>,
    se: Vec<f64>,
}

fn run_replicate(cfg: &SimConfig, opts: &FitOptions) -> Option<Replicate> {
    let sim = simulate(cfg).ok()?;
    let result = fit(&sim.data, &cfg.model, opts).ok()?;
    if !result.converged {
        return None;
    }
    let se: Option<Vec<f64>> = result.se.iter().copied().collect();
    Some(Replicate {
        truth: sim.theta,
        estimate: result.theta_hat,
        se: se?,
    })
}

/// Simulates and refits `replicates` datasets with seeds `seed + i`.
/// Replicates whose fit fails, does not converge, or lacks standard errors
/// are excluded and counted; more than 5% failures is an error.
pub fn recovery_experiment(cfg: &SimConfig, replicates: usize, opts: &FitOptions) -> Result<RecoveryReport> {
    if replicates < 50 {
        return Err(Error::Contract("recovery experiment needs at least 50 replicates".into()));
    }
    cfg.validate()?;
    let runs: Vec<Option<Replicate>> = (0..replicates)
        .into_par_iter()
        .map(|i| run_replicate(&cfg.with_seed(cfg.seed.wrapping_add(i as u64)), opts))
        .collect();
    let ok: Vec<&Replicate> = runs.iter().flatten().collect();
    let failures = replicates - ok.len();
    if failures as f64 > 0.05 * replicates as f64 {
        return Err(Error::Estimation(format!(
            "{failures} of {replicates} replicate fits failed"
        )));
    }
    let z = 1.959_963_984_540_054;
    let m = ok.len() as f64;
    let names = cfg.layout().names;
    let parameters = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let truth = ok.iter().map(|r| r.truth[j]).sum::<f64>() / m;
            let mean_estimate = ok.iter().map(|r| r.estimate[j]).sum::<f64>() / m;
            let bias = ok.iter().map(|r| r.estimate[j] - r.truth[j]).sum::<f64>() / m;
            let var = ok.iter().map(|r| (r.estimate[j] - mean_estimate).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            let mean_se = ok.iter().map(|r| r.se[j]).sum::<f64>() / m;
            let covered = ok
                .iter()
                .filter(|r| (r.estimate[j] - r.truth[j]).abs() <= z * r.se[j])
                .count();
            ParameterRecovery {
                name,
                truth,
                mean_estimate,
                bias,
                empirical_se: var.sqrt(),
                mean_se,
                coverage: covered as f64 / m,
            }
        })
        .collect();
    Ok(RecoveryReport {
        replicates,
        failures,
        parameters,
    })
}
