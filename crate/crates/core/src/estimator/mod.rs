//! Maximum-likelihood fitting of count models with crossed random intercepts.
//!
//! Random effects are integrated out with a Laplace approximation (see
//! [`laplace_marginal_nll`]); structural parameters are found by BFGS on the
//! resulting marginal objective using its exact gradient. Standard errors come
//! from a central-difference Hessian of that objective at the optimum.

pub mod bfgs;
mod init;
pub(crate) mod kernel;
mod laplace;
pub mod wald;

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use laplace::{Evaluation, InnerOptions};
pub use wald::{irr, significance_stars, wald_table, CoefficientRow, CoefficientTable};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::frame::{build_frame, linear_predictors, BlockLayout, ModelFrame, ModelSpec, Predictions};
use crate::stats::normal_two_sided_p;
use laplace::Engine;

/// Estimated standard deviation below which a variance component is flagged.
pub const BOUNDARY_SD: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative gradient tolerance for the outer optimizer.
    pub tol: f64,
    pub seed: u64,
    /// Extra randomly perturbed starts.
    pub restarts: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub compute_se: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-5,
            seed: 0,
            restarts: 1,
            inner_tol: 1e-8,
            inner_max_iter: 100,
            compute_se: true,
        }
    }
}

impl FitOptions {
    fn inner(&self) -> InnerOptions {
        InnerOptions {
            tol: self.inner_tol,
            max_iter: self.inner_max_iter,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFlags {
    /// Per random-effect block: estimated SD below [`BOUNDARY_SD`].
    pub variance_components: Vec<bool>,
    /// Every fitted structural-zero probability is numerically one.
    pub zero_inflation_saturated: bool,
}

impl BoundaryFlags {
    pub fn any(&self) -> bool {
        self.zero_inflation_saturated || self.variance_components.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub label: String,
    pub spec: ModelSpec,
    pub param_names: Vec<String>,
    pub theta_hat: Vec<f64>,
    pub se: Vec<Option<f64>>,
    pub z: Vec<Option<f64>>,
    pub p: Vec<Option<f64>>,
    pub log_lik: f64,
    pub k: usize,
    pub n: usize,
    pub data_checksum: String,
    pub converged: bool,
    /// Final gradient max-norm, measured on the internally scaled design.
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub message: String,
    pub hessian_singular: bool,
    pub re_blocks: Vec<BlockLayout>,
    pub re_modes: Vec<f64>,
    pub boundary: BoundaryFlags,
}

impl FitResult {
    pub fn aic(&self) -> f64 {
        crate::select::aic(self.log_lik, self.k)
    }

    pub fn bic(&self) -> f64 {
        crate::select::bic(self.log_lik, self.k, self.n)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.param_names.iter().position(|p| p == name).map(|i| self.theta_hat[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.param_names.iter().position(|p| p == name).and_then(|i| self.se[i])
    }

    /// Fitted `(phi, mu)` per observation of `frame`.
    pub fn fitted(&self, frame: &ModelFrame) -> Result<Predictions> {
        linear_predictors(frame, &self.theta_hat, &self.re_modes)
    }
}

/// Joint negative log-density of the data and the random effects.
pub fn joint_nll(frame: &ModelFrame, theta: &[f64], u: &[f64]) -> Result<f64> {
    frame.layout.check_len(theta)?;
    frame.check_random_effects(u)?;
    Engine::new(frame, InnerOptions::default()).joint(theta, u)
}

/// Laplace-approximated marginal negative log-likelihood and the random-effect
/// modes it was expanded around. Requires at least one random-effect block.
pub fn laplace_marginal_nll(frame: &ModelFrame, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    if !frame.has_random_effects() {
        return Err(Error::Contract("Laplace approximation needs a random-effect block".into()));
    }
    let ev = Engine::new(frame, InnerOptions::default()).evaluate(theta, None, false)?;
    Ok((ev.value, ev.modes))
}

/// Marginal negative log-likelihood: exact without random effects, Laplace otherwise.
pub fn marginal_nll(frame: &ModelFrame, theta: &[f64]) -> Result<f64> {
    Ok(Engine::new(frame, InnerOptions::default()).evaluate(theta, None, false)?.value)
}

/// Marginal negative log-likelihood and its gradient.
pub fn marginal_nll_gradient(frame: &ModelFrame, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let ev = Engine::new(frame, InnerOptions::default()).evaluate(theta, None, true)?;
    Ok((ev.value, ev.gradient.expect("requested")))
}

/// Evaluates the marginal objective with a warm-started inner problem.
struct Objective<'a> {
    engine: Engine<'a>,
    warm: RefCell<Vec<f64>>,
    evaluations: RefCell<usize>,
}

impl<'a> Objective<'a> {
    fn new(frame: &'a ModelFrame, opts: &FitOptions) -> Self {
        Self {
            engine: Engine::new(frame, opts.inner()),
            warm: RefCell::new(Vec::new()),
            evaluations: RefCell::new(0),
        }
    }

    fn eval(&self, theta: &[f64], want_grad: bool) -> Result<Evaluation> {
        *self.evaluations.borrow_mut() += 1;
        let start = self.warm.borrow().clone();
        let result = match self.engine.evaluate(theta, Some(&start), want_grad) {
            Ok(ev) => Ok(ev),
            Err(_) if !start.is_empty() => self.engine.evaluate(theta, None, want_grad),
            Err(e) => Err(e),
        };
        if let Ok(ev) = &result {
            if !ev.modes.is_empty() {
                *self.warm.borrow_mut() = ev.modes.clone();
            }
        }
        result
    }

    fn value_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.eval(theta, true)
            .ok()
            .map(|ev| (ev.value, ev.gradient.expect("requested")))
    }
}

fn perturbed_start(frame: &ModelFrame, theta0: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let l = &frame.layout;
    let fixed = Normal::new(0.0, 0.3).expect("valid");
    let scale = Normal::new(0.0, 0.5).expect("valid");
    let mut t = theta0.to_vec();
    for i in l.cond_fixed.clone().chain(l.zi_fixed.clone()) {
        t[i] += fixed.sample(rng);
    }
    for i in l.log_alpha.iter().chain(&l.log_sd) {
        t[*i] += scale.sample(rng);
    }
    t
}

/// Central-difference Hessian of the marginal objective, built from its gradient.
fn numerical_hessian(obj: &Objective<'_>, theta: &[f64]) -> Option<DMatrix<f64>> {
    let k = theta.len();
    let mut h = DMatrix::zeros(k, k);
    for j in 0..k {
        let step = 1e-4 * (1.0 + theta[j].abs());
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[j] += step;
        tm[j] -= step;
        let gp = obj.value_grad(&tp)?.1;
        let gm = obj.value_grad(&tm)?.1;
        for i in 0..k {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let sym = (&h + h.transpose()) * 0.5;
    Some(sym)
}

/// Inverse of the observed information, or `None` if it is not positive definite.
fn covariance(hess: Option<DMatrix<f64>>) -> Option<DMatrix<f64>> {
    let inv = hess?.cholesky()?.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

/// Centring and scaling of the non-intercept design columns. The optimizer
/// works on the scaled design; estimates are mapped back afterwards.
struct DesignScaling {
    /// `(offset, scale)` per column of each design, intercept first.
    cond: Vec<(f64, f64)>,
    zi: Vec<(f64, f64)>,
}

fn column_scales(x: &[f64], width: usize) -> Vec<(f64, f64)> {
    if width == 0 {
        return Vec::new();
    }
    let n = x.len() / width;
    let mut out = vec![(0.0, 1.0)];
    for j in 1..width {
        let col = || (0..n).map(|i| x[i * width + j]);
        let mean = col().sum::<f64>() / n as f64;
        let sd = (col().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        out.push(if sd > 0.0 && sd.is_finite() { (mean, sd) } else { (0.0, 1.0) });
    }
    out
}

fn rescale(x: &mut [f64], width: usize, scales: &[(f64, f64)]) {
    for row in x.chunks_mut(width.max(1)) {
        for (v, &(m, s)) in row.iter_mut().zip(scales).skip(1) {
            *v = (*v - m) / s;
        }
    }
}

impl DesignScaling {
    fn new(frame: &ModelFrame) -> Self {
        Self {
            cond: column_scales(&frame.x_cond, frame.cond_width),
            zi: column_scales(&frame.x_zi, frame.zi_width),
        }
    }

    fn apply(&self, frame: &ModelFrame) -> ModelFrame {
        let mut scaled = frame.clone();
        rescale(&mut scaled.x_cond, frame.cond_width, &self.cond);
        rescale(&mut scaled.x_zi, frame.zi_width, &self.zi);
        scaled
    }

    /// Linear map from scaled-design parameters to raw-design parameters.
    fn jacobian(&self, frame: &ModelFrame) -> DMatrix<f64> {
        let l = &frame.layout;
        let mut a = DMatrix::identity(l.k(), l.k());
        for (range, scales) in [(l.cond_fixed.clone(), &self.cond), (l.zi_fixed.clone(), &self.zi)] {
            let start = range.start;
            for (j, &(m, s)) in scales.iter().enumerate().skip(1) {
                a[(start + j, start + j)] = 1.0 / s;
                a[(start, start + j)] = -m / s;
            }
        }
        a
    }
}

pub fn fit(data: &Dataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    fit_labeled(data, spec, opts, "")
}

pub fn fit_labeled(data: &Dataset, spec: &ModelSpec, opts: &FitOptions, label: &str) -> Result<FitResult> {
    let frame = build_frame(data, spec)?;
    fit_frame(&frame, opts, label)
}

pub fn fit_frame(frame: &ModelFrame, opts: &FitOptions, label: &str) -> Result<FitResult> {
    let n = frame.n();
    if n == 0 {
        return Err(Error::Data("cannot fit an empty dataset".into()));
    }
    if frame.spec.family.zero_inflated() && !frame.y.contains(&0) {
        return Err(Error::Data(
            "zero-inflated model requires at least one zero response".into(),
        ));
    }
    let scaling = DesignScaling::new(frame);
    let scaled = scaling.apply(frame);
    let theta0 = init::initial_parameters(&scaled)?;
    let bopts = bfgs::BfgsOptions {
        max_iter: opts.max_iter,
        tol: opts.tol,
        ..Default::default()
    };
    let obj = Objective::new(&scaled, opts);

    let mut starts = vec![theta0.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        starts.push(perturbed_start(&scaled, &theta0, &mut rng));
    }
    let mut best: Option<bfgs::BfgsOutcome> = None;
    for start in &starts {
        obj.warm.borrow_mut().clear();
        let Some(out) = bfgs::minimize(|t| obj.value_grad(t), start, &bopts) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some(b) => (out.converged && !b.converged) || (out.converged == b.converged && out.f < b.f),
        };
        if better {
            best = Some(out);
        }
    }
    let best = best.ok_or_else(|| {
        Error::Estimation("objective could not be evaluated at any starting point".into())
    })?;

    obj.warm.borrow_mut().clear();
    let final_eval = obj.eval(&best.x, false)?;
    let warm = final_eval.modes.clone();
    let k = frame.layout.k();
    let a = scaling.jacobian(frame);
    let theta_hat: Vec<f64> = (&a * DVector::from_column_slice(&best.x)).iter().copied().collect();
    let (se, singular) = if opts.compute_se {
        match covariance(numerical_hessian(&obj, &best.x)) {
            Some(cov) => {
                let raw = &a * cov * a.transpose();
                let se = (0..k)
                    .map(|i| {
                        let v = raw[(i, i)];
                        (v > 0.0 && v.is_finite()).then(|| v.sqrt())
                    })
                    .collect();
                (se, false)
            }
            None => (vec![None; k], true),
        }
    } else {
        (vec![None; k], false)
    };
    *obj.warm.borrow_mut() = warm;

    let z: Vec<Option<f64>> = theta_hat
        .iter()
        .zip(&se)
        .map(|(&est, s)| s.map(|s| est / s))
        .collect();
    let p = z.iter().map(|z| z.map(normal_two_sided_p)).collect();

    let layout = &frame.layout;
    let variance_components = layout
        .log_sd
        .iter()
        .map(|&i| theta_hat[i].exp() < BOUNDARY_SD)
        .collect();
    let pred = linear_predictors(&scaled, &best.x, &final_eval.modes)?;
    let zero_inflation_saturated =
        frame.spec.family.zero_inflated() && pred.phi.iter().all(|&p| p > 1.0 - 1e-3);

    let evaluations = *obj.evaluations.borrow();
    Ok(FitResult {
        label: label.to_string(),
        spec: frame.spec.clone(),
        param_names: layout.names.clone(),
        theta_hat,
        se,
        z,
        p,
        log_lik: -final_eval.value,
        k,
        n,
        data_checksum: frame.checksum.clone(),
        converged: best.converged,
        grad_norm: best.grad_norm,
        iterations: best.iterations,
        evaluations,
        message: best.message,
        hessian_singular: singular,
        re_blocks: layout.blocks.clone(),
        re_modes: final_eval.modes,
        boundary: BoundaryFlags {
            variance_components,
            zero_inflation_saturated,
        },
    })
}
