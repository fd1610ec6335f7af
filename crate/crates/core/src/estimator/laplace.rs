//! Marginal negative log-likelihood with random effects integrated out by the
//! Laplace approximation, and its exact gradient with respect to the
//! structural parameters.
//!
//! The inner Hessian over random effects is stored in block form
//! `[[D, B], [Bᵀ, C]]`, where `D` is the (diagonal) self-block of the largest
//! random-effect factor. Every observation touches exactly one level per
//! block, so `D` is always diagonal and the dense part is limited to the
//! remaining levels.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::kernel::{obs_jet, obs_value, ObsDerivs, C, T, Z};
use crate::error::{Error, Result};
use crate::frame::ModelFrame;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy)]
pub struct InnerOptions {
    /// Max-norm of the inner gradient at convergence.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Result of one marginal-likelihood evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
    /// Posterior modes of the random effects (empty without blocks).
    pub modes: Vec<f64>,
    pub inner_iterations: usize,
}

/// Where each random-effect slot lives in the block-partitioned Hessian.
#[derive(Debug, Clone, Copy)]
enum Slot {
    Diag(usize),
    Dense(usize),
}

struct ThetaView {
    tau: f64,
    inv_var: Vec<f64>,
    log_sd: Vec<f64>,
}

pub(crate) struct Engine<'a> {
    frame: &'a ModelFrame,
    slots: Vec<Slot>,
    n_diag: usize,
    n_dense: usize,
    inner: InnerOptions,
}

struct Assembly {
    derivs: Vec<ObsDerivs>,
    grad: Vec<f64>,
    diag: Vec<f64>,
    cross: DMatrix<f64>,
    dense: DMatrix<f64>,
}

struct Factorized {
    dinv: Vec<f64>,
    /// `D⁻¹ B`
    e: DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    logdet: f64,
}

impl Factorized {
    fn solve(&self, rhs: &[f64], slots: &[Slot], n_dense: usize) -> Vec<f64> {
        let mut r_d = vec![0.0; self.dinv.len()];
        let mut r_c = DVector::zeros(n_dense);
        for (g, s) in slots.iter().enumerate() {
            match *s {
                Slot::Diag(p) => r_d[p] = rhs[g],
                Slot::Dense(p) => r_c[p] = rhs[g],
            }
        }
        let x_c = match &self.chol {
            Some(ch) => {
                // S x_c = r_c − Bᵀ D⁻¹ r_d = r_c − Eᵀ r_d
                let rd = DVector::from_column_slice(&r_d);
                let rhs_c = &r_c - self.e.transpose() * &rd;
                ch.solve(&rhs_c)
            }
            None => DVector::zeros(0),
        };
        let mut x_d = vec![0.0; r_d.len()];
        for (p, x) in x_d.iter_mut().enumerate() {
            let mut s = r_d[p] * self.dinv[p];
            for c in 0..n_dense {
                s -= self.e[(p, c)] * x_c[c];
            }
            *x = s;
        }
        slots
            .iter()
            .map(|s| match *s {
                Slot::Diag(p) => x_d[p],
                Slot::Dense(p) => x_c[p],
            })
            .collect()
    }
}

impl<'a> Engine<'a> {
    pub(crate) fn new(frame: &'a ModelFrame, inner: InnerOptions) -> Self {
        let blocks = &frame.layout.blocks;
        let diag_block = blocks
            .iter()
            .enumerate()
            .max_by_key(|(i, b)| (b.n_levels, usize::MAX - i))
            .map(|(i, _)| i);
        let mut slots = Vec::with_capacity(frame.layout.n_random());
        let (mut nd, mut nc) = (0, 0);
        for (bi, b) in blocks.iter().enumerate() {
            for _ in 0..b.n_levels {
                if Some(bi) == diag_block {
                    slots.push(Slot::Diag(nd));
                    nd += 1;
                } else {
                    slots.push(Slot::Dense(nc));
                    nc += 1;
                }
            }
        }
        Self {
            frame,
            slots,
            n_diag: nd,
            n_dense: nc,
            inner,
        }
    }

    fn view(&self, theta: &[f64]) -> ThetaView {
        let l = &self.frame.layout;
        let tau = l.log_alpha.map(|i| theta[i]).unwrap_or(f64::NEG_INFINITY);
        let log_sd: Vec<f64> = l.log_sd.iter().map(|&i| theta[i]).collect();
        let inv_var = log_sd.iter().map(|s| (-2.0 * s).exp()).collect();
        ThetaView {
            tau,
            inv_var,
            log_sd,
        }
    }

    fn predictors(&self, base: &(Vec<f64>, Vec<f64>), u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut ec, mut ez) = base.clone();
        self.frame.add_random_effects(u, &mut ec, &mut ez);
        (ec, ez)
    }

    fn data_value(&self, ec: &[f64], ez: &[f64], tau: f64) -> Result<f64> {
        let f = self.frame;
        let fam = f.spec.family;
        let n = f.n();
        let partial: Vec<(f64, Option<usize>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut s = 0.0;
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let v = obs_value(f.y[i], ec[i], ez[i], tau, fam);
                    if !v.is_finite() {
                        return (f64::NAN, Some(i));
                    }
                    s += v;
                }
                (s, None)
            })
            .collect();
        let mut total = 0.0;
        for (s, bad) in partial {
            if let Some(index) = bad {
                return Err(Error::Overflow { index });
            }
            total += s;
        }
        Ok(total)
    }

    fn derivs(&self, ec: &[f64], ez: &[f64], tau: f64) -> Result<Vec<ObsDerivs>> {
        let f = self.frame;
        let fam = f.spec.family;
        let d: Vec<ObsDerivs> = (0..f.n())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| obs_jet(f.y[i], ec[i], ez[i], tau, fam))
            .collect();
        if let Some(index) = d.iter().position(|o| !o.v.is_finite() || !o.g.iter().all(|g| g.is_finite())) {
            return Err(Error::Overflow { index });
        }
        Ok(d)
    }

    fn prior_value(&self, u: &[f64], view: &ThetaView) -> f64 {
        let mut s = 0.0;
        for (b, blk) in self.frame.layout.blocks.iter().enumerate() {
            for &x in &u[blk.range()] {
                s += 0.5 * x * x * view.inv_var[b] + view.log_sd[b] + HALF_LN_2PI;
            }
        }
        s
    }

    #[inline]
    fn obs_slots(&self, i: usize, out: &mut Vec<(usize, usize)>) {
        out.clear();
        for b in &self.frame.blocks {
            out.push((b.layout.offset + b.levels[i] as usize, b.layout.part.index()));
        }
    }

    fn assemble(&self, derivs: Vec<ObsDerivs>, u: &[f64], view: &ThetaView) -> Assembly {
        let q = self.slots.len();
        let mut grad = vec![0.0; q];
        let mut diag = vec![0.0; self.n_diag];
        let mut cross = DMatrix::zeros(self.n_diag, self.n_dense);
        let mut dense = DMatrix::zeros(self.n_dense, self.n_dense);
        let mut touched = Vec::with_capacity(self.frame.blocks.len());
        for (i, d) in derivs.iter().enumerate() {
            self.obs_slots(i, &mut touched);
            for &(g1, p1) in &touched {
                grad[g1] += d.g[p1];
                for &(g2, p2) in &touched {
                    let w = d.h[p1][p2];
                    match (self.slots[g1], self.slots[g2]) {
                        (Slot::Diag(a), Slot::Diag(_)) => {
                            if g1 == g2 {
                                diag[a] += w;
                            }
                        }
                        (Slot::Diag(a), Slot::Dense(c)) => cross[(a, c)] += w,
                        (Slot::Dense(_), Slot::Diag(_)) => {}
                        (Slot::Dense(a), Slot::Dense(c)) => dense[(a, c)] += w,
                    }
                }
            }
        }
        for (b, blk) in self.frame.layout.blocks.iter().enumerate() {
            let iv = view.inv_var[b];
            for g in blk.range() {
                grad[g] += u[g] * iv;
                match self.slots[g] {
                    Slot::Diag(a) => diag[a] += iv,
                    Slot::Dense(c) => dense[(c, c)] += iv,
                }
            }
        }
        Assembly {
            derivs,
            grad,
            diag,
            cross,
            dense,
        }
    }

    fn factorize(&self, a: &Assembly, damping: f64) -> Option<Factorized> {
        let mut dinv = Vec::with_capacity(self.n_diag);
        let mut logdet = 0.0;
        for &d in &a.diag {
            let d = d + damping;
            if !(d > 0.0 && d.is_finite()) {
                return None;
            }
            dinv.push(1.0 / d);
            logdet += d.ln();
        }
        let mut e = a.cross.clone();
        for (p, &s) in dinv.iter().enumerate() {
            for c in 0..self.n_dense {
                e[(p, c)] *= s;
            }
        }
        let chol = if self.n_dense > 0 {
            let mut s = &a.dense - a.cross.transpose() * &e;
            for c in 0..self.n_dense {
                s[(c, c)] += damping;
            }
            let ch = nalgebra::Cholesky::new(s)?;
            logdet += 2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            Some(ch)
        } else {
            None
        };
        if !logdet.is_finite() {
            return None;
        }
        Some(Factorized {
            dinv,
            e,
            chol,
            logdet,
        })
    }

    fn fixed_only(&self, theta: &[f64], want_grad: bool) -> Result<Evaluation> {
        let f = self.frame;
        let view = self.view(theta);
        let (ec, ez) = f.fixed_predictors(theta);
        if !want_grad {
            return Ok(Evaluation {
                value: self.data_value(&ec, &ez, view.tau)?,
                gradient: None,
                modes: Vec::new(),
                inner_iterations: 0,
            });
        }
        let derivs = self.derivs(&ec, &ez, view.tau)?;
        let mut value = 0.0;
        let mut grad = vec![0.0; f.layout.k()];
        for (i, d) in derivs.iter().enumerate() {
            value += d.v;
            self.accumulate_fixed(&mut grad, i, d.g[C], d.g[Z], d.g[T]);
        }
        Ok(Evaluation {
            value,
            gradient: Some(grad),
            modes: Vec::new(),
            inner_iterations: 0,
        })
    }

    #[inline]
    fn accumulate_fixed(&self, grad: &mut [f64], i: usize, a_c: f64, a_z: f64, a_t: f64) {
        let f = self.frame;
        let l = &f.layout;
        for (g, x) in grad[l.cond_fixed.clone()].iter_mut().zip(f.cond_row(i)) {
            *g += a_c * x;
        }
        if f.zi_width > 0 {
            for (g, x) in grad[l.zi_fixed.clone()].iter_mut().zip(f.zi_row(i)) {
                *g += a_z * x;
            }
        }
        if let Some(k) = l.log_alpha {
            grad[k] += a_t;
        }
    }

    /// Joint negative log-density of data and random effects.
    pub(crate) fn joint(&self, theta: &[f64], u: &[f64]) -> Result<f64> {
        let view = self.view(theta);
        let base = self.frame.fixed_predictors(theta);
        let (ec, ez) = self.predictors(&base, u);
        Ok(self.data_value(&ec, &ez, view.tau)? + self.prior_value(u, &view))
    }

    pub(crate) fn evaluate(&self, theta: &[f64], start: Option<&[f64]>, want_grad: bool) -> Result<Evaluation> {
        self.frame.layout.check_len(theta)?;
        if let Some(i) = theta.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter at position {i}")));
        }
        if !self.frame.has_random_effects() {
            return self.fixed_only(theta, want_grad);
        }
        let q = self.slots.len();
        let view = self.view(theta);
        let base = self.frame.fixed_predictors(theta);
        let mut u = match start {
            Some(s) if s.len() == q && s.iter().all(|x| x.is_finite()) => s.to_vec(),
            _ => vec![0.0; q],
        };

        let mut iterations = 0;
        let (ec, ez) = self.predictors(&base, &u);
        let mut fu = self.data_value(&ec, &ez, view.tau)? + self.prior_value(&u, &view);
        let mut asm = self.assemble(self.derivs(&ec, &ez, view.tau)?, &u, &view);
        loop {
            let gmax = asm.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax <= self.inner.tol {
                break;
            }
            if iterations >= self.inner.max_iter {
                return Err(Error::InnerNonConvergence {
                    iterations,
                    grad_norm: gmax,
                });
            }
            iterations += 1;

            let scale = asm.diag.iter().chain(asm.dense.diagonal().iter()).fold(0.0f64, |m, d| m.max(d.abs()));
            let mut damping = 0.0;
            let fac = loop {
                if let Some(fac) = self.factorize(&asm, damping) {
                    break fac;
                }
                damping = if damping == 0.0 { 1e-8 * scale.max(1.0) } else { damping * 10.0 };
                if damping > 1e12 * scale.max(1.0) {
                    return Err(Error::Estimation("inner Hessian could not be regularized".into()));
                }
            };
            let neg: Vec<f64> = asm.grad.iter().map(|g| -g).collect();
            let step = fac.solve(&neg, &self.slots, self.n_dense);
            let slope: f64 = step.iter().zip(&asm.grad).map(|(s, g)| s * g).sum();

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand: Vec<f64> = u.iter().zip(&step).map(|(x, s)| x + t * s).collect();
                let (ec, ez) = self.predictors(&base, &cand);
                let fc = match self.data_value(&ec, &ez, view.tau) {
                    Ok(v) => v + self.prior_value(&cand, &view),
                    Err(_) => f64::INFINITY,
                };
                // Inside the quadratic region the decrease is below rounding;
                // take the Newton step as is.
                let tiny = -slope < 1e-10 && damping == 0.0;
                if fc.is_finite() && (tiny || fc <= fu + 1e-4 * t * slope) {
                    accepted = Some((cand, fc, ec, ez));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, fc, ec, ez)) = accepted else {
                if gmax <= 1e3 * self.inner.tol {
                    break;
                }
                return Err(Error::InnerNonConvergence {
                    iterations,
                    grad_norm: gmax,
                });
            };
            u = cand;
            fu = fc;
            asm = self.assemble(self.derivs(&ec, &ez, view.tau)?, &u, &view);
        }

        let fac = self
            .factorize(&asm, 0.0)
            .ok_or_else(|| Error::Estimation("inner Hessian is not positive definite at the mode".into()))?;
        let value = fu + 0.5 * fac.logdet - q as f64 * HALF_LN_2PI;
        let gradient = want_grad.then(|| self.gradient(&asm, &fac, &u, &view));
        Ok(Evaluation {
            value,
            gradient,
            modes: u,
            inner_iterations: iterations,
        })
    }

    fn gradient(&self, asm: &Assembly, fac: &Factorized, u: &[f64], view: &ThetaView) -> Vec<f64> {
        let f = self.frame;
        let l = &f.layout;
        let nd = self.n_dense;
        let sinv = match &fac.chol {
            Some(ch) => ch.inverse(),
            None => DMatrix::zeros(0, 0),
        };
        let ef = &fac.e * &sinv;
        let hinv_diag: Vec<f64> = (0..self.n_diag)
            .map(|p| fac.dinv[p] + (0..nd).map(|c| ef[(p, c)] * fac.e[(p, c)]).sum::<f64>())
            .collect();
        let hinv = |g1: usize, g2: usize| -> f64 {
            match (self.slots[g1], self.slots[g2]) {
                (Slot::Diag(a), Slot::Diag(_)) => {
                    if g1 == g2 {
                        hinv_diag[a]
                    } else {
                        0.0
                    }
                }
                (Slot::Diag(a), Slot::Dense(c)) | (Slot::Dense(c), Slot::Diag(a)) => -ef[(a, c)],
                (Slot::Dense(a), Slot::Dense(c)) => sinv[(a, c)],
            }
        };

        // Trace terms ½ tr(H⁻¹ ∂H) carried per observation.
        let n = f.n();
        let q = self.slots.len();
        let mut traces = vec![[0.0; 3]; n];
        let mut v = vec![0.0; q];
        let mut touched = Vec::new();
        for (i, d) in asm.derivs.iter().enumerate() {
            self.obs_slots(i, &mut touched);
            let mut p = [[0.0; 2]; 2];
            for &(g1, p1) in &touched {
                for &(g2, p2) in &touched {
                    p[p1][p2] += hinv(g1, g2);
                }
            }
            let mut t = [0.0; 3];
            for (a, ta) in t.iter_mut().enumerate() {
                let mut s = 0.0;
                for b in 0..2 {
                    for c in 0..2 {
                        s += d.d3[b][c][a] * p[b][c];
                    }
                }
                *ta = 0.5 * s;
            }
            for &(g, part) in &touched {
                v[g] += t[part];
            }
            traces[i] = t;
        }
        let z = fac.solve(&v, &self.slots, nd);

        let mut grad = vec![0.0; l.k()];
        for (i, d) in asm.derivs.iter().enumerate() {
            self.obs_slots(i, &mut touched);
            let mut r = [0.0; 2];
            for &(g, part) in &touched {
                r[part] += z[g];
            }
            let t = traces[i];
            let wr_c = d.h[C][C] * r[0] + d.h[C][Z] * r[1];
            let wr_z = d.h[Z][C] * r[0] + d.h[Z][Z] * r[1];
            let a_c = d.g[C] + t[C] - wr_c;
            let a_z = d.g[Z] + t[Z] - wr_z;
            let a_t = d.g[T] + t[T] - (d.h[C][T] * r[0] + d.h[Z][T] * r[1]);
            self.accumulate_fixed(&mut grad, i, a_c, a_z, a_t);
        }
        for (b, blk) in l.blocks.iter().enumerate() {
            let iv = view.inv_var[b];
            let mut s = 0.0;
            for g in blk.range() {
                s += 1.0 - u[g] * u[g] * iv - hinv(g, g) * iv + 2.0 * z[g] * u[g] * iv;
            }
            grad[l.log_sd[b]] = s;
        }
        grad
    }
}
