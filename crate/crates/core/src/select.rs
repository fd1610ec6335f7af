//! Information criteria, likelihood-ratio tests, the overdispersion test, and
//! model-comparison tables.

use std::fmt::{self, Write as _};

use log::warn;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{fit, FitOptions, FitResult};
use crate::frame::{build_frame, linear_predictors, Family, ModelSpec};
use crate::stats::{chi_square_sf, student_t_sf};

/// Raw likelihood-ratio statistics below this are reported as optimizer trouble.
pub const LRT_NEGATIVE_TOLERANCE: f64 = -1e-3;
const MU_FLOOR: f64 = 1e-10;

pub fn aic(log_lik: f64, k: usize) -> f64 {
    -2.0 * log_lik + 2.0 * k as f64
}

pub fn bic(log_lik: f64, k: usize, n: usize) -> f64 {
    -2.0 * log_lik + k as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrtResult {
    /// Clamped at zero.
    pub stat: f64,
    pub df: usize,
    pub p: f64,
    /// Unclamped `2 (full - reduced)`.
    pub raw: f64,
}

/// Likelihood-ratio test from log-likelihoods and parameter counts.
pub fn lrt_values(full_log_lik: f64, full_k: usize, reduced_log_lik: f64, reduced_k: usize) -> Result<LrtResult> {
    if reduced_k >= full_k {
        return Err(Error::Contract(format!(
            "reduced model must have fewer parameters than the full model ({reduced_k} >= {full_k})"
        )));
    }
    let raw = 2.0 * (full_log_lik - reduced_log_lik);
    if raw < LRT_NEGATIVE_TOLERANCE {
        warn!("likelihood-ratio statistic {raw:.4} is negative; the larger model may not have converged");
    }
    let stat = raw.max(0.0);
    let df = full_k - reduced_k;
    Ok(LrtResult {
        stat,
        df,
        p: chi_square_sf(stat, df as f64),
        raw,
    })
}

fn same_data(a: &FitResult, b: &FitResult) -> bool {
    a.n == b.n && a.data_checksum == b.data_checksum
}

pub fn lrt(full: &FitResult, reduced: &FitResult) -> Result<LrtResult> {
    if !same_data(full, reduced) {
        return Err(Error::Contract("likelihood-ratio test needs fits on the same data".into()));
    }
    lrt_values(full.log_lik, full.k, reduced.log_lik, reduced.k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersionTest {
    /// Auxiliary-regression slope; positive means overdispersion.
    pub coefficient: f64,
    /// t statistic of the slope.
    pub stat: f64,
    /// One-sided p-value for a positive slope.
    pub p: f64,
}

/// Auxiliary regression of `((y - mu)^2 - y) / mu` on `mu` without intercept.
pub fn dispersion_test_fitted(y: &[u64], mu: &[f64]) -> Result<DispersionTest> {
    if y.len() != mu.len() || y.len() < 2 {
        return Err(Error::Contract("dispersion test needs at least two matched observations".into()));
    }
    let n = y.len();
    let (mut sxx, mut sxz) = (0.0, 0.0);
    let pairs: Vec<(f64, f64)> = y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let m = m.max(MU_FLOOR);
            let y = y as f64;
            (m, ((y - m).powi(2) - y) / m)
        })
        .collect();
    for &(x, z) in &pairs {
        sxx += x * x;
        sxz += x * z;
    }
    let coefficient = sxz / sxx;
    let rss: f64 = pairs.iter().map(|&(x, z)| (z - coefficient * x).powi(2)).sum();
    let se = (rss / (n - 1) as f64 / sxx).sqrt();
    let stat = if se > 0.0 {
        coefficient / se
    } else if coefficient == 0.0 {
        0.0
    } else {
        coefficient.signum() * f64::INFINITY
    };
    Ok(DispersionTest {
        coefficient,
        stat,
        p: student_t_sf(stat, (n - 1) as f64),
    })
}

/// Fits the Poisson model `spec` and tests it for overdispersion.
pub fn dispersion_test(data: &Dataset, spec: &ModelSpec, opts: &FitOptions) -> Result<DispersionTest> {
    if spec.family != Family::Poisson {
        return Err(Error::Config("dispersion test requires a Poisson model".into()));
    }
    let opts = FitOptions {
        compute_se: false,
        ..opts.clone()
    };
    let result = fit(data, spec, &opts)?;
    let frame = build_frame(data, spec)?;
    let pred = linear_predictors(&frame, &result.theta_hat, &result.re_modes)?;
    dispersion_test_fitted(&frame.y, &pred.mu)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub family: Family,
    pub re_cond: Vec<String>,
    pub re_zi: Vec<String>,
    pub aic: f64,
    pub bic: f64,
    pub log_lik: f64,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrtAnnotation {
    pub reduced: String,
    pub full: String,
    pub result: LrtResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub lrts: Vec<LrtAnnotation>,
}

fn family_rank(f: Family) -> u8 {
    match f {
        Family::Poisson => 0,
        Family::Nb => 1,
        Family::Zip => 2,
        Family::Zinb => 3,
    }
}

fn ladder_key(f: &FitResult) -> (u8, usize, usize) {
    let blocks = f.spec.cond_factors.len() + f.spec.zi_factors.len() + usize::from(f.spec.observation_effect);
    (family_rank(f.spec.family), blocks, f.k)
}

/// Orders labelled fits along the configuration ladder and annotates each
/// adjacent nested pair with a likelihood-ratio test.
pub fn compare(fits: &[(String, FitResult)]) -> Result<ComparisonTable> {
    let Some((_, first)) = fits.first() else {
        return Err(Error::Contract("comparison needs at least one fit".into()));
    };
    if fits.iter().any(|(_, f)| !same_data(first, f)) {
        return Err(Error::Contract("fits were estimated on different data".into()));
    }
    let mut order: Vec<&(String, FitResult)> = fits.iter().collect();
    order.sort_by_key(|(label, f)| (ladder_key(f), label.clone()));

    let rows = order
        .iter()
        .map(|(label, f)| ComparisonRow {
            model: label.clone(),
            family: f.spec.family,
            re_cond: f.spec.cond_factors.clone(),
            re_zi: f.spec.zi_factors.clone(),
            aic: aic(f.log_lik, f.k),
            bic: bic(f.log_lik, f.k, f.n),
            log_lik: f.log_lik,
            k: f.k,
            n: f.n,
        })
        .collect();
    let mut lrts = Vec::new();
    for pair in order.windows(2) {
        let (rl, reduced) = pair[0];
        let (fl, full) = pair[1];
        if reduced.k < full.k && reduced.spec.nested_in(&full.spec) {
            lrts.push(LrtAnnotation {
                reduced: rl.clone(),
                full: fl.clone(),
                result: lrt(full, reduced)?,
            });
        }
    }
    Ok(ComparisonTable { rows, lrts })
}

fn factors_label(f: &[String]) -> String {
    if f.is_empty() {
        "-".to_string()
    } else {
        f.join(" & ")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,re_cond,re_zi,aic,bic,loglik,k\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.4},{}",
                csv_field(&r.model),
                csv_field(&factors_label(&r.re_cond)),
                csv_field(&factors_label(&r.re_zi)),
                r.aic,
                r.bic,
                r.log_lik,
                r.k
            );
        }
        out
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.model.clone(),
                    factors_label(&r.re_cond),
                    factors_label(&r.re_zi),
                    format!("{:.1}", r.aic),
                    format!("{:.1}", r.bic),
                    format!("{:.1}", r.log_lik),
                    r.k.to_string(),
                ]
            })
            .collect();
        let head = ["Model", "RE cond", "RE zi", "AIC", "BIC", "logLik", "k"];
        let mut w: Vec<usize> = head.iter().map(|h| h.len()).collect();
        for c in &cells {
            for (j, s) in c.iter().enumerate() {
                w[j] = w[j].max(s.len());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, c: &[&str]| -> fmt::Result {
            for j in 0..3 {
                write!(f, "{:<w$}  ", c[j], w = w[j])?;
            }
            for j in 3..7 {
                write!(f, "{:>w$}", c[j], w = w[j])?;
                if j < 6 {
                    write!(f, "  ")?;
                }
            }
            writeln!(f)
        };
        line(f, &head)?;
        for c in &cells {
            let refs: Vec<&str> = c.iter().map(String::as_str).collect();
            line(f, &refs)?;
        }
        if !self.lrts.is_empty() {
            writeln!(f)?;
            for a in &self.lrts {
                let p = if a.result.p < 1e-300 {
                    "< 1e-300".to_string()
                } else {
                    format!("= {:.4e}", a.result.p)
                };
                writeln!(
                    f,
                    "LRT {} vs {}: chisq = {:.2}, df = {}, p {}",
                    a.full, a.reduced, a.result.stat, a.result.df, p
                )?;
            }
        }
        Ok(())
    }
}
