//! Starting values for the outer optimizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frame::{dot, ModelFrame};
use crate::sim::SATURATED_LOGIT;

const IRLS_ITERATIONS: usize = 25;
const ETA_CLAMP: f64 = 30.0;

/// Poisson IRLS coefficients for the conditional design.
pub(crate) fn poisson_irls(frame: &ModelFrame) -> Result<Vec<f64>> {
    let n = frame.n();
    let p = frame.cond_width;
    let y: Vec<f64> = frame.y.iter().map(|&v| v as f64).collect();
    let mut eta: Vec<f64> = y.iter().map(|&v| (v + 0.1).ln()).collect();
    let mut beta = vec![0.0; p];
    for _ in 0..IRLS_ITERATIONS {
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwz = DVector::<f64>::zeros(p);
        for i in 0..n {
            let mu = eta[i].exp();
            let z = eta[i] + (y[i] - mu) / mu;
            let row = frame.cond_row(i);
            for a in 0..p {
                let wa = mu * row[a];
                xtwz[a] += wa * z;
                for b in 0..=a {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
            xtwx[(a, a)] += 1e-8;
        }
        let next = xtwx
            .cholesky()
            .ok_or_else(|| Error::Rank("conditional design is rank deficient".into()))?
            .solve(&xtwz);
        let change = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = next.iter().copied().collect();
        for (i, e) in eta.iter_mut().enumerate() {
            *e = dot(frame.cond_row(i), &beta).clamp(-ETA_CLAMP, ETA_CLAMP);
        }
        if change < 1e-10 {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Estimation("initial Poisson pass diverged".into()));
    }
    Ok(beta)
}

/// Starting parameter vector: Poisson IRLS for the conditional part, the
/// observed zero fraction for the inflation intercept, a moment estimate of
/// the dispersion, and `ln 0.5` for every log standard deviation.
pub(crate) fn initial_parameters(frame: &ModelFrame) -> Result<Vec<f64>> {
    let layout = &frame.layout;
    let mut theta = vec![0.0; layout.k()];
    let beta = poisson_irls(frame)?;
    let n = frame.n() as f64;

    let mut zero_frac = 0.0;
    if frame.spec.family.zero_inflated() {
        let zeros = frame.y.iter().filter(|&&v| v == 0).count();
        zero_frac = (zeros as f64 / n).clamp(0.01, 0.99);
        theta[layout.zi_fixed.start] = if zeros == frame.n() {
            SATURATED_LOGIT
        } else {
            (zero_frac / (1.0 - zero_frac)).ln()
        };
    }
    theta[layout.cond_fixed.clone()].copy_from_slice(&beta);
    // Poisson fits the mixture mean (1 - phi) * mu.
    theta[layout.cond_fixed.start] -= (1.0 - zero_frac).ln();

    if let Some(ia) = layout.log_alpha {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..frame.n() {
            let mu = dot(frame.cond_row(i), &beta).clamp(-ETA_CLAMP, ETA_CLAMP).exp();
            let y = frame.y[i] as f64;
            num += (y - mu).powi(2) - y;
            den += mu * mu;
        }
        let alpha = if den > 0.0 { num / den } else { 1.0 };
        theta[ia] = alpha.clamp(0.01, 100.0).ln();
    }
    for &i in &layout.log_sd {
        theta[i] = 0.5f64.ln();
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, Dataset, Factor};
    use crate::frame::{build_frame, Family, ModelSpec};

    #[test]
    fn irls_recovers_exact_log_linear_means() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 - 20.0) / 10.0).collect();
        // Response is the rounded mean; coefficients land close to the generator.
        let y: Vec<u64> = x.iter().map(|&v| (100.0 * (0.5 * v).exp()).round() as u64).collect();
        let data = Dataset::new(
            "y",
            y,
            vec![Covariate { name: "x".into(), values: x }],
            vec![Factor::from_labels("g", &["a", "b"].repeat(20))],
        )
        .unwrap();
        let spec = ModelSpec::new(Family::Poisson).with_cond_covariates(&["x"]);
        let beta = poisson_irls(&build_frame(&data, &spec).unwrap()).unwrap();
        assert!((beta[0] - 100f64.ln()).abs() < 1e-3);
        assert!((beta[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn zero_inflation_start_uses_zero_fraction() {
        let y: Vec<u64> = (0..100).map(|i| if i % 4 == 0 { 3 } else { 0 }).collect();
        let data = Dataset::new("y", y, vec![], vec![Factor::from_labels("g", &["a", "b"].repeat(50))]).unwrap();
        let spec = ModelSpec::new(Family::Zinb).with_cond_factors(&["g"]);
        let frame = build_frame(&data, &spec).unwrap();
        let t = initial_parameters(&frame).unwrap();
        assert!((t[frame.layout.zi_fixed.start] - 3f64.ln()).abs() < 1e-12);
        assert!((t[0] - 3f64.ln()).abs() < 1e-6);
        assert!((t[*frame.layout.log_sd.first().unwrap()] - 0.5f64.ln()).abs() < 1e-15);
    }
}
