//! Probability functions for negative binomial and zero-inflated negative
//! binomial counts, parameterized by mean `mu` and dispersion `alpha`
//! (variance `mu + alpha * mu^2`, `alpha = 1/r`).

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Dispersion below which the negative binomial is evaluated as a Poisson.
pub const POISSON_HANDOFF_ALPHA: f64 = 1e-8;

/// Counts below this bound use the exact log-product form of the gamma ratio.
const SMALL_COUNT: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbParams {
    mu: f64,
    alpha: f64,
}

impl NbParams {
    pub fn new(mu: f64, alpha: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Domain(format!("mean must be finite and positive, got {mu}")));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Domain(format!(
                "dispersion must be finite and non-negative, got {alpha}"
            )));
        }
        Ok(Self { mu, alpha })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn variance(&self) -> f64 {
        self.mu + self.alpha * self.mu * self.mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZinbParams {
    phi: f64,
    nb: NbParams,
}

impl ZinbParams {
    pub fn new(phi: f64, nb: NbParams) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::Domain(format!(
                "structural-zero probability must lie in [0, 1], got {phi}"
            )));
        }
        Ok(Self { phi, nb })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn nb(&self) -> NbParams {
        self.nb
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else if x < -35.0 {
        x.exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Logistic function, safe for large `|x|`.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit requires 0 < p < 1, got {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[inline]
pub fn ln_factorial(y: u64) -> f64 {
    ln_gamma(y as f64 + 1.0)
}

pub fn poisson_log_pmf(y: u64, mu: f64) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("Poisson mean must be positive, got {mu}")));
    }
    let yf = y as f64;
    Ok(yf * mu.ln() - mu - ln_factorial(y))
}

/// `log Γ(r + y) − log Γ(r) + y log α` with `r = 1/α`, i.e. `Σ_{j<y} log(1 + jα)`.
pub(crate) fn ln_rising_scaled(y: u64, alpha: f64) -> f64 {
    if y < SMALL_COUNT {
        (1..y).map(|j| (j as f64 * alpha).ln_1p()).sum()
    } else {
        let r = 1.0 / alpha;
        let yf = y as f64;
        ln_gamma(r + yf) - ln_gamma(r) + yf * alpha.ln()
    }
}

/// Log-pmf of the negative binomial in mean/dispersion form.
pub fn nb_log_pmf(y: u64, p: NbParams) -> Result<f64> {
    let NbParams { mu, alpha } = p;
    if alpha < POISSON_HANDOFF_ALPHA {
        return poisson_log_pmf(y, mu);
    }
    let yf = y as f64;
    let am = alpha * mu;
    let log1p_am = am.ln_1p();
    let v = ln_rising_scaled(y, alpha) - ln_factorial(y) + yf * mu.ln()
        - (1.0 / alpha + yf) * log1p_am;
    if !v.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite NB log-pmf at y={y}, mu={mu}, alpha={alpha}"
        )));
    }
    Ok(v)
}

/// Log-pmf of the zero-inflated negative binomial mixture.
pub fn zinb_log_pmf(y: u64, p: ZinbParams) -> Result<f64> {
    let phi = p.phi;
    let nb = nb_log_pmf(y, p.nb)?;
    if phi == 0.0 {
        return Ok(nb);
    }
    if y == 0 {
        Ok(log_add_exp(phi.ln(), (-phi).ln_1p() + nb))
    } else if phi == 1.0 {
        Ok(f64::NEG_INFINITY)
    } else {
        Ok((-phi).ln_1p() + nb)
    }
}
