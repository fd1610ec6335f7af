//! Per-observation negative log-likelihood and its derivatives up to third
//! order in `(eta_cond, eta_zi, log_alpha)`.

use crate::dist::{expit, ln_factorial, ln_rising_scaled, softplus, POISSON_HANDOFF_ALPHA};
use crate::frame::Family;

pub(crate) const C: usize = 0;
pub(crate) const Z: usize = 1;
pub(crate) const T: usize = 2;

/// Truncated Taylor jet in three variables.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Jet {
    pub v: f64,
    pub d1: [f64; 3],
    pub d2: [[f64; 3]; 3],
    pub d3: [[[f64; 3]; 3]; 3],
}

impl Jet {
    fn var(index: usize, value: f64) -> Self {
        let mut j = Jet {
            v: value,
            ..Default::default()
        };
        j.d1[index] = 1.0;
        j
    }

    fn scale(mut self, s: f64) -> Self {
        self.v *= s;
        for a in 0..3 {
            self.d1[a] *= s;
            for b in 0..3 {
                self.d2[a][b] *= s;
                for c in 0..3 {
                    self.d3[a][b][c] *= s;
                }
            }
        }
        self
    }

    fn add(mut self, o: &Jet, s: f64) -> Self {
        self.v += s * o.v;
        for a in 0..3 {
            self.d1[a] += s * o.d1[a];
            for b in 0..3 {
                self.d2[a][b] += s * o.d2[a][b];
                for c in 0..3 {
                    self.d3[a][b][c] += s * o.d3[a][b][c];
                }
            }
        }
        self
    }

    /// `h(self)` for a univariate `h` with derivatives `f = [h, h', h'', h''']`.
    fn compose(&self, f: [f64; 4]) -> Jet {
        let d = &self.d1;
        let mut out = Jet {
            v: f[0],
            ..Default::default()
        };
        for a in 0..3 {
            out.d1[a] = f[1] * d[a];
            for b in 0..3 {
                out.d2[a][b] = f[2] * d[a] * d[b] + f[1] * self.d2[a][b];
                for c in 0..3 {
                    out.d3[a][b][c] = f[3] * d[a] * d[b] * d[c]
                        + f[2]
                            * (self.d2[a][b] * d[c] + self.d2[a][c] * d[b] + self.d2[b][c] * d[a])
                        + f[1] * self.d3[a][b][c];
                }
            }
        }
        out
    }
}

/// Softplus and its first three derivatives.
#[inline]
fn softplus_derivs(x: f64) -> [f64; 4] {
    let s1 = expit(x);
    let s2 = s1 * (1.0 - s1);
    [softplus(x), s1, s2, s2 * (1.0 - 2.0 * s1)]
}

/// Compact derivative record kept per observation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ObsDerivs {
    pub v: f64,
    /// First derivatives in (cond, zi, log_alpha).
    pub g: [f64; 3],
    /// Full second derivative matrix.
    pub h: [[f64; 3]; 3],
    /// Third derivatives `d3[a][b][c]` restricted to `a, b` in (cond, zi).
    pub d3: [[[f64; 3]; 2]; 2],
}

impl From<Jet> for ObsDerivs {
    fn from(j: Jet) -> Self {
        let mut d3 = [[[0.0; 3]; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                d3[a][b] = j.d3[a][b];
            }
        }
        ObsDerivs {
            v: j.v,
            g: j.d1,
            h: j.d2,
            d3,
        }
    }
}

#[inline]
fn uses_poisson(family: Family, tau: f64) -> bool {
    !family.has_dispersion() || tau.exp() < POISSON_HANDOFF_ALPHA
}

/// `log g(y)` of the count component as a jet in `(eta_c, tau)`.
fn log_count_jet(y: u64, eta: f64, tau: f64, family: Family) -> Jet {
    let yf = y as f64;
    let mut j = Jet::default();
    if uses_poisson(family, tau) {
        let mu = eta.exp();
        j.v = yf * eta - mu - ln_factorial(y);
        j.d1[C] = yf - mu;
        j.d2[C][C] = -mu;
        j.d3[C][C][C] = -mu;
        return j;
    }
    let alpha = tau.exp();
    let r = 1.0 / alpha;
    let [s0, s1, s2, s3] = softplus_derivs(eta + tau);
    let (mut b1, mut b2, mut b3) = (0.0, 0.0, 0.0);
    for k in 1..y {
        let a = expit((k as f64).ln() + tau);
        let a2 = a * (1.0 - a);
        b1 += a;
        b2 += a2;
        b3 += a2 * (1.0 - 2.0 * a);
    }
    let b0 = ln_rising_scaled(y, alpha) - ln_factorial(y);
    let ry = r + yf;

    j.v = b0 + yf * eta - ry * s0;
    j.d1[C] = yf - ry * s1;
    j.d1[T] = b1 + r * s0 - ry * s1;

    let f_cc = -ry * s2;
    let f_ct = r * s1 - ry * s2;
    let f_tt = b2 - r * s0 + 2.0 * r * s1 - ry * s2;
    j.d2[C][C] = f_cc;
    j.d2[C][T] = f_ct;
    j.d2[T][C] = f_ct;
    j.d2[T][T] = f_tt;

    let f_ccc = -ry * s3;
    let f_cct = r * s2 - ry * s3;
    let f_ctt = -r * s1 + 2.0 * r * s2 - ry * s3;
    let f_ttt = b3 + r * s0 - 3.0 * r * s1 + 3.0 * r * s2 - ry * s3;
    let idx = |a: usize, b: usize, c: usize| [a, b, c].iter().filter(|&&x| x == T).count();
    for a in [C, T] {
        for b in [C, T] {
            for c in [C, T] {
                j.d3[a][b][c] = match idx(a, b, c) {
                    0 => f_ccc,
                    1 => f_cct,
                    2 => f_ctt,
                    _ => f_ttt,
                };
            }
        }
    }
    j
}

/// Full negative log-likelihood jet for one observation.
pub(crate) fn obs_jet(y: u64, eta_c: f64, eta_z: f64, tau: f64, family: Family) -> ObsDerivs {
    let logg = log_count_jet(y, eta_c, tau, family);
    if !family.zero_inflated() {
        return logg.scale(-1.0).into();
    }
    let z = Jet::var(Z, eta_z);
    let sp_z = z.compose(softplus_derivs(eta_z));
    let jet = if y > 0 {
        sp_z.add(&logg, -1.0)
    } else {
        // -log(phi + (1 - phi) g0) = sp(eta_z) - F0 - sp(eta_z - F0)
        let d = z.add(&logg, -1.0);
        let sp_d = d.compose(softplus_derivs(d.v));
        sp_z.add(&logg, -1.0).add(&sp_d, -1.0)
    };
    jet.into()
}

/// Value-only counterpart of [`obs_jet`].
pub(crate) fn obs_value(y: u64, eta_c: f64, eta_z: f64, tau: f64, family: Family) -> f64 {
    let yf = y as f64;
    let logg = if uses_poisson(family, tau) {
        yf * eta_c - eta_c.exp() - ln_factorial(y)
    } else {
        let alpha = tau.exp();
        ln_rising_scaled(y, alpha) - ln_factorial(y) + yf * eta_c
            - (1.0 / alpha + yf) * softplus(eta_c + tau)
    };
    if !family.zero_inflated() {
        -logg
    } else if y > 0 {
        softplus(eta_z) - logg
    } else {
        softplus(eta_z) - logg - softplus(eta_z - logg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{zinb_log_pmf, NbParams, ZinbParams};

    fn reference(y: u64, ec: f64, ez: f64, tau: f64, family: Family) -> f64 {
        let alpha = if family.has_dispersion() { tau.exp() } else { 0.0 };
        let phi = if family.zero_inflated() { expit(ez) } else { 0.0 };
        let p = ZinbParams::new(phi, NbParams::new(ec.exp(), alpha).unwrap()).unwrap();
        -zinb_log_pmf(y, p).unwrap()
    }

    const POINTS: &[(u64, f64, f64, f64)] = &[
        (0, 0.3, -0.4, -0.7),
        (0, 1.8, 1.2, 0.4),
        (1, -0.5, 0.0, -1.2),
        (3, 1.1, -2.0, -0.3),
        (17, 2.4, 0.7, -2.5),
        (80, 3.9, -1.0, -1.0),
    ];

    #[test]
    fn value_matches_distribution_module() {
        for fam in [Family::Poisson, Family::Nb, Family::Zip, Family::Zinb] {
            for &(y, ec, ez, tau) in POINTS {
                let a = obs_value(y, ec, ez, tau, fam);
                let b = reference(y, ec, ez, tau, fam);
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{fam:?} y={y}: {a} vs {b}");
                let j = obs_jet(y, ec, ez, tau, fam);
                assert!((j.v - a).abs() < 1e-10 * (1.0 + a.abs()));
            }
        }
    }

    fn shift(x: [f64; 3], a: usize, h: f64) -> [f64; 3] {
        let mut x = x;
        x[a] += h;
        x
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for fam in [Family::Poisson, Family::Nb, Family::Zip, Family::Zinb] {
            for &(y, ec, ez, tau) in POINTS {
                let x0 = [ec, ez, tau];
                let jet_at = |x: [f64; 3]| obs_jet(y, x[0], x[1], x[2], fam);
                let val_at = |x: [f64; 3]| obs_value(y, x[0], x[1], x[2], fam);
                let j0 = jet_at(x0);
                for a in 0..3 {
                    let fd = (val_at(shift(x0, a, h)) - val_at(shift(x0, a, -h))) / (2.0 * h);
                    assert!((fd - j0.g[a]).abs() < 1e-6 * (1.0 + fd.abs()), "{fam:?} y={y} g[{a}]");
                    let jp = jet_at(shift(x0, a, h));
                    let jm = jet_at(shift(x0, a, -h));
                    for b in 0..3 {
                        let fd2 = (jp.g[b] - jm.g[b]) / (2.0 * h);
                        assert!((fd2 - j0.h[a][b]).abs() < 1e-6 * (1.0 + fd2.abs()), "{fam:?} y={y} h[{a}][{b}]");
                    }
                    for b in 0..2 {
                        for c in 0..2 {
                            let fd3 = (jp.h[b][c] - jm.h[b][c]) / (2.0 * h);
                            assert!(
                                (fd3 - j0.d3[b][c][a]).abs() < 1e-6 * (1.0 + fd3.abs()),
                                "{fam:?} y={y} d3[{b}][{c}][{a}]: {fd3} vs {}",
                                j0.d3[b][c][a]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn saturated_inflation_is_finite() {
        let v = obs_value(0, 1.0, 40.0, -0.5, Family::Zinb);
        assert!(v.is_finite() && v >= 0.0 && v < 1e-12);
        let j = obs_jet(0, 1.0, 40.0, -0.5, Family::Zinb);
        assert!(j.g.iter().all(|g| g.is_finite()));
    }
}
