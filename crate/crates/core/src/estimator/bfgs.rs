//! BFGS with a strong-Wolfe line search using safeguarded cubic interpolation.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when `‖g‖∞ ≤ tol · max(1, |f|)`.
    pub tol: f64,
    /// Largest coordinate change allowed for a trial step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-5,
            max_step: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub message: String,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

#[derive(Clone)]
struct Point {
    a: f64,
    f: f64,
    d: f64,
    g: DVector<f64>,
}

fn inf_norm(g: &DVector<f64>) -> f64 {
    g.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimizer of the cubic through two points with slopes, or `None`.
fn cubic_min(a0: f64, f0: f64, d0: f64, a1: f64, f1: f64, d1: f64) -> Option<f64> {
    let t1 = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = t1 * t1 - d0 * d1;
    if !(disc >= 0.0) {
        return None;
    }
    let t2 = (a1 - a0).signum() * disc.sqrt();
    let denom = d1 - d0 + 2.0 * t2;
    if denom == 0.0 {
        return None;
    }
    let a = a1 - (a1 - a0) * (d1 + t2 - t1) / denom;
    a.is_finite().then_some(a)
}

struct Search<'a, F> {
    eval: &'a mut F,
    x: &'a DVector<f64>,
    p: &'a DVector<f64>,
    f0: f64,
    d0: f64,
    evaluations: usize,
}

impl<F> Search<'_, F>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    fn at(&mut self, a: f64) -> Point {
        self.evaluations += 1;
        let trial = self.x + self.p * a;
        match (self.eval)(trial.as_slice()) {
            Some((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let g = DVector::from_vec(g);
                let d = g.dot(self.p);
                Point { a, f, d, g }
            }
            _ => Point {
                a,
                f: f64::INFINITY,
                d: f64::NAN,
                g: DVector::zeros(0),
            },
        }
    }

    fn armijo(&self, pt: &Point) -> bool {
        pt.f <= self.f0 + C1 * pt.a * self.d0
    }

    fn curvature(&self, pt: &Point) -> bool {
        pt.d.abs() <= -C2 * self.d0
    }

    fn run(&mut self, a_init: f64) -> Option<Point> {
        let start = Point {
            a: 0.0,
            f: self.f0,
            d: self.d0,
            g: DVector::zeros(0),
        };
        let mut prev = start;
        let mut a = a_init;
        for i in 0..30 {
            let cur = self.at(a);
            if !cur.f.is_finite() {
                return self.zoom(prev, cur);
            }
            if !self.armijo(&cur) || (i > 0 && cur.f >= prev.f) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.d >= 0.0 {
                return self.zoom(cur, prev);
            }
            prev = cur;
            a *= 2.0;
        }
        None
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Option<Point> {
        for _ in 0..40 {
            let (left, right) = if lo.a < hi.a { (lo.a, hi.a) } else { (hi.a, lo.a) };
            let width = right - left;
            if width <= 1e-16 * right.max(1e-300) {
                break;
            }
            let interp = if hi.f.is_finite() && hi.d.is_finite() {
                cubic_min(lo.a, lo.f, lo.d, hi.a, hi.f, hi.d)
            } else {
                None
            };
            let a = match interp {
                Some(a) if a > left + 0.1 * width && a < right - 0.1 * width => a,
                _ => 0.5 * (lo.a + hi.a),
            };
            let cur = self.at(a);
            if !cur.f.is_finite() || !self.armijo(&cur) || cur.f >= lo.f {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if cur.d * (hi.a - lo.a) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        // Sufficient decrease without the curvature condition.
        (lo.a > 0.0 && lo.f < self.f0).then_some(lo)
    }
}

pub fn minimize<F>(mut eval: F, x0: &[f64], opts: &BfgsOptions) -> Option<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut f, g0) = eval(x0)?;
    if !f.is_finite() || !g0.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut x = DVector::from_column_slice(x0);
    let mut g = DVector::from_vec(g0);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut message = String::from("iteration limit reached");
    let mut converged = false;

    while iterations < opts.max_iter {
        let gn = inf_norm(&g);
        if gn <= opts.tol * f.abs().max(1.0) {
            converged = true;
            message = "gradient tolerance reached".into();
            break;
        }
        let mut p = -(&hinv * &g);
        let mut d0 = p.dot(&g);
        if !(d0 < 0.0) {
            hinv = DMatrix::identity(n, n);
            fresh = true;
            p = -g.clone();
            d0 = p.dot(&g);
        }
        let mut a_init = if fresh && iterations == 0 { (1.0 / gn).min(1.0) } else { 1.0 };
        let pmax = inf_norm(&p);
        if a_init * pmax > opts.max_step {
            a_init = opts.max_step / pmax;
        }
        let mut search = Search {
            eval: &mut eval,
            x: &x,
            p: &p,
            f0: f,
            d0,
            evaluations: 0,
        };
        let found = search.run(a_init);
        evaluations += search.evaluations;
        let Some(pt) = found else {
            if fresh {
                message = "line search failed along steepest descent".into();
                break;
            }
            hinv = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        iterations += 1;
        let s = &p * pt.a;
        let y = &pt.g - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                hinv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(s (Hy)ᵀ + Hy sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
            hinv -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho);
            fresh = false;
        }
        let f_old = f;
        x += s;
        f = pt.f;
        g = pt.g;
        if (f_old - f).abs() <= 1e-16 * f.abs().max(1.0) && inf_norm(&g) <= 1e2 * opts.tol * f.abs().max(1.0) {
            // Objective stalled at rounding level just shy of the tolerance.
            converged = inf_norm(&g) <= opts.tol * f.abs().max(1.0);
            message = "objective change below rounding".into();
            break;
        }
    }
    let grad_norm = inf_norm(&g);
    if !converged && grad_norm <= opts.tol * f.abs().max(1.0) {
        converged = true;
        message = "gradient tolerance reached".into();
    }
    Some(BfgsOutcome {
        x: x.as_slice().to_vec(),
        f,
        g: g.as_slice().to_vec(),
        iterations,
        evaluations,
        converged,
        grad_norm,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = BfgsOptions {
            tol: 1e-10,
            ..Default::default()
        };
        let out = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!(out.converged, "{}", out.message);
        assert!((out.x[0] - 1.0).abs() < 1e-7 && (out.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn solves_ill_scaled_quadratic() {
        let scales = [1.0, 1e2, 1e4, 1e-2];
        let f = |x: &[f64]| {
            let v = x.iter().zip(&scales).map(|(x, s)| s * (x - 1.0).powi(2)).sum::<f64>();
            let g = x.iter().zip(&scales).map(|(x, s)| 2.0 * s * (x - 1.0)).collect();
            Some((v, g))
        };
        let opts = BfgsOptions {
            tol: 1e-8,
            ..Default::default()
        };
        let out = minimize(f, &[0.0; 4], &opts).unwrap();
        assert!(out.converged, "{out:?}");
        for x in out.x {
            assert!((x - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn survives_failed_evaluations() {
        // Undefined for x <= 0, minimum at x = 2.
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                None
            } else {
                Some((x[0] - 2.0 * x[0].ln(), vec![1.0 - 2.0 / x[0]]))
            }
        };
        let out = minimize(f, &[10.0], &BfgsOptions { tol: 1e-10, ..Default::default() }).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        // f(a) = (a - 1)^3 - 3(a - 1): local minimum at a = 2.
        let f = |a: f64| (a - 1.0f64).powi(3) - 3.0 * (a - 1.0);
        let d = |a: f64| 3.0 * (a - 1.0f64).powi(2) - 3.0;
        let m = cubic_min(1.5, f(1.5), d(1.5), 3.0, f(3.0), d(3.0)).unwrap();
        assert!((m - 2.0).abs() < 1e-12);
    }
}
