//! Coefficient tables with Wald tests.

use std::fmt::{self, Write as _};

use serde::Serialize;

use super::FitResult;
use crate::frame::INTERCEPT;

pub const SIGNIFICANCE_FOOTER: &str = "Significant codes: 0 ***, 0.001 **, 0.01 *";

/// Incidence rate ratio: multiplicative change in the mean per unit increase.
pub fn irr(estimate: f64) -> f64 {
    estimate.exp()
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Three decimals; anything below 0.001 prints as `0.000`.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "0.000".to_string()
    } else {
        format!("{p:.3}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
}

impl CoefficientRow {
    pub fn stars(&self) -> &'static str {
        self.p.map(significance_stars).unwrap_or("")
    }
}

/// Wald table split into the conditional and zero-inflation parts, followed
/// by the dispersion and random-effect standard deviations on their natural
/// scale (delta-method standard errors, no tests).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CoefficientTable {
    pub conditional: Vec<CoefficientRow>,
    pub zero_inflated: Vec<CoefficientRow>,
    pub dispersion: Option<CoefficientRow>,
    pub variance_components: Vec<CoefficientRow>,
}

fn term_label(raw: &str) -> String {
    if raw == INTERCEPT {
        "(Intercept)".to_string()
    } else {
        raw.to_string()
    }
}

pub fn wald_table(fit: &FitResult) -> CoefficientTable {
    let mut table = CoefficientTable::default();
    for (i, name) in fit.param_names.iter().enumerate() {
        let est = fit.theta_hat[i];
        let se = fit.se.get(i).copied().flatten();
        let tested = || CoefficientRow {
            term: String::new(),
            estimate: est,
            se,
            z: fit.z.get(i).copied().flatten(),
            p: fit.p.get(i).copied().flatten(),
        };
        let natural = |term: String| CoefficientRow {
            term,
            estimate: est.exp(),
            se: se.map(|s| s * est.exp()),
            z: None,
            p: None,
        };
        if let Some(t) = name.strip_prefix("cond:") {
            table.conditional.push(CoefficientRow { term: term_label(t), ..tested() });
        } else if let Some(t) = name.strip_prefix("zi:") {
            table.zero_inflated.push(CoefficientRow { term: term_label(t), ..tested() });
        } else if name == "log_alpha" {
            table.dispersion = Some(natural("alpha".to_string()));
        } else if let Some(t) = name.strip_prefix("log_sd:") {
            let (part, factor) = t.split_once(':').unwrap_or(("", t));
            table.variance_components.push(natural(format!("sd {factor} ({part})")));
        }
    }
    table
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_else(|| "NA".to_string())
}

impl CoefficientTable {
    pub fn n_rows(&self) -> usize {
        self.conditional.len()
            + self.zero_inflated.len()
            + usize::from(self.dispersion.is_some())
            + self.variance_components.len()
    }

    /// Flat CSV with a `section` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,term,estimate,se,z,p,stars\n");
        let mut push = |section: &str, r: &CoefficientRow| {
            let _ = writeln!(
                out,
                "{section},{},{},{},{},{},{}",
                r.term,
                r.estimate,
                r.se.map(|v| v.to_string()).unwrap_or_default(),
                r.z.map(|v| v.to_string()).unwrap_or_default(),
                r.p.map(|v| v.to_string()).unwrap_or_default(),
                r.stars()
            );
        };
        for r in &self.conditional {
            push("conditional", r);
        }
        for r in &self.zero_inflated {
            push("zero_inflated", r);
        }
        if let Some(r) = &self.dispersion {
            push("dispersion", r);
        }
        for r in &self.variance_components {
            push("variance_component", r);
        }
        out
    }
}

impl fmt::Display for CoefficientTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .conditional
            .iter()
            .chain(&self.zero_inflated)
            .chain(&self.variance_components)
            .chain(&self.dispersion)
            .map(|r| r.term.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let header = |f: &mut fmt::Formatter<'_>, title: &str| -> fmt::Result {
            writeln!(f, "{title}")?;
            writeln!(
                f,
                "{:<width$}  {:>10}  {:>10}  {:>8}  {:>9}",
                "Term", "Estimate", "Std.Error", "z", "Pr(>|z|)"
            )
        };
        let tested = |f: &mut fmt::Formatter<'_>, rows: &[CoefficientRow]| -> fmt::Result {
            for r in rows {
                let p = r.p.map(|p| format!("{}{}", format_p(p), r.stars()));
                writeln!(
                    f,
                    "{:<width$}  {:>10.4}  {:>10}  {:>8}  {:>9}",
                    r.term,
                    r.estimate,
                    opt(r.se, 4),
                    opt(r.z, 3),
                    p.unwrap_or_else(|| "NA".into())
                )?;
            }
            Ok(())
        };
        header(f, "Conditional Model")?;
        tested(f, &self.conditional)?;
        if !self.zero_inflated.is_empty() {
            writeln!(f)?;
            header(f, "Zero-inflated Model")?;
            tested(f, &self.zero_inflated)?;
        }
        if self.dispersion.is_some() || !self.variance_components.is_empty() {
            writeln!(f)?;
            writeln!(f, "Dispersion and variance components")?;
            writeln!(f, "{:<width$}  {:>10}  {:>10}", "Term", "Estimate", "Std.Error")?;
            for r in self.dispersion.iter().chain(&self.variance_components) {
                writeln!(f, "{:<width$}  {:>10.4}  {:>10}", r.term, r.estimate, opt(r.se, 4))?;
            }
        }
        writeln!(f, "---")?;
        writeln!(f, "{SIGNIFICANCE_FOOTER}")
    }
}
