//! Model configuration and fit-result files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::frame::ModelSpec;

/// Parses a TOML model configuration, e.g.
///
/// ```toml
/// family = "zinb"
/// cond_covariates = ["x1", "x2"]
/// zi_covariates = ["x1"]
/// re_cond = ["state", "industry"]
/// re_zi = ["state"]
/// ```
pub fn parse_model_spec(text: &str) -> Result<ModelSpec> {
    let spec: ModelSpec =
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid model config: {e}")))?;
    spec.check()?;
    Ok(spec)
}

pub fn load_model_spec(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read model config `{}`: {e}", path.display())))?;
    parse_model_spec(&text)
}

pub fn model_spec_to_toml(spec: &ModelSpec) -> Result<String> {
    toml::to_string(spec).map_err(|e| Error::Config(e.to_string()))
}

/// Parses a fit-result JSON document and checks its internal consistency.
pub fn parse_fit_result(text: &str) -> Result<FitResult> {
    let fit: FitResult =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid fit result: {e}")))?;
    fit.spec.check()?;
    let k = fit.param_names.len();
    if fit.k != k
        || fit.theta_hat.len() != k
        || fit.se.len() != k
        || fit.z.len() != k
        || fit.p.len() != k
    {
        return Err(Error::Config("fit result has inconsistent parameter counts".into()));
    }
    let n_random: usize = fit.re_blocks.iter().map(|b| b.n_levels).sum();
    if fit.re_modes.len() != n_random || fit.boundary.variance_components.len() != fit.re_blocks.len() {
        return Err(Error::Config("fit result has inconsistent random-effect blocks".into()));
    }
    Ok(fit)
}

pub fn load_fit_result(path: impl AsRef<Path>) -> Result<FitResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read fit result `{}`: {e}", path.display())))?;
    parse_fit_result(&text)
}

pub fn fit_result_to_json(fit: &FitResult) -> Result<String> {
    serde_json::to_string_pretty(fit).map_err(|e| Error::Config(e.to_string()))
}
