use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use super::load_inputs;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use mzinb::estimator::wald::wald_table;
use mzinb::{io, prep, Family, FitOptions, ModelSpec};

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Model config (TOML). Without it, every schema covariate enters both parts.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// poisson, nb, zip or zinb; overrides the model config.
    #[arg(long)]
    pub family: Option<String>,
    /// Comma-separated factors with random intercepts in the conditional part.
    #[arg(long, value_delimiter = ',')]
    pub re_cond: Option<Vec<String>>,
    /// Comma-separated factors with random intercepts in the inflation part.
    #[arg(long, value_delimiter = ',')]
    pub re_zi: Option<Vec<String>>,
    /// Standardize covariates not marked keep-scale before fitting.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Random restarts in addition to the deterministic start.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Skip the Hessian and standard errors.
    #[arg(long)]
    pub no_se: bool,
    /// Model name used in comparison tables.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn resolve_spec(args: &FitArgs, schema: &prep::Schema) -> CliResult<ModelSpec> {
    let mut spec = match &args.model {
        Some(path) => io::load_model_spec(path)?,
        None => {
            let family: Family = args.family.as_deref().unwrap_or("zinb").parse()?;
            let covariates = schema.covariates();
            let spec = ModelSpec::new(family).with_cond_covariates(&covariates);
            if family.zero_inflated() {
                spec.with_zi_covariates(&covariates)
            } else {
                spec
            }
        }
    };
    if let Some(family) = &args.family {
        spec.family = family.parse()?;
    }
    if let Some(f) = &args.re_cond {
        spec.cond_factors = non_empty(f);
    }
    if let Some(f) = &args.re_zi {
        spec.zi_factors = non_empty(f);
    }
    spec.check()?;
    Ok(spec)
}

fn non_empty(list: &[String]) -> Vec<String> {
    list.iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn default_label(args: &FitArgs, spec: &ModelSpec) -> String {
    if let Some(label) = &args.label {
        return label.clone();
    }
    args.model
        .as_ref()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.family.name().to_string())
}

pub fn run(args: &FitArgs) -> CliResult<()> {
    let opts = FitOptions {
        max_iter: args.max_iter,
        tol: args.tol,
        seed: args.seed,
        restarts: args.restarts,
        compute_se: !args.no_se,
        ..FitOptions::default()
    };
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(CliError::Usage(format!("--tol must be positive, got {}", opts.tol)));
    }
    let options = json!({
        "data": args.data.display().to_string(),
        "schema": args.schema.display().to_string(),
        "model": args.model.as_ref().map(|p| p.display().to_string()),
        "family": args.family,
        "re_cond": args.re_cond,
        "re_zi": args.re_zi,
        "standardize": args.standardize,
        "max_iter": opts.max_iter,
        "tol": opts.tol,
        "restarts": opts.restarts,
        "compute_se": opts.compute_se,
    });
    let mut run = Run::new("fit", &args.out, options, Some(args.seed))?;
    let (schema, data) = load_inputs(&mut run, &args.data, &args.schema)?;
    if let Some(model) = &args.model {
        run.record_input(model)?;
    }
    let spec = resolve_spec(args, &schema)?;
    let data = if args.standardize {
        let (scaled, params) = prep::standardize_schema(&data, &schema)?;
        run.artifact(
            "standardization.json",
            &serde_json::to_vec_pretty(&params).expect("serializable"),
        )?;
        scaled
    } else {
        data
    };

    let label = default_label(args, &spec);
    let fit = mzinb::estimator::fit_labeled(&data, &spec, &opts, &label)?;
    let table = wald_table(&fit);

    run.artifact("fit.json", io::fit_result_to_json(&fit)?.as_bytes())?;
    run.artifact("coefficients.csv", table.to_csv().as_bytes())?;
    run.artifact("coefficients.txt", table.to_string().as_bytes())?;
    print!("{table}");
    println!(
        "logLik = {:.3}, k = {}, AIC = {:.3}, BIC = {:.3}",
        fit.log_lik,
        fit.k,
        fit.aic(),
        fit.bic()
    );
    if fit.boundary.any() {
        log::warn!("estimate on the parameter boundary: {:?}", fit.boundary);
    }
    if fit.hessian_singular {
        log::warn!("Hessian is singular; standard errors are unavailable");
    }
    run.finish()?;

    if !fit.converged {
        return Err(CliError::NotConverged {
            message: fit.message.clone(),
            out: args.out.clone(),
        });
    }
    Ok(())
}
