use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use super::{dataset_csv, load_inputs};
use crate::error::CliResult;
use crate::manifest::Run;
use mzinb::prep;

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Column schema file.
    #[arg(long)]
    pub schema: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &PreprocessArgs) -> CliResult<()> {
    let options = json!({
        "data": args.data.display().to_string(),
        "schema": args.schema.display().to_string(),
    });
    let mut run = Run::new("preprocess", &args.out, options, None)?;
    let (schema, data) = load_inputs(&mut run, &args.data, &args.schema)?;

    let (standardized, params) = prep::standardize_schema(&data, &schema)?;
    let covariates = schema.covariates();
    let report = prep::screen(&standardized, &covariates)?;
    for row in report.rows.iter().filter(|r| r.flagged) {
        log::warn!("covariate `{}` exceeds the VIF threshold", row.covariate);
    }

    run.artifact("standardized.csv", &dataset_csv(&standardized)?)?;
    run.artifact("schema.txt", schema.to_text().as_bytes())?;
    let params_json = serde_json::to_vec_pretty(&params).expect("serializable");
    run.artifact("standardization.json", &params_json)?;
    run.artifact("correlation.csv", report.correlation.to_csv().as_bytes())?;
    run.artifact("screening.csv", report.to_csv().as_bytes())?;
    run.artifact("screening.txt", report.to_string().as_bytes())?;
    print!("{report}");
    run.finish()
}
