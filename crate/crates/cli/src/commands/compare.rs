use std::fmt::Write;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use mzinb::{io, select, FitResult};

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Fit result files (fit.json) written by `fit`.
    #[arg(required = true)]
    pub fits: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn label_for(path: &std::path::Path, fit: &FitResult) -> String {
    if !fit.label.is_empty() {
        return fit.label.clone();
    }
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn run(args: &CompareArgs) -> CliResult<()> {
    let options = json!({
        "fits": args.fits.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let mut run = Run::new("compare", &args.out, options, None)?;
    let mut fits = Vec::with_capacity(args.fits.len());
    for path in &args.fits {
        let fit = io::load_fit_result(path)?;
        run.record_input(path)?;
        fits.push((label_for(path, &fit), fit));
    }
    if let Some((first_label, first)) = fits.first() {
        for (label, fit) in &fits[1..] {
            if fit.data_checksum != first.data_checksum || fit.n != first.n {
                return Err(CliError::Usage(format!(
                    "`{label}` and `{first_label}` were fitted to different data; \
                     comparisons require a common dataset"
                )));
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    for (label, _) in &fits {
        if !seen.insert(label.as_str()) {
            return Err(CliError::Usage(format!("duplicate model label `{label}`")));
        }
    }

    let table = select::compare(&fits)?;
    let mut lrt_csv = String::from("reduced,full,stat,df,p\n");
    for a in &table.lrts {
        let _ = writeln!(
            lrt_csv,
            "{},{},{:.6},{},{:.6e}",
            a.reduced, a.full, a.result.stat, a.result.df, a.result.p
        );
    }
    run.artifact("comparison.csv", table.to_csv().as_bytes())?;
    run.artifact("comparison.txt", table.to_string().as_bytes())?;
    run.artifact("lrt.csv", lrt_csv.as_bytes())?;
    print!("{table}");
    run.finish()
}
