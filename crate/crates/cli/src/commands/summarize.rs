use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use super::load_inputs;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Factor to aggregate the response by.
    #[arg(long)]
    pub by: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelTotal {
    pub level: String,
    pub total: u64,
    pub cases: usize,
}

/// Response totals per level, largest first, ties by label.
pub fn level_totals(data: &mzinb::Dataset, factor: &str) -> Option<Vec<LevelTotal>> {
    let f = data.factor(factor)?;
    let mut acc: BTreeMap<&str, (u64, usize)> = BTreeMap::new();
    for (&code, &y) in f.codes.iter().zip(&data.response) {
        let e = acc.entry(f.levels[code as usize].as_str()).or_default();
        e.0 += y;
        e.1 += 1;
    }
    let mut rows: Vec<LevelTotal> = acc
        .into_iter()
        .map(|(level, (total, cases))| LevelTotal {
            level: level.to_string(),
            total,
            cases,
        })
        .collect();
    rows.sort_by(|a, b| b.total.cmp(&a.total).then_with(|| a.level.cmp(&b.level)));
    Some(rows)
}

pub fn run(args: &SummarizeArgs) -> CliResult<()> {
    let options = json!({
        "data": args.data.display().to_string(),
        "schema": args.schema.display().to_string(),
        "by": args.by,
    });
    let mut run = Run::new("summarize", &args.out, options, None)?;
    let (_, data) = load_inputs(&mut run, &args.data, &args.schema)?;
    let rows = level_totals(&data, &args.by).ok_or_else(|| {
        CliError::Usage(format!("`{}` is not a factor column in the schema", args.by))
    })?;

    let mut csv = String::from("level,total,cases\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.level, r.total, r.cases);
    }
    run.artifact("summary.csv", csv.as_bytes())?;
    print!("{csv}");
    run.finish()
}
