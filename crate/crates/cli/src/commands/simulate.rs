use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::json;

use super::dataset_csv;
use crate::error::CliResult;
use crate::manifest::Run;
use mzinb::prep;
use mzinb::sim::{self, SimConfig};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct TruthRecord<'a> {
    seed: u64,
    param_names: Vec<String>,
    theta: &'a [f64],
    random_effects: &'a [f64],
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = SimConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    let options = json!({
        "config": args.config.display().to_string(),
        "n": cfg.n,
    });
    let mut run = Run::new("simulate", &args.out, options, Some(cfg.seed))?;
    run.record_input(&args.config)?;

    let simulation = sim::simulate(&cfg)?;
    let truth = TruthRecord {
        seed: cfg.seed,
        param_names: cfg.layout().names.clone(),
        theta: &simulation.theta,
        random_effects: &simulation.random_effects,
    };

    run.artifact("data.csv", &dataset_csv(&simulation.data)?)?;
    run.artifact("schema.txt", prep::schema_for(&simulation.data).to_text().as_bytes())?;
    run.artifact("truth.json", &serde_json::to_vec_pretty(&truth).expect("serializable"))?;
    run.artifact("config.toml", cfg.to_toml_string()?.as_bytes())?;
    log::info!(
        "simulated {} rows, {} nonzero",
        simulation.data.n(),
        simulation.data.response.iter().filter(|&&y| y > 0).count()
    );
    run.finish()
}
