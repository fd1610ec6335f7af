//! Replays the checked-in fuzz corpus through the same entry points.

use std::fs;
use std::path::{Path, PathBuf};

use mzinb::prep::{self, Schema};
use mzinb::sim::SimConfig;
use mzinb::io;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn schema_seeds_parse_and_round_trip() {
    for (path, bytes) in seeds("schema_parse") {
        let schema = Schema::parse(text(&bytes)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(Schema::parse(&schema.to_text()).unwrap().to_text(), schema.to_text());
    }
}

#[test]
fn csv_seeds_load() {
    let schema = Schema::parse("y response\nx1 covariate\nx2 covariate keep-scale\ng factor\n").unwrap();
    for (path, bytes) in seeds("csv_load") {
        let loaded = prep::load_csv_reader(&bytes[..], &schema).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        loaded.data.validate().unwrap();
    }
}

#[test]
fn model_config_seeds_round_trip() {
    for (path, bytes) in seeds("model_config") {
        let spec = io::parse_model_spec(text(&bytes)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(io::parse_model_spec(&io::model_spec_to_toml(&spec).unwrap()).unwrap(), spec);
    }
}

#[test]
fn sim_config_seeds_validate() {
    for (path, bytes) in seeds("sim_config") {
        SimConfig::from_toml_str(text(&bytes))
            .and_then(|c| c.validate())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn fit_result_seeds_never_panic() {
    let results: Vec<bool> = seeds("fit_result")
        .iter()
        .map(|(_, bytes)| io::parse_fit_result(text(bytes)).is_ok())
        .collect();
    assert!(results.contains(&true) && results.contains(&false));
}
