use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mzinb"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture_data() -> PathBuf {
    fixtures().join("cases/data.csv")
}

fn fixture_schema() -> PathBuf {
    fixtures().join("cases/schema.txt")
}

fn model(name: &str) -> PathBuf {
    fixtures().join("models").join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    bin().arg("-q").args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn fit(out: &Path, model_name: &str, extra: &[&str]) -> Output {
    let (data, schema, m) = (fixture_data(), fixture_schema(), model(model_name));
    let mut args = vec!["fit", "--data", s(&data), "--schema", s(&schema), "--model", s(&m), "--out", s(out)];
    args.extend_from_slice(extra);
    run(&args)
}

fn fit_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("fit.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn fixture_regenerates_byte_identically() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixtures().join("sim_config.toml");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["data.csv", "schema.txt", "truth.json", "config.toml"] {
        let fresh = fs::read(tmp.path().join(name)).unwrap();
        let checked_in = fs::read(fixtures().join("cases").join(name)).unwrap();
        assert!(fresh == checked_in, "{name} differs from the checked-in fixture");
    }
}

#[test]
fn simulate_twice_is_byte_identical_and_records_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixtures().join("sim_config.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["data.csv", "schema.txt", "truth.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "simulate");
}

#[test]
fn saturated_simulation_has_all_zero_response() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "sat.toml",
        "seed = 1\nn = 300\n[model]\nfamily = \"zinb\"\ncond_covariates = [\"x1\"]\n\
         [truth]\ncond = [1.0, 0.5]\nzi = [30.0]\nalpha = 0.5\n",
    );
    let out = tmp.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("data.csv"));
    assert_eq!(rows.len(), 300);
    assert!(rows.iter().all(|r| r[0] == "0"));
}

#[test]
fn every_artifact_has_a_sidecar_pointing_at_the_manifest() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "preprocess", "--data", s(&fixture_data()), "--schema", s(&fixture_schema()), "--out", s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for name in outputs {
        let name = name.as_str().unwrap();
        let meta: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(tmp.path().join(format!("{name}.meta.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(meta["manifest"], "manifest.json");
        assert_eq!(meta["artifact"], name);
    }
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn preprocess_fixture_reports_nine_covariates() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "preprocess", "--data", s(&fixture_data()), "--schema", s(&fixture_schema()), "--out", s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let header = fs::read_to_string(tmp.path().join("screening.csv")).unwrap();
    assert!(header.lines().next().unwrap().split(',').any(|c| c == "vif"));
    let rows = csv_rows(&tmp.path().join("screening.csv"));
    assert_eq!(rows.len(), 9);
    for r in &rows {
        let v: f64 = r[1].parse().unwrap();
        assert!((1.0..1.1).contains(&v), "{} has VIF {v}", r[0]);
    }
    let standardized = csv_rows(&tmp.path().join("standardized.csv"));
    assert_eq!(standardized.len(), 11976);
}

#[test]
fn missing_schema_exits_2_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("no_such_schema.txt");
    let o = run(&["preprocess", "--data", s(&fixture_data()), "--schema", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_schema.txt"), "{}", stderr(&o));
}

#[test]
fn constant_column_exits_3_naming_the_column() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "d.csv", "y,flat,x\n1,2.0,0.1\n0,2.0,0.5\n3,2.0,-0.3\n");
    let schema = write(tmp.path(), "s.txt", "y response\nflat covariate\nx covariate\n");
    let o = run(&["preprocess", "--data", s(&data), "--schema", s(&schema), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("flat"), "{}", stderr(&o));
}

#[test]
fn fixture_mzinb4_report_has_full_layout() {
    let tmp = TempDir::new().unwrap();
    let o = fit(tmp.path(), "mzinb4", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&tmp.path().join("coefficients.csv"));
    let count = |section: &str| rows.iter().filter(|r| r[0] == section).count();
    assert_eq!(count("conditional"), 10);
    assert_eq!(count("zero_inflated"), 10);
    assert_eq!(count("dispersion"), 1);
    assert_eq!(count("variance_component"), 4);
    let text = fs::read_to_string(tmp.path().join("coefficients.txt")).unwrap();
    assert!(text.contains("Conditional Model") && text.contains("Zero-inflated Model"));
    assert!(text.trim_end().ends_with("Significant codes: 0 ***, 0.001 **, 0.01 *"));
    let fit = fit_json(tmp.path());
    assert_eq!(fit["n"], 11976);
    assert_eq!(fit["k"], 25);
    assert_eq!(fit["converged"], true);
}

#[test]
fn poisson_with_zi_terms_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let o = fit(tmp.path(), "zinb", &["--family", "poisson"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let cfg = write(tmp.path(), "bad.toml", "family = \"poisson\"\nzi_covariates = [\"min_wage\"]\n");
    let (data, schema) = (fixture_data(), fixture_schema());
    let o = run(&["fit", "--data", s(&data), "--schema", s(&schema), "--model", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn intercept_only_nb_has_two_parameters() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "nb0.toml", "family = \"nb\"\n");
    let (data, schema) = (fixture_data(), fixture_schema());
    let out = tmp.path().join("out");
    let o = run(&["fit", "--data", s(&data), "--schema", s(&schema), "--model", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = fit_json(&out);
    assert_eq!(fit["k"], 2);
    assert_eq!(fit["label"], "nb0");
}

#[test]
fn non_convergence_exits_4_and_still_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let o = fit(tmp.path(), "zinb", &["--max-iter", "2"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert_eq!(fit_json(tmp.path())["converged"], false);
    assert!(tmp.path().join("coefficients.txt").exists());
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn compare_six_fixture_fits_gives_ladder() {
    let tmp = TempDir::new().unwrap();
    let ladder = ["nb", "zinb", "mzinb1", "mzinb2", "mzinb3", "mzinb4"];
    let mut files = Vec::new();
    for m in ladder {
        let dir = tmp.path().join(m);
        let o = fit(&dir, m, &["--no-se"]);
        assert!(o.status.success(), "{m}: {}", stderr(&o));
        files.push(dir.join("fit.json"));
    }
    let out = tmp.path().join("cmp");
    let mut args = vec!["compare".to_string()];
    args.extend(files.iter().rev().map(|f| s(f).to_string()));
    args.extend(["--out".to_string(), s(&out).to_string()]);
    let o = bin().arg("-q").args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("comparison.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ladder);
    let ks: Vec<&str> = rows.iter().map(|r| r[6].as_str()).collect();
    assert_eq!(ks, ["11", "21", "22", "23", "24", "25"]);
    assert_eq!(csv_rows(&out.join("lrt.csv")).len(), 5);
    let text = fs::read_to_string(out.join("comparison.txt")).unwrap();
    assert!(text.contains("LRT zinb vs nb"));
}

#[test]
fn compare_single_file_has_no_lrt() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("nb");
    assert!(fit(&dir, "nb", &["--no-se"]).status.success());
    let out = tmp.path().join("cmp");
    let o = run(&["compare", s(&dir.join("fit.json")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("comparison.csv")).len(), 1);
    assert!(csv_rows(&out.join("lrt.csv")).is_empty());
    assert!(!fs::read_to_string(out.join("comparison.txt")).unwrap().contains("LRT"));
}

#[test]
fn compare_mismatched_data_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixtures().join("sim_config.toml");
    let other = tmp.path().join("other");
    assert!(run(&["simulate", "--config", s(&cfg), "--seed", "99", "--out", s(&other)]).status.success());
    let a = tmp.path().join("a");
    assert!(fit(&a, "nb", &["--no-se"]).status.success());
    let b = tmp.path().join("b");
    let (data, schema, m) = (other.join("data.csv"), other.join("schema.txt"), model("nb"));
    let o = run(&["fit", "--data", s(&data), "--schema", s(&schema), "--model", s(&m), "--label", "other", "--no-se", "--out", s(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["compare", s(&a.join("fit.json")), s(&b.join("fit.json")), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn summarize_by_industry_sums_to_fixture_total() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "summarize", "--data", s(&fixture_data()), "--schema", s(&fixture_schema()), "--by", "industry", "--out", s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&tmp.path().join("summary.csv"));
    assert_eq!(rows.len(), 19);
    let totals: Vec<u64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(totals.windows(2).all(|w| w[0] >= w[1]));
    let grand: u64 = csv_rows(&fixture_data()).iter().map(|r| r[0].parse::<u64>().unwrap()).sum();
    assert_eq!(totals.iter().sum::<u64>(), grand);
    let cases: usize = rows.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
    assert_eq!(cases, 11976);
}

#[test]
fn summarize_by_state_has_fifty_rows() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "summarize", "--data", s(&fixture_data()), "--schema", s(&fixture_schema()), "--by", "state", "--out", s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&tmp.path().join("summary.csv")).len(), 50);
}

#[test]
fn summarize_single_level_is_grand_total() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "d.csv", "y,g\n3,only\n0,only\n5,only\n");
    let schema = write(tmp.path(), "s.txt", "y response\ng factor\n");
    let o = run(&["summarize", "--data", s(&data), "--schema", s(&schema), "--by", "g", "--out", s(&tmp.path().join("o"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&tmp.path().join("o/summary.csv")), vec![vec!["only", "8", "3"]]);
}

#[test]
fn summarize_unknown_factor_exits_2() {
    let tmp = TempDir::new().unwrap();
    let o = run(&[
        "summarize", "--data", s(&fixture_data()), "--schema", s(&fixture_schema()), "--by", "county", "--out", s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("county"));
}

#[test]
fn fit_from_flags_without_model_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = fixtures().join("sim_config.toml");
    let sim = tmp.path().join("sim");
    assert!(run(&["simulate", "--config", s(&cfg), "--seed", "3", "--out", s(&sim)]).status.success());
    let out = tmp.path().join("fit");
    let (data, schema) = (sim.join("data.csv"), sim.join("schema.txt"));
    let o = run(&[
        "fit", "--data", s(&data), "--schema", s(&schema), "--family", "zinb", "--re-cond", "state,industry",
        "--re-zi", "state", "--standardize", "--threads", "1", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = fit_json(&out);
    assert_eq!(fit["k"], 24);
    assert!(out.join("standardization.json").exists());
}

#[test]
fn malformed_cell_exits_2_with_row_number() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "d.csv", "y,x\n1,0.5\n2,abc\n");
    let schema = write(tmp.path(), "s.txt", "y response\nx covariate\n");
    let o = run(&["fit", "--data", s(&data), "--schema", s(&schema), "--family", "poisson", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains('2'), "{}", stderr(&o));
}
