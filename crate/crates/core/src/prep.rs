//! Data ingestion, standardization, and multicollinearity screening.
//!
//! A schema file assigns each CSV column a role, one column per line:
//!
//! ```text
//! # column        role        options
//! violations      response
//! avg_farm_size   covariate
//! labor_intensity covariate   keep-scale
//! state           factor
//! ```
//!
//! `keep-scale` excludes a covariate from [`standardize_schema`]. Columns in
//! the CSV that the schema does not mention are ignored.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::io::Read;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Covariate, Dataset, Factor};
use crate::error::{Error, Result};

/// VIF above which a covariate is flagged.
pub const VIF_THRESHOLD: f64 = 10.0;
/// VIF above which a covariate is considered an exact linear combination of the others.
pub const VIF_ALIASED: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Response,
    Covariate,
    Factor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    pub keep_scale: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn parse(text: &str) -> Result<Self> {
        let mut columns: Vec<ColumnSpec> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Schema(format!("line {}: {m}", lineno + 1));
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let (name, role) = match tokens.as_slice() {
                [name, role, ..] => (*name, *role),
                _ => return Err(err(format!("expected `<column> <role>`, found `{line}`"))),
            };
            let role = match role {
                "response" => Role::Response,
                "covariate" => Role::Covariate,
                "factor" => Role::Factor,
                other => return Err(err(format!("unknown role `{other}`"))),
            };
            let mut keep_scale = false;
            for opt in &tokens[2..] {
                match *opt {
                    "keep-scale" if role == Role::Covariate => keep_scale = true,
                    other => return Err(err(format!("unknown option `{other}` for column `{name}`"))),
                }
            }
            if columns.iter().any(|c| c.name == name) {
                return Err(err(format!("column `{name}` listed twice")));
            }
            columns.push(ColumnSpec {
                name: name.to_string(),
                role,
                keep_scale,
            });
        }
        let responses = columns.iter().filter(|c| c.role == Role::Response).count();
        if responses != 1 {
            return Err(Error::Schema(format!(
                "schema must name exactly one response column, found {responses}"
            )));
        }
        Ok(Self { columns })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read schema `{}`: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn response(&self) -> &str {
        &self
            .columns
            .iter()
            .find(|c| c.role == Role::Response)
            .expect("validated")
            .name
    }

    fn names_with(&self, role: Role) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn covariates(&self) -> Vec<String> {
        self.names_with(Role::Covariate)
    }

    pub fn factors(&self) -> Vec<String> {
        self.names_with(Role::Factor)
    }

    /// Covariates to standardize: all except those marked `keep-scale`.
    pub fn scaled_covariates(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.role == Role::Covariate && !c.keep_scale)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.columns {
            let role = match c.role {
                Role::Response => "response",
                Role::Covariate => "covariate",
                Role::Factor => "factor",
            };
            let _ = write!(out, "{} {role}", c.name);
            if c.keep_scale {
                out.push_str(" keep-scale");
            }
            out.push('\n');
        }
        out
    }
}

/// A loaded dataset and how many input rows were discarded.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub data: Dataset,
    pub dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

fn parse_count(cell: &str) -> Option<u64> {
    let c = cell.trim();
    if let Ok(v) = c.parse::<u64>() {
        return Some(v);
    }
    let f: f64 = c.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f < 9.0e15).then_some(f as u64)
}

/// Reads a CSV with a header row. Rows with a blank or `NA` cell in any
/// schema column are dropped and counted; factor levels are encoded in
/// order of first appearance.
pub fn load_csv_reader<R: Read>(reader: R, schema: &Schema) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let mut positions = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        match index.get(c.name.as_str()) {
            Some(&i) => positions.push(i),
            None => {
                return Err(Error::Schema(format!("CSV header has no column `{}`", c.name)));
            }
        }
    }

    let mut response = Vec::new();
    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); schema.columns.len()];
    let mut labels: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
    let mut dropped = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cells: Vec<&str> = positions.iter().map(|&i| record.get(i).unwrap_or("")).collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        for (j, (col, cell)) in schema.columns.iter().zip(&cells).enumerate() {
            let parse_err = |message: &str| Error::Parse {
                row,
                column: col.name.clone(),
                message: format!("{message}: `{}`", cell.trim()),
            };
            match col.role {
                Role::Response => {
                    response.push(parse_count(cell).ok_or_else(|| parse_err("expected a non-negative integer count"))?)
                }
                Role::Covariate => {
                    let v: f64 = cell.trim().parse().map_err(|_| parse_err("expected a number"))?;
                    if !v.is_finite() {
                        return Err(parse_err("expected a finite number"));
                    }
                    numeric[j].push(v);
                }
                Role::Factor => labels[j].push(cell.trim().to_string()),
            }
        }
    }
    if dropped > 0 {
        warn!("dropped {dropped} row(s) with missing values");
    }
    if response.is_empty() {
        return Err(Error::Data("no complete rows remain after dropping missing values".into()));
    }
    let mut covariates = Vec::new();
    let mut factors = Vec::new();
    for (j, col) in schema.columns.iter().enumerate() {
        match col.role {
            Role::Covariate => covariates.push(Covariate {
                name: col.name.clone(),
                values: std::mem::take(&mut numeric[j]),
            }),
            Role::Factor => factors.push(Factor::from_labels(&col.name, &labels[j])),
            Role::Response => {}
        }
    }
    let data = Dataset::new(schema.response(), response, covariates, factors)?;
    Ok(Loaded {
        data,
        dropped_rows: dropped,
    })
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Loaded> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open `{}`: {e}", path.display())))?;
    load_csv_reader(std::io::BufReader::new(file), schema)
}

/// Writes `data` as CSV: response, covariates, then factors. Numbers use the
/// shortest representation that parses back to the same value.
pub fn write_csv<W: std::io::Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![data.response_name.clone()];
    header.extend(data.covariates.iter().map(|c| c.name.clone()));
    header.extend(data.factors.iter().map(|f| f.name.clone()));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(data.response[i].to_string());
        rec.extend(data.covariates.iter().map(|c| format!("{:?}", c.values[i])));
        rec.extend(data.factors.iter().map(|f| f.levels[f.codes[i] as usize].clone()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Schema describing a dataset as written by [`write_csv`].
pub fn schema_for(data: &Dataset) -> Schema {
    let mut columns = vec![ColumnSpec {
        name: data.response_name.clone(),
        role: Role::Response,
        keep_scale: false,
    }];
    columns.extend(data.covariates.iter().map(|c| ColumnSpec {
        name: c.name.clone(),
        role: Role::Covariate,
        keep_scale: false,
    }));
    columns.extend(data.factors.iter().map(|f| ColumnSpec {
        name: f.name.clone(),
        role: Role::Factor,
        keep_scale: false,
    }));
    Schema { columns }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation (divisor n - 1).
    pub sd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub columns: Vec<ColumnScale>,
}

impl StandardizationParams {
    /// Applies stored scales to another dataset with the same columns.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let mut out = data.clone();
        for s in &self.columns {
            let col = out
                .covariate_mut(&s.name)
                .ok_or_else(|| Error::Config(format!("unknown covariate `{}`", s.name)))?;
            for v in &mut col.values {
                *v = (*v - s.mean) / s.sd;
            }
        }
        Ok(out)
    }
}

/// Mean and sample standard deviation; a single value has zero spread.
fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn has_zero_variance(mean: f64, sd: f64) -> bool {
    !(sd > 1e-12 * mean.abs().max(1.0))
}

/// Z-transforms the named covariates with the sample standard deviation.
pub fn standardize<S: AsRef<str>>(data: &Dataset, columns: &[S]) -> Result<(Dataset, StandardizationParams)> {
    let mut params = StandardizationParams::default();
    for name in columns {
        let name = name.as_ref();
        let col = data
            .covariate(name)
            .ok_or_else(|| Error::Config(format!("unknown covariate `{name}`")))?;
        let (mean, sd) = mean_sd(&col.values);
        if has_zero_variance(mean, sd) {
            return Err(Error::ZeroVariance(name.to_string()));
        }
        params.columns.push(ColumnScale {
            name: name.to_string(),
            mean,
            sd,
        });
    }
    let out = params.apply(data)?;
    Ok((out, params))
}

/// Standardizes every covariate the schema does not mark `keep-scale`.
pub fn standardize_schema(data: &Dataset, schema: &Schema) -> Result<(Dataset, StandardizationParams)> {
    standardize(data, &schema.scaled_covariates())
}

/// Numeric column by name; the response counts as a column.
fn numeric_column(data: &Dataset, name: &str) -> Result<Vec<f64>> {
    if name == data.response_name {
        return Ok(data.response.iter().map(|&v| v as f64).collect());
    }
    data.covariate(name)
        .map(|c| c.values.clone())
        .ok_or_else(|| Error::Config(format!("unknown numeric column `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// Row-major, symmetric, unit diagonal.
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("column");
        for n in &self.names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.values) {
            out.push_str(n);
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Pearson correlations between numeric columns (covariates or the response).
pub fn correlation_matrix<S: AsRef<str>>(data: &Dataset, columns: &[S]) -> Result<CorrelationMatrix> {
    if columns.len() < 2 {
        return Err(Error::Config("correlation matrix needs at least two columns".into()));
    }
    let names: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
    let centered: Vec<Vec<f64>> = names
        .iter()
        .map(|name| {
            let col = numeric_column(data, name)?;
            let (mean, sd) = mean_sd(&col);
            if has_zero_variance(mean, sd) {
                return Err(Error::ZeroVariance(name.clone()));
            }
            Ok(col.iter().map(|v| v - mean).collect())
        })
        .collect::<Result<_>>()?;
    let p = names.len();
    let ss: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut values = vec![vec![0.0; p]; p];
    for i in 0..p {
        values[i][i] = 1.0;
        for j in 0..i {
            let cross: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (cross / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { names, values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifEntry {
    pub name: String,
    pub vif: f64,
    pub aliased: bool,
}

/// Variance inflation factors `1 / (1 - R^2)` from regressing each column on
/// the others with an intercept.
pub fn vif<S: AsRef<str>>(data: &Dataset, columns: &[S]) -> Result<Vec<VifEntry>> {
    let n = data.n();
    let p = columns.len();
    if n <= p + 1 {
        return Err(Error::Rank(format!(
            "VIF needs more than {} rows for {p} columns, found {n}",
            p + 1
        )));
    }
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let col = numeric_column(data, c.as_ref())?;
            let (mean, _) = mean_sd(&col);
            Ok(col.iter().map(|v| v - mean).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(p);
    for (j, name) in columns.iter().enumerate() {
        let name = name.as_ref().to_string();
        let target = DVector::from_column_slice(&centered[j]);
        let tss = target.norm_squared();
        if tss == 0.0 {
            return Err(Error::ZeroVariance(name));
        }
        let rss = if p == 1 {
            tss
        } else {
            let others = DMatrix::from_fn(n, p - 1, |i, k| centered[if k < j { k } else { k + 1 }][i]);
            let svd = others.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let beta = svd
                .solve(&target, smax * 1e-13 * n as f64)
                .map_err(|e| Error::Rank(e.to_string()))?;
            (target - others * beta).norm_squared()
        };
        let value = tss / rss;
        let aliased = !(value <= VIF_ALIASED);
        out.push(VifEntry {
            name,
            vif: if aliased { f64::INFINITY } else { value },
            aliased,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningRow {
    pub covariate: String,
    pub vif: f64,
    pub aliased: bool,
    /// Absolute Pearson correlation with the response.
    pub abs_corr_response: f64,
    pub flagged: bool,
}

/// Correlations and VIFs for an analyst to review; nothing is dropped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningReport {
    pub correlation: CorrelationMatrix,
    pub rows: Vec<ScreeningRow>,
    pub threshold: f64,
}

pub fn screen<S: AsRef<str>>(data: &Dataset, covariates: &[S]) -> Result<ScreeningReport> {
    let mut names: Vec<String> = covariates.iter().map(|c| c.as_ref().to_string()).collect();
    let vifs = vif(data, &names)?;
    names.push(data.response_name.clone());
    let correlation = correlation_matrix(data, &names)?;
    let resp = names.len() - 1;
    let rows = vifs
        .into_iter()
        .enumerate()
        .map(|(j, v)| ScreeningRow {
            abs_corr_response: correlation.values[j][resp].abs(),
            flagged: v.aliased || v.vif > VIF_THRESHOLD,
            covariate: v.name,
            vif: v.vif,
            aliased: v.aliased,
        })
        .collect();
    Ok(ScreeningReport {
        correlation,
        rows,
        threshold: VIF_THRESHOLD,
    })
}

impl ScreeningReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("covariate,vif,aliased,abs_corr_response,flagged\n");
        for r in &self.rows {
            let vif = if r.aliased { "aliased".to_string() } else { format!("{:.6}", r.vif) };
            let _ = writeln!(
                out,
                "{},{vif},{},{:.6},{}",
                r.covariate, r.aliased, r.abs_corr_response, r.flagged
            );
        }
        out
    }
}

impl fmt::Display for ScreeningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.covariate.len()).max().unwrap_or(9).max(9);
        writeln!(f, "{:<w$}  {:>10}  {:>10}  flag", "Covariate", "VIF", "|r(y)|")?;
        for r in &self.rows {
            let vif = if r.aliased { "aliased".to_string() } else { format!("{:.3}", r.vif) };
            let flag = if r.flagged { "high" } else { "" };
            writeln!(f, "{:<w$}  {vif:>10}  {:>10.3}  {flag}", r.covariate, r.abs_corr_response)?;
        }
        writeln!(f, "VIF threshold: {}", self.threshold)
    }
}
