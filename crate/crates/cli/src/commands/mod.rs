pub mod compare;
pub mod fit;
pub mod preprocess;
pub mod simulate;
pub mod summarize;

use std::path::Path;

use mzinb::prep::{self, Schema};
use mzinb::Dataset;

use crate::error::CliResult;
use crate::manifest::Run;

/// Loads a schema and CSV, recording both as run inputs.
pub fn load_inputs(run: &mut Run, data: &Path, schema: &Path) -> CliResult<(Schema, Dataset)> {
    let schema_def = Schema::load(schema)?;
    let loaded = prep::load_csv(data, &schema_def)?;
    run.record_input(data)?;
    run.record_input(schema)?;
    if loaded.dropped_rows > 0 {
        log::warn!(
            "dropped {} row(s) with missing values from `{}`",
            loaded.dropped_rows,
            data.display()
        );
    }
    Ok((schema_def, loaded.data))
}

pub fn dataset_csv(data: &Dataset) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    prep::write_csv(data, &mut buf)?;
    Ok(buf)
}
