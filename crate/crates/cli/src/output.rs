//! CSV rows and the JSON sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::{ReplicateRow, RunOutput, RunSummary};

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a ExperimentConfig,
    summary: &'a RunSummary,
}

pub fn write_csv<W: Write>(rows: &[ReplicateRow], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sidecar_json(out: &RunOutput) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(&Sidecar {
        config: &out.config,
        summary: &out.summary,
    })?)
}

/// Path of the sidecar next to `csv`: `run.csv` becomes `run.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes `<csv>` and its sidecar, creating parent directories.
pub fn write_run(out: &RunOutput, csv: &Path) -> anyhow::Result<()> {
    if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(&out.rows, BufWriter::new(File::create(csv)?))?;
    std::fs::write(sidecar_path(csv), sidecar_json(out)? + "\n")?;
    Ok(())
}
