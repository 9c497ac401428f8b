//! The files a full run leaves behind.

use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::ingest::{save_outcomes, Dataset};
use crate::pipeline::PipelineResult;
use crate::projection::save_model;
use crate::report::{build_report, write_report, Report};

pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const MODEL_FILE: &str = "model.bin";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const REPORT_RECORD_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub outcomes: PathBuf,
    pub model: PathBuf,
    /// Table and JSON record; absent when the graded detections lack ground truth.
    pub report: Option<(PathBuf, PathBuf)>,
}

/// Writes outcomes, model, and (when ground truth allows) the report under `dir`.
pub fn write_run(ds: &Dataset, result: &PipelineResult, dir: &Path) -> Result<RunArtifacts> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outcomes = dir.join(OUTCOMES_FILE);
    save_outcomes(&result.outcomes, &outcomes)?;
    let model = dir.join(MODEL_FILE);
    save_model(&result.net, &model)?;

    let report = match build_report(&result.outcomes, ds) {
        Ok(report) => Some(write_report_files(&report, dir)?),
        Err(Error::MissingGroundTruth(ids)) => {
            warn!(
                "skipping report: {} graded detections lack ground truth",
                ids.len()
            );
            None
        }
        Err(e) => return Err(e),
    };
    Ok(RunArtifacts {
        outcomes,
        model,
        report,
    })
}

pub fn write_report_files(report: &Report, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let table = dir.join(REPORT_TABLE_FILE);
    let record = dir.join(REPORT_RECORD_FILE);
    write_report(report, &table, &record)?;
    Ok((table, record))
}
