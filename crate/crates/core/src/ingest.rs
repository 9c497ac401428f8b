//! Detection manifests, raw embedding matrices, and outcome record files.
//!
//! A manifest is line-delimited JSON, one detection per line:
//!
//! ```text
//! {"id":"d1","image_id":"img1","label":"animalia;;;;;;animal","score":0.61,
//!  "top5":[["animalia;mammalia;carnivora;felidae;panthera;leo;lion",0.41]],
//!  "embedding_row":0,"ground_truth":"animalia;mammalia;carnivora;felidae;panthera;leo;lion"}
//! ```
//!
//! `embedding_row` indexes a sidecar matrix of little-endian `f32`, row-major,
//! [`EMBEDDING_DIM`] floats per row, no header. An inline `embedding` array may
//! be given instead.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PipelineOutcome;
use crate::taxonomy::{parse_label, Label, TaxonPath};

pub const EMBEDDING_DIM: usize = 768;
pub const MAX_TOP_K: usize = 5;

const OUTCOME_FORMAT: &str = "taxorefine-outcomes";
const OUTCOME_VERSION: u32 = 1;

/// One of the classifier's top-5 raw predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PreEnsembleEntry {
    pub label: TaxonPath,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub id: String,
    pub image_id: String,
    pub ensemble_label: Label,
    pub ensemble_score: f64,
    pub top5: Vec<PreEnsembleEntry>,
    pub embedding: Vec<f32>,
    pub ground_truth: Option<Label>,
}

impl Detection {
    /// Checks the per-detection invariants; the message is suitable for a schema error.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if !(0.0..=1.0).contains(&self.ensemble_score) {
            return Err(format!("score {} outside [0, 1]", self.ensemble_score));
        }
        if self.top5.len() > MAX_TOP_K {
            return Err(format!("top5 has {} entries", self.top5.len()));
        }
        for (i, entry) in self.top5.iter().enumerate() {
            if !(0.0..=1.0).contains(&entry.score) {
                return Err(format!("top5[{i}] score {} outside [0, 1]", entry.score));
            }
            if i > 0 && entry.score > self.top5[i - 1].score {
                return Err(format!("top5 scores increase at entry {i}"));
            }
        }
        if self.embedding.len() != EMBEDDING_DIM {
            return Err(format!(
                "embedding has {} components, expected {EMBEDDING_DIM}",
                self.embedding.len()
            ));
        }
        if let Some(i) = self.embedding.iter().position(|x| !x.is_finite()) {
            return Err(format!("embedding component {i} is not finite"));
        }
        if self.embedding.iter().all(|&x| x == 0.0) {
            return Err("embedding has zero norm".into());
        }
        Ok(())
    }

    pub fn embedding_f64(&self) -> Vec<f64> {
        crate::embedspace::to_f64(&self.embedding)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub detections: Vec<Detection>,
    pub source_uri: String,
}

impl Dataset {
    /// Validates every detection and id uniqueness.
    pub fn new(detections: Vec<Detection>, source_uri: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, d) in detections.iter().enumerate() {
            d.validate().map_err(|message| Error::Schema {
                line: i + 1,
                id: Some(d.id.clone()),
                message,
            })?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::DuplicateId(d.id.clone()));
            }
        }
        Ok(Dataset {
            detections,
            source_uri: source_uri.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Detection> {
        self.detections.iter().find(|d| d.id == id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    image_id: String,
    label: String,
    score: f64,
    #[serde(default)]
    top5: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<String>,
}

/// Reads a raw little-endian `f32` matrix with [`EMBEDDING_DIM`] columns.
pub fn read_embedding_matrix(path: &Path) -> Result<Vec<Vec<f32>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let row_bytes = EMBEDDING_DIM * 4;
    if bytes.len() % row_bytes != 0 {
        return Err(Error::Schema {
            line: 0,
            id: None,
            message: format!(
                "{}: {} bytes is not a whole number of {EMBEDDING_DIM}-float rows",
                path.display(),
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(row_bytes)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect())
}

pub fn write_embedding_matrix<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a [f32]>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        for x in row {
            out.write_all(&x.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads and validates a manifest; `embeddings` is required when any record uses
/// `embedding_row`.
pub fn load_manifest(manifest: &Path, embeddings: Option<&Path>) -> Result<Dataset> {
    let file = File::open(manifest).map_err(|e| Error::io(manifest, e))?;
    let matrix = embeddings.map(read_embedding_matrix).transpose()?;
    let mut detections = Vec::new();
    let mut seen = HashSet::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |id: Option<&str>, message: String| Error::Schema {
            line: line_no,
            id: id.map(str::to_string),
            message,
        };
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| schema(None, e.to_string()))?;
        let id = Some(record.id.as_str());

        let embedding = match (record.embedding, record.embedding_row) {
            (Some(inline), _) => inline,
            (None, Some(row)) => {
                let matrix = matrix.as_ref().ok_or_else(|| {
                    schema(id, "embedding_row given but no embeddings file".into())
                })?;
                matrix.get(row).cloned().ok_or_else(|| {
                    schema(
                        id,
                        format!("embedding_row {row} out of range ({} rows)", matrix.len()),
                    )
                })?
            }
            (None, None) => return Err(schema(id, "missing embedding or embedding_row".into())),
        };

        let label = |text: &str| parse_label(text).map_err(|e| schema(id, e.to_string()));
        let top5 = record
            .top5
            .iter()
            .map(|(text, score)| {
                let parsed = text
                    .parse::<TaxonPath>()
                    .map_err(|e| schema(id, e.to_string()))?;
                Ok(PreEnsembleEntry {
                    label: parsed,
                    score: *score,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let detection = Detection {
            ensemble_label: label(&record.label)?,
            ensemble_score: record.score,
            top5,
            embedding,
            ground_truth: record.ground_truth.as_deref().map(label).transpose()?,
            image_id: record.image_id,
            id: record.id,
        };
        detection
            .validate()
            .map_err(|m| schema(Some(&detection.id), m))?;
        if !seen.insert(detection.id.clone()) {
            return Err(Error::DuplicateId(detection.id));
        }
        detections.push(detection);
    }

    Ok(Dataset {
        detections,
        source_uri: manifest.display().to_string(),
    })
}

/// Writes a manifest; with `embeddings` set, vectors go to the sidecar matrix in
/// manifest order, otherwise they are written inline.
pub fn save_manifest(ds: &Dataset, manifest: &Path, embeddings: Option<&Path>) -> Result<()> {
    let file = File::create(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut out = BufWriter::new(file);
    for (row, d) in ds.detections.iter().enumerate() {
        let record = ManifestRecord {
            id: d.id.clone(),
            image_id: d.image_id.clone(),
            label: d.ensemble_label.render(),
            score: d.ensemble_score,
            top5: d.top5.iter().map(|e| (e.label.render(), e.score)).collect(),
            embedding_row: embeddings.map(|_| row),
            embedding: embeddings.is_none().then(|| d.embedding.clone()),
            ground_truth: d.ground_truth.as_ref().map(Label::render),
        };
        let line = serde_json::to_string(&record).expect("manifest record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(manifest, e))?;
    }
    out.flush().map_err(|e| Error::io(manifest, e))?;
    if let Some(path) = embeddings {
        write_embedding_matrix(path, ds.detections.iter().map(|d| d.embedding.as_slice()))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct OutcomeHeader {
    format: String,
    version: u32,
    count: usize,
}

/// Writes outcomes as JSON lines preceded by a header record.
pub fn save_outcomes(outcomes: &[PipelineOutcome], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_outcomes(outcomes, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_outcomes<W: Write>(outcomes: &[PipelineOutcome], out: &mut W) -> std::io::Result<()> {
    let header = OutcomeHeader {
        format: OUTCOME_FORMAT.to_string(),
        version: OUTCOME_VERSION,
        count: outcomes.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for outcome in outcomes {
        writeln!(out, "{}", serde_json::to_string(outcome)?)?;
    }
    Ok(())
}

pub fn load_outcomes(path: &Path) -> Result<Vec<PipelineOutcome>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let schema = |line: usize, message: String| Error::Schema {
        line,
        id: None,
        message,
    };
    let header: OutcomeHeader = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| schema(1, e.to_string()))?
        }
        None => return Err(schema(1, "missing header record".into())),
    };
    if header.format != OUTCOME_FORMAT || header.version != OUTCOME_VERSION {
        return Err(schema(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let mut outcomes = Vec::with_capacity(header.count);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        outcomes.push(serde_json::from_str(&line).map_err(|e| schema(i + 1, e.to_string()))?);
    }
    if outcomes.len() != header.count {
        return Err(schema(
            0,
            format!(
                "header declares {} records, found {}",
                header.count,
                outcomes.len()
            ),
        ));
    }
    Ok(outcomes)
}
