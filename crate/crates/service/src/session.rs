use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use taxorefine::artifacts::{MODEL_FILE, OUTCOMES_FILE};
use taxorefine::pipeline::{learned_clusters, scorable_clusters, stage5_adaptive_score};
use taxorefine::projection::{train, AnchorSet};
use taxorefine::{
    hierarchy_match, load_model, load_outcomes, ClusterModel, Dataset, DecidedBy, Detection, Error,
    Label, PipelineOutcome, PipelineResult, ProjectionNet, Result, StageConfig, TaxonPath,
};

/// Everything the review API serves, at one revision.
#[derive(Debug, Clone)]
pub struct Session {
    pub dataset: Dataset,
    pub config: StageConfig,
    pub outcomes: Vec<PipelineOutcome>,
    pub net: ProjectionNet,
    pub clusters: Vec<ClusterModel>,
    /// Human-accepted labels keyed by detection id.
    pub overrides: BTreeMap<String, Label>,
    pub revision: u64,
    index: HashMap<String, usize>,
    learned: Vec<Vec<f64>>,
}

/// One journaled human decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub id: String,
    pub label: Label,
}

fn project_all(net: &ProjectionNet, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    ds.detections
        .iter()
        .map(|d| net.forward(&d.embedding_f64()))
        .collect()
}

impl Session {
    /// Session over a finished pipeline run.
    pub fn new(
        dataset: Dataset,
        config: StageConfig,
        outcomes: Vec<PipelineOutcome>,
        net: ProjectionNet,
    ) -> Result<Self> {
        if outcomes.len() != dataset.len()
            || outcomes
                .iter()
                .zip(&dataset.detections)
                .any(|(o, d)| o.detection_id != d.id)
        {
            return Err(Error::Schema {
                line: 0,
                id: None,
                message: "outcomes do not match the dataset".into(),
            });
        }
        let index = dataset
            .detections
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        let learned = project_all(&net, &dataset)?;
        let mut session = Session {
            dataset,
            config,
            outcomes,
            net,
            clusters: Vec::new(),
            overrides: BTreeMap::new(),
            revision: 0,
            index,
            learned,
        };
        session.clusters = session.build_clusters(&session.net)?;
        Ok(session)
    }

    pub fn from_result(
        dataset: Dataset,
        config: StageConfig,
        result: PipelineResult,
    ) -> Result<Self> {
        Session::new(dataset, config, result.outcomes, result.net)
    }

    /// Loads the outcomes and model a run left in `dir`.
    pub fn load(dataset: Dataset, config: StageConfig, dir: &Path) -> Result<Self> {
        let outcomes = load_outcomes(&dir.join(OUTCOMES_FILE))?;
        let net = load_model(&dir.join(MODEL_FILE))?;
        Session::new(dataset, config, outcomes, net)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn detection(&self, idx: usize) -> &Detection {
        &self.dataset.detections[idx]
    }

    pub fn learned(&self, idx: usize) -> &[f64] {
        &self.learned[idx]
    }

    /// Label shown to reviewers: the human override if any, else the pipeline's.
    pub fn current_label(&self, idx: usize) -> &Label {
        let id = &self.dataset.detections[idx].id;
        self.overrides
            .get(id)
            .unwrap_or(&self.outcomes[idx].final_label)
    }

    pub fn is_overridden(&self, idx: usize) -> bool {
        self.overrides
            .contains_key(&self.dataset.detections[idx].id)
    }

    /// Species-level anchors: pipeline anchors not overridden, plus species-level
    /// overrides.
    pub fn anchors(&self) -> Vec<(usize, TaxonPath)> {
        let mut out = Vec::new();
        for (i, o) in self.outcomes.iter().enumerate() {
            let label = match self.overrides.get(&o.detection_id) {
                Some(l) => l.as_taxon().filter(|t| t.is_species_level()),
                None if o.decided_by.is_anchor() => o.final_label.as_taxon(),
                None => None,
            };
            if let Some(t) = label {
                out.push((i, t.clone()));
            }
        }
        out
    }

    fn build_clusters(&self, net: &ProjectionNet) -> Result<Vec<ClusterModel>> {
        let anchors = self.anchors();
        let raw: Vec<Vec<f64>> = anchors
            .iter()
            .map(|(i, _)| self.dataset.detections[*i].embedding_f64())
            .collect();
        let members: Vec<(&TaxonPath, &[f64])> = anchors
            .iter()
            .zip(&raw)
            .map(|((_, t), v)| (t, v.as_slice()))
            .collect();
        Ok(scorable_clusters(learned_clusters(net, &members, &self.config)?).0)
    }

    /// Records a human label. Returns the new revision.
    pub fn apply_override(&mut self, id: &str, label: Label) -> Option<u64> {
        self.position(id)?;
        self.overrides.insert(id.to_string(), label);
        self.revision += 1;
        Some(self.revision)
    }

    /// Work for a recompute, done without holding the session.
    pub fn recompute(&self, retrain: bool) -> Result<Recomputed> {
        let net = if retrain {
            let anchors = self.anchors();
            let set = AnchorSet::new(anchors.iter().map(|(i, t)| {
                let d = &self.dataset.detections[*i];
                (d.id.clone(), t.clone(), d.embedding_f64())
            }));
            train(&set, &self.config.train)?.net
        } else {
            self.net.clone()
        };
        let clusters = self.build_clusters(&net)?;
        let learned = if retrain {
            Some(project_all(&net, &self.dataset)?)
        } else {
            None
        };
        Ok(Recomputed {
            net,
            clusters,
            learned,
        })
    }

    /// Installs a recompute and bumps the revision. Overrides recorded while it
    /// ran are kept; they take effect at the next recompute.
    pub fn install(&mut self, r: Recomputed) -> u64 {
        self.net = r.net;
        self.clusters = r.clusters;
        if let Some(learned) = r.learned {
            self.learned = learned;
        }
        self.revision += 1;
        self.revision
    }

    /// Ranked stage-5 scores against the current clusters.
    pub fn suggestions(&self, idx: usize) -> Result<Vec<Suggestion>> {
        let original = &self.dataset.detections[idx].ensemble_label;
        let ranked = stage5_adaptive_score(&self.learned[idx], &self.clusters)?;
        Ok(ranked
            .into_iter()
            .map(|(label, score)| Suggestion {
                hierarchy_match: hierarchy_match(original, &label),
                below_tau: score < self.config.tau,
                label,
                score,
            })
            .collect())
    }

    /// Whether a detection already carries a decided label.
    pub fn already_decided(&self, idx: usize) -> bool {
        self.is_overridden(idx)
            || matches!(
                self.outcomes[idx].decided_by,
                DecidedBy::Stage1 | DecidedBy::Stage2 | DecidedBy::Stage3 | DecidedBy::Stage5
            )
    }
}

#[derive(Debug, Clone)]
pub struct Recomputed {
    pub net: ProjectionNet,
    pub clusters: Vec<ClusterModel>,
    learned: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestion {
    pub label: TaxonPath,
    pub score: f64,
    pub hierarchy_match: bool,
    pub below_tau: bool,
}

/// Append-only record of overrides, replayed on startup.
#[derive(Debug)]
pub struct Journal {
    file: File,
}

impl Journal {
    /// Opens (creating if needed) the journal and returns its existing entries.
    pub fn open(path: &Path) -> Result<(Journal, Vec<JournalEntry>)> {
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| io(path, e))?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry =
                    serde_json::from_str(&line).map_err(|e| Error::Schema {
                        line: n + 1,
                        id: None,
                        message: format!("journal: {e}"),
                    })?;
                entries.push(entry);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io(path, e))?;
        Ok((Journal { file }, entries))
    }

    pub fn append(&mut self, entry: &JournalEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_string(entry).expect("journal entry serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()
    }
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Replays journal entries onto a fresh session.
pub fn replay(session: &mut Session, entries: Vec<JournalEntry>) -> Result<()> {
    for (n, e) in entries.into_iter().enumerate() {
        if session.apply_override(&e.id, e.label).is_none() {
            return Err(Error::Schema {
                line: n + 1,
                id: Some(e.id),
                message: "journal names an unknown detection".into(),
            });
        }
    }
    Ok(())
}
