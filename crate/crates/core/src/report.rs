//! Accuracy breakdown by original label and per-stage funnel counts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::pipeline::{DecidedBy, PipelineOutcome};
use crate::taxonomy::{Label, TaxonPath};

/// Number of outcomes decided by each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelCounts {
    pub total: usize,
    pub stage1: usize,
    pub stage2: usize,
    pub stage3: usize,
    pub stage5: usize,
    pub rollup_animal: usize,
    pub untouched: usize,
}

impl FunnelCounts {
    pub fn from_outcomes(outcomes: &[PipelineOutcome]) -> Self {
        let mut f = FunnelCounts {
            total: outcomes.len(),
            ..Default::default()
        };
        for o in outcomes {
            match o.decided_by {
                DecidedBy::Stage1 => f.stage1 += 1,
                DecidedBy::Stage2 => f.stage2 += 1,
                DecidedBy::Stage3 => f.stage3 += 1,
                DecidedBy::Stage5 => f.stage5 += 1,
                DecidedBy::RollupAnimal => f.rollup_animal += 1,
                DecidedBy::Untouched => f.untouched += 1,
            }
        }
        f
    }

    /// Detections that entered stage 5.
    pub fn stage5_candidates(&self) -> usize {
        self.stage5 + self.rollup_animal
    }
}

/// Counts for one row of the breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPoolStats {
    pub pool: Label,
    pub reclassified: usize,
    pub to_species: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub reclassified: usize,
    pub to_species: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub accuracy: f64,
}

/// Bird-override recoveries, graded at class level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BirdOverrideStats {
    pub recovered: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub pools: Vec<LabelPoolStats>,
    pub totals: Totals,
    pub bird_override: BirdOverrideStats,
    pub funnel: FunnelCounts,
}

fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// `correct / total` as a percentage with one decimal, rounded half-up, in
/// tenths of a percent.
pub fn accuracy_tenths(correct: usize, total: usize) -> Option<u64> {
    if total == 0 {
        return None;
    }
    let (c, t) = (correct as u64, total as u64);
    Some((2000 * c + t) / (2 * t))
}

pub fn format_accuracy(correct: usize, total: usize) -> String {
    match accuracy_tenths(correct, total) {
        Some(t) => format!("{}.{}%", t / 10, t % 10),
        None => "-".to_string(),
    }
}

/// A final label is correct when the ground truth agrees with it on every rank
/// the final label sets.
pub fn is_correct(final_label: &Label, truth: &Label) -> bool {
    match (final_label, truth) {
        (Label::Taxon(f), Label::Taxon(t)) => f.is_ancestor_or_self_of(t),
        (Label::Blank, Label::Blank) => true,
        _ => false,
    }
}

/// Row order: coarse taxa (shallowest first), blank, unknown, then species-level
/// originals (stage-3 acceptances).
fn pool_order(label: &Label) -> (u8, usize, String) {
    match label {
        Label::Taxon(t) if t.is_species_level() => (3, 0, t.render()),
        Label::Taxon(t) => (0, t.level() as usize, t.render()),
        Label::Blank => (1, 0, String::new()),
        Label::Unknown => (2, 0, String::new()),
    }
}

/// Groups stage-3 and stage-5 re-classifications by original label and grades
/// them against ground truth.
pub fn build_report(outcomes: &[PipelineOutcome], ds: &Dataset) -> Result<Report> {
    let truth: HashMap<&str, Option<&Label>> = ds
        .detections
        .iter()
        .map(|d| (d.id.as_str(), d.ground_truth.as_ref()))
        .collect();

    let graded = |o: &PipelineOutcome| -> Option<&Label> {
        truth.get(o.detection_id.as_str()).copied().flatten()
    };
    let missing: Vec<String> = outcomes
        .iter()
        .filter(|o| {
            matches!(
                o.decided_by,
                DecidedBy::Stage2 | DecidedBy::Stage3 | DecidedBy::Stage5
            )
        })
        .filter(|o| graded(o).is_none())
        .map(|o| o.detection_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGroundTruth(missing));
    }

    let mut pools: BTreeMap<(u8, usize, String), LabelPoolStats> = BTreeMap::new();
    let mut bird = BirdOverrideStats::default();
    for o in outcomes {
        match o.decided_by {
            DecidedBy::Stage3 | DecidedBy::Stage5 => {
                let truth = graded(o).expect("checked above");
                let row = pools
                    .entry(pool_order(&o.original_label))
                    .or_insert_with(|| LabelPoolStats {
                        pool: o.original_label.clone(),
                        reclassified: 0,
                        to_species: 0,
                        correct: 0,
                        incorrect: 0,
                        accuracy: 0.0,
                    });
                row.reclassified += 1;
                if o.final_label.is_species_level() {
                    row.to_species += 1;
                }
                if is_correct(&o.final_label, truth) {
                    row.correct += 1;
                } else {
                    row.incorrect += 1;
                }
            }
            DecidedBy::Stage2 => {
                bird.recovered += 1;
                if is_correct(&o.final_label, graded(o).expect("checked above")) {
                    bird.correct += 1;
                }
            }
            _ => {}
        }
    }
    bird.accuracy = ratio(bird.correct, bird.recovered);

    let mut pools: Vec<LabelPoolStats> = pools.into_values().collect();
    let mut totals = Totals::default();
    for row in &mut pools {
        row.accuracy = ratio(row.correct, row.reclassified);
        totals.reclassified += row.reclassified;
        totals.to_species += row.to_species;
        totals.correct += row.correct;
        totals.incorrect += row.incorrect;
    }
    totals.accuracy = ratio(totals.correct, totals.reclassified);

    Ok(Report {
        pools,
        totals,
        bird_override: bird,
        funnel: FunnelCounts::from_outcomes(outcomes),
    })
}

fn pool_name(label: &Label) -> String {
    let name = label.display_name();
    let mut chars = name.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => name,
    }
}

const HEADERS: [&str; 6] = [
    "Original Label",
    "Re-classified",
    "To Species",
    "Correct",
    "Incorrect",
    "Accuracy",
];
const WIDTHS: [usize; 6] = [24, 13, 10, 7, 9, 8];

fn table_line(out: &mut String, cells: [&str; 6]) {
    let _ = write!(out, "{:<w$}", cells[0], w = WIDTHS[0]);
    for (cell, w) in cells.iter().zip(WIDTHS).skip(1) {
        let _ = write!(out, "  {cell:>w$}");
    }
    out.push('\n');
}

fn rule(out: &mut String) {
    let width = WIDTHS.iter().sum::<usize>() + 2 * (WIDTHS.len() - 1);
    out.push_str(&"-".repeat(width));
    out.push('\n');
}

/// Fixed-width breakdown table. An empty report renders the header only.
pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    table_line(&mut out, HEADERS);
    rule(&mut out);
    if report.pools.is_empty() {
        return out;
    }
    let row = |out: &mut String, name: &str, r: usize, s: usize, c: usize, i: usize| {
        table_line(
            out,
            [
                name,
                &r.to_string(),
                &s.to_string(),
                &c.to_string(),
                &i.to_string(),
                &format_accuracy(c, r),
            ],
        );
    };
    for p in &report.pools {
        row(
            &mut out,
            &pool_name(&p.pool),
            p.reclassified,
            p.to_species,
            p.correct,
            p.incorrect,
        );
    }
    rule(&mut out);
    let t = &report.totals;
    row(
        &mut out,
        "Total",
        t.reclassified,
        t.to_species,
        t.correct,
        t.incorrect,
    );
    out
}

pub fn render_funnel(funnel: &FunnelCounts) -> String {
    let mut out = String::new();
    let rows = [
        ("detections", funnel.total),
        ("stage1 anchors", funnel.stage1),
        ("stage2 bird override", funnel.stage2),
        ("stage3 centroid accept", funnel.stage3),
        ("stage5 re-classified", funnel.stage5),
        ("rolled up to animal", funnel.rollup_animal),
        ("untouched", funnel.untouched),
    ];
    for (name, count) in rows {
        let _ = writeln!(out, "{name:<24}{count:>8}");
    }
    out
}

/// Text table plus a JSON record of the same report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub table: String,
    pub record: String,
}

pub fn render_report(report: &Report) -> RenderedReport {
    let mut record = serde_json::to_string_pretty(report).expect("report serializes");
    record.push('\n');
    RenderedReport {
        table: render_table(report),
        record,
    }
}

pub fn write_report(report: &Report, table_path: &Path, record_path: &Path) -> Result<()> {
    let rendered = render_report(report);
    let mut text = rendered.table;
    text.push('\n');
    text.push_str(&render_funnel(&report.funnel));
    std::fs::write(table_path, text).map_err(|e| Error::io(table_path, e))?;
    std::fs::write(record_path, rendered.record).map_err(|e| Error::io(record_path, e))
}

/// Reads a report record back.
pub fn load_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        line: e.line(),
        id: None,
        message: e.to_string(),
    })
}

/// Convenience for a species-level final label check.
pub fn reaches_species(label: &Label) -> bool {
    label.as_taxon().is_some_and(TaxonPath::is_species_level)
}
