//! Acceptance suite. Runs every primary criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion. Exits non-zero if any fail.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taxorefine::embedspace::{cosine_distance, squared_euclidean};
use taxorefine::ingest::{PreEnsembleEntry, EMBEDDING_DIM};
use taxorefine::pipeline::{
    stage1_accept, stage2_bird_override, stage3_build_centroids, stage5_accepts,
    stage5_adaptive_score, tightness_weight,
};
use taxorefine::projection::{loss_and_gradient, triplet_loss, NetShape, Tensor, Triplet};
use taxorefine::report::{build_report, format_accuracy, is_correct, render_table};
use taxorefine::synth::HardMode;
use taxorefine::*;

type Check = Result<String, String>;

type Criterion = (&'static str, fn() -> Check);

// Written as a negation so that NaN fails the check.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn run(name: &str, f: fn() -> Check) -> bool {
    let start = Instant::now();
    let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(detail) => println!("PASS  {name}  [{secs:.2}s]  {detail}"),
        Err(why) => println!("FAIL  {name}  [{secs:.2}s]  {why}"),
    }
    result.is_ok()
}

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "triplet gradient matches central differences",
            gradient_check,
        ),
        ("adaptive score hand fixtures", score_fixtures),
        (
            "synthetic end-to-end accuracy and species coverage",
            synthetic_end_to_end,
        ),
        (
            "hard-mode synthetic rolls up conservatively",
            hard_mode_rollup,
        ),
        ("published breakdown arithmetic", published_breakdown),
        ("threshold boundaries", threshold_boundaries),
        ("full runs are byte-identical", determinism),
        ("invariants", invariants),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !run(name, f) {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------

fn oracle_loss(net: &ProjectionNet, inputs: &[Vec<f64>], triplets: &[Triplet], margin: f64) -> f64 {
    let e: Vec<Vec<f64>> = inputs.iter().map(|x| net.forward(x).unwrap()).collect();
    let total: f64 = triplets
        .iter()
        .map(|t| triplet_loss(&e[t.anchor], &e[t.positive], &e[t.negative], margin))
        .sum();
    total / triplets.len() as f64
}

/// Max relative error over `per_tensor` random coordinates with a non-zero
/// analytic gradient in every tensor, plus a check that sampled zero-gradient
/// coordinates are numerically flat.
fn gradient_error(
    shape: NetShape,
    margin: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<(f64, usize), String> {
    let h = 1e-5;
    let net = ProjectionNet::init(shape, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let inputs: Vec<Vec<f64>> = (0..6)
        .map(|_| {
            (0..shape.input)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let triplets = vec![
        Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        },
        Triplet {
            anchor: 3,
            positive: 4,
            negative: 5,
        },
        Triplet {
            anchor: 1,
            positive: 0,
            negative: 4,
        },
        Triplet {
            anchor: 2,
            positive: 5,
            negative: 3,
        },
    ];
    let analytic =
        loss_and_gradient(&net, &inputs, &triplets, margin).map_err(|e| e.to_string())?;
    ensure!(analytic.active > 0, "no active triplet at margin {margin}");
    let base = oracle_loss(&net, &inputs, &triplets, margin);
    ensure!(
        (analytic.loss - base).abs() < 1e-12,
        "loss {} vs oracle {base}",
        analytic.loss
    );

    let numeric = |i: usize| {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        (oracle_loss(&plus, &inputs, &triplets, margin)
            - oracle_loss(&minus, &inputs, &triplets, margin))
            / (2.0 * h)
    };

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for tensor in Tensor::ALL {
        let range = net.tensor_range(tensor);
        let mut live: Vec<usize> = range.clone().filter(|&i| analytic.grad[i] != 0.0).collect();
        ensure!(!live.is_empty(), "{tensor:?}: no live coordinates");
        // Tensors smaller than `per_tensor` are checked exhaustively.
        live.shuffle(&mut rng);
        for &i in live.iter().take(per_tensor) {
            let (a, n) = (analytic.grad[i], numeric(i));
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()));
            checked += 1;
        }
        for _ in 0..per_tensor / 4 {
            let i = rng.random_range(range.clone());
            if analytic.grad[i] == 0.0 {
                let n = numeric(i);
                ensure!(
                    n.abs() < 1e-9,
                    "{tensor:?}[{i}]: zero analytic gradient, numeric {n}"
                );
            }
        }
    }
    Ok((worst, checked))
}

/// Coordinates checked per tensor on the full-size network.
const COORDS_PER_TENSOR: usize = 20;

fn gradient_check() -> Check {
    let start = Instant::now();
    let (toy, n_toy) = gradient_error(
        NetShape {
            input: 6,
            hidden: 7,
            output: 5,
        },
        2.0,
        20,
        11,
    )?;
    let (full, n_full) = gradient_error(
        NetShape {
            input: 768,
            hidden: 512,
            output: 256,
        },
        1.0,
        COORDS_PER_TENSOR,
        3,
    )?;
    ensure!(
        n_full >= 4 * COORDS_PER_TENSOR,
        "only {n_full} coordinates checked"
    );
    let elapsed = start.elapsed();
    ensure!(toy < 1e-4, "toy net max relative error {toy:.3e}");
    ensure!(full < 1e-4, "768-512-256 net max relative error {full:.3e}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "max rel err {toy:.2e} over {n_toy} coords (6-7-5), {full:.2e} over {n_full} coords (768-512-256)"
    ))
}

// ---------------------------------------------------------------------------

fn species(name: &str) -> TaxonPath {
    let genus = if name == "leo" || name == "pardus" {
        "panthera"
    } else {
        "g"
    };
    TaxonPath::new(
        &["animalia", "mammalia", "carnivora", "felidae", genus, name],
        name,
    )
    .unwrap()
}

fn cluster(label: TaxonPath, centroid: Vec<f64>, mean: f64) -> ClusterModel {
    ClusterModel {
        label,
        centroid,
        mean_intra_dist: mean,
        p95_intra_dist: mean,
        member_count: 5,
        space: Space::Learned,
    }
}

fn score_fixtures() -> Check {
    // cos 0.9 to the only cluster, d̄ 0.2 → w 1 → 0.1 / 0.2
    let e = [0.9, (1.0f64 - 0.81).sqrt()];
    let one = stage5_adaptive_score(&e, &[cluster(species("leo"), vec![3.0, 0.0], 0.2)])
        .map_err(|e| e.to_string())?;
    ensure!(
        (one[0].1 - 0.5).abs() < 1e-9,
        "single-cluster score {}",
        one[0].1
    );

    // d̄ {0.05, 0.10}: tight w = 1.5; query at distance 0.06 → 0.06 / 0.075
    let cos: f64 = 0.94;
    let e = [cos, (1.0 - cos * cos).sqrt(), 0.0];
    let clusters = [
        cluster(species("leo"), vec![1.0, 0.0, 0.0], 0.05),
        cluster(species("pardus"), vec![0.0, 0.0, 1.0], 0.10),
    ];
    ensure!(
        (tightness_weight(0.05, 0.10) - 1.5).abs() < 1e-12,
        "w of tight cluster"
    );
    let two = stage5_adaptive_score(&e, &clusters).map_err(|e| e.to_string())?;
    ensure!(two[0].0 == species("leo"), "best label {}", two[0].0);
    ensure!(
        (two[0].1 - 0.8).abs() < 1e-9,
        "two-cluster score {}",
        two[0].1
    );

    let at_centroid =
        stage5_adaptive_score(&[1.0, 0.0, 0.0], &clusters).map_err(|e| e.to_string())?;
    ensure!(
        at_centroid[0].1.abs() < 1e-12,
        "score at centroid {}",
        at_centroid[0].1
    );
    Ok(format!("0.5 -> {:.12}, 0.8 -> {:.12}", one[0].1, two[0].1))
}

// ---------------------------------------------------------------------------

struct SynthRun {
    ds: Dataset,
    result: PipelineResult,
    elapsed: Duration,
}

fn synth_run(spec: &SynthSpec, cfg: &StageConfig) -> Result<SynthRun, String> {
    let start = Instant::now();
    let ds = generate(spec).map_err(|e| e.to_string())?;
    let result = run_pipeline(&ds, cfg).map_err(|e| e.to_string())?;
    Ok(SynthRun {
        ds,
        result,
        elapsed: start.elapsed(),
    })
}

fn truth<'a>(ds: &'a Dataset, id: &str) -> &'a Label {
    ds.get(id)
        .and_then(|d| d.ground_truth.as_ref())
        .expect("synthetic data carries ground truth")
}

fn is_generic_or_blank(label: &Label) -> bool {
    match label {
        Label::Blank => true,
        Label::Taxon(t) => !t.is_species_level(),
        Label::Unknown => false,
    }
}

fn synthetic_end_to_end() -> Check {
    let spec = SynthSpec::default();
    let run = synth_run(&spec, &StageConfig::default())?;
    let outcomes = &run.result.outcomes;

    let stage5: Vec<&PipelineOutcome> = outcomes
        .iter()
        .filter(|o| o.decided_by == DecidedBy::Stage5)
        .collect();
    ensure!(!stage5.is_empty(), "no stage-5 re-classifications");
    let correct = stage5
        .iter()
        .filter(|o| is_correct(&o.final_label, truth(&run.ds, &o.detection_id)))
        .count();

    let candidates: Vec<&PipelineOutcome> = outcomes
        .iter()
        .filter(|o| is_generic_or_blank(&o.original_label))
        .collect();
    let to_species = candidates
        .iter()
        .filter(|o| o.final_label.is_species_level())
        .count();

    let losses = &run.result.epoch_losses;
    let (first, last) = (losses[0], *losses.last().unwrap());

    ensure!(
        correct * 100 >= stage5.len() * 95,
        "accuracy {correct}/{}",
        stage5.len()
    );
    ensure!(
        to_species * 100 >= candidates.len() * 60,
        "species level {to_species}/{}",
        candidates.len()
    );
    ensure!(last < 0.1 * first, "training loss {first} -> {last}");
    ensure!(
        run.elapsed < Duration::from_secs(60),
        "took {:?}",
        run.elapsed
    );
    Ok(format!(
        "accuracy {correct}/{} = {}, species level {to_species}/{} = {}, loss {first:.3e} -> {last:.3e}",
        stage5.len(),
        format_accuracy(correct, stage5.len()),
        candidates.len(),
        format_accuracy(to_species, candidates.len()),
    ))
}

fn hard_spec() -> SynthSpec {
    SynthSpec {
        hard_mode: Some(HardMode {
            angle_deg: 15.0,
            pair: (0, 1),
        }),
        ..SynthSpec::default()
    }
}

fn hard_mode_rollup() -> Check {
    let cfg = StageConfig::default();
    let run = synth_run(&hard_spec(), &cfg)?;
    let rollups: Vec<&PipelineOutcome> = run
        .result
        .outcomes
        .iter()
        .filter(|o| o.decided_by == DecidedBy::RollupAnimal)
        .collect();
    ensure!(!rollups.is_empty(), "no detection rolled up");
    for o in &rollups {
        let score = o
            .score
            .ok_or_else(|| format!("{} has no score", o.detection_id))?;
        ensure!(
            score >= cfg.tau,
            "{} rolled up with score {score}",
            o.detection_id
        );
        ensure!(
            o.final_label == Label::Taxon(TaxonPath::animal()),
            "{} final label",
            o.detection_id
        );
    }
    let min = rollups
        .iter()
        .filter_map(|o| o.score)
        .fold(f64::INFINITY, f64::min);
    Ok(format!(
        "{} rollups, lowest score {min:.4} >= tau {}",
        rollups.len(),
        cfg.tau
    ))
}

// ---------------------------------------------------------------------------

fn published_breakdown() -> Check {
    // (pool, re-classified, to species, correct)
    let pools = [
        (Label::Taxon(TaxonPath::animal()), 341, 221, 334),
        (Label::Taxon(TaxonPath::mammal()), 81, 53, 79),
        (Label::Blank, 34, 22, 27),
    ];
    let lion = species("leo");
    let cheetah = species("jubatus");
    let panthera = lion.truncate(Rank::Genus);
    let mut embedding = vec![0.0f32; EMBEDDING_DIM];
    embedding[0] = 1.0;

    let mut detections = Vec::new();
    let mut outcomes = Vec::new();
    for (p, (pool, n, to_species, correct)) in pools.iter().enumerate() {
        for k in 0..*n {
            let id = format!("p{p}-{k}");
            let final_label = Label::Taxon(if k < *to_species {
                lion.clone()
            } else {
                panthera.clone()
            });
            // Wrong picks get a truth outside the genus, so genus-level finals are wrong too.
            let gt = if k < *correct {
                lion.clone()
            } else {
                cheetah.clone()
            };
            detections.push(Detection {
                id: id.clone(),
                image_id: id.clone(),
                ensemble_label: pool.clone(),
                ensemble_score: 0.5,
                top5: vec![],
                embedding: embedding.clone(),
                ground_truth: Some(Label::Taxon(gt)),
            });
            outcomes.push(PipelineOutcome {
                detection_id: id,
                original_label: pool.clone(),
                final_label,
                decided_by: DecidedBy::Stage5,
                score: Some(0.5),
                nearest_label: None,
                audit: vec![],
            });
        }
    }
    let ds = Dataset::new(detections, "fixture").map_err(|e| e.to_string())?;
    let report = build_report(&outcomes, &ds).map_err(|e| e.to_string())?;
    let table = render_table(&report);

    let expect = [
        ("Animal", "341", "221", "334", "7", "97.9%"),
        ("Mammal", "81", "53", "79", "2", "97.5%"),
        ("Blank", "34", "22", "27", "7", "79.4%"),
        ("Total", "456", "296", "440", "16", "96.5%"),
    ];
    for (name, r, s, c, i, acc) in expect {
        let row = table
            .lines()
            .find(|l| l.starts_with(name))
            .ok_or_else(|| format!("no {name} row in\n{table}"))?;
        let cells: Vec<&str> = row[name.len()..].split_whitespace().collect();
        ensure!(cells == [r, s, c, i, acc], "{name} row reads {cells:?}");
    }
    let t = &report.totals;
    ensure!(
        format_accuracy(t.to_species, t.reclassified) == "64.9%",
        "species share {}",
        format_accuracy(t.to_species, t.reclassified)
    );
    Ok("97.9% / 97.5% / 79.4%, total 440/456 = 96.5%, species share 64.9%".into())
}

// ---------------------------------------------------------------------------

fn bird(name: &str) -> TaxonPath {
    TaxonPath::new(&["animalia", "aves", "o", "f", "g", name], name).unwrap()
}

fn unit_embedding(seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..EMBEDDING_DIM)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect()
}

fn detection(
    id: &str,
    label: Label,
    score: f64,
    top5: Vec<PreEnsembleEntry>,
    embedding: Vec<f32>,
) -> Detection {
    Detection {
        id: id.into(),
        image_id: id.into(),
        ensemble_label: label,
        ensemble_score: score,
        top5,
        embedding,
        ground_truth: None,
    }
}

fn threshold_boundaries() -> Check {
    let cfg = StageConfig::default();
    let lion = species("leo");

    // Stage 1: inclusive at 0.8.
    let d = detection("s1", lion.clone().into(), 0.8, vec![], unit_embedding(1));
    ensure!(stage1_accept(&d, &cfg), "score 0.8 not accepted");
    let d = detection("s1b", lion.clone().into(), 0.799, vec![], unit_embedding(1));
    ensure!(!stage1_accept(&d, &cfg), "score 0.799 accepted");

    // Stage 2: three birds whose scores sum to exactly 0.3.
    let entries = |scores: &[f64]| -> Vec<PreEnsembleEntry> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| PreEnsembleEntry {
                label: bird(&format!("b{i}")),
                score: s,
            })
            .collect()
    };
    let fixture_sum = [0.15, 0.1, 0.05].iter().fold(0.0, |s: f64, x| s + x);
    ensure!(fixture_sum == 0.3, "fixture sum is not exactly 0.3");
    for scores in [&[0.15, 0.1, 0.05][..], &[0.1, 0.1, 0.1][..]] {
        let d = detection("s2", Label::Blank, 0.6, entries(scores), unit_embedding(2));
        ensure!(
            stage2_bird_override(&d, &cfg).is_some(),
            "birds {scores:?} not overridden"
        );
    }
    let d = detection(
        "s2b",
        Label::Blank,
        0.6,
        entries(&[0.1, 0.09, 0.05, 0.05]),
        unit_embedding(2),
    );
    ensure!(
        stage2_bird_override(&d, &cfg).is_none(),
        "sum 0.29 overridden"
    );
    let d = detection(
        "s2c",
        Label::Blank,
        0.6,
        entries(&[0.25, 0.25]),
        unit_embedding(2),
    );
    ensure!(
        stage2_bird_override(&d, &cfg).is_none(),
        "two birds overridden"
    );

    // Stage 3: a copy of the member sitting at the p95 rank is at exactly p95.
    let leopard = species("pardus");
    let mut detections = Vec::new();
    for k in 0..20 {
        detections.push(detection(
            &format!("lion{k}"),
            lion.clone().into(),
            0.9,
            vec![],
            unit_embedding(100 + k),
        ));
        detections.push(detection(
            &format!("leo{k}"),
            leopard.clone().into(),
            0.9,
            vec![],
            unit_embedding(200 + k),
        ));
    }
    let anchors: Vec<usize> = (0..detections.len()).collect();
    let raw: Vec<Vec<f64>> = detections.iter().map(Detection::embedding_f64).collect();
    let probe = stage3_build_centroids(
        &Dataset::new(detections.clone(), "b").unwrap(),
        &raw,
        &anchors,
        &[],
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let lion_cluster = probe.clusters.iter().find(|c| c.label == lion).unwrap();
    let lion_rows: Vec<usize> = (0..detections.len()).step_by(2).collect();
    let at_p95 = *lion_rows
        .iter()
        .find(|&&i| lion_cluster.distance(&raw[i]).unwrap() == lion_cluster.p95_intra_dist)
        .ok_or("no member at the p95 distance")?;
    let beyond = *lion_rows
        .iter()
        .max_by(|&&a, &&b| {
            lion_cluster
                .distance(&raw[a])
                .unwrap()
                .total_cmp(&lion_cluster.distance(&raw[b]).unwrap())
        })
        .unwrap();
    ensure!(
        lion_cluster.distance(&raw[beyond]).unwrap() > lion_cluster.p95_intra_dist,
        "no member beyond p95"
    );
    let mut with_candidates = detections.clone();
    for (id, row) in [("cand-p95", at_p95), ("cand-max", beyond)] {
        with_candidates.push(detection(
            id,
            lion.clone().into(),
            0.5,
            vec![],
            detections[row].embedding.clone(),
        ));
    }
    let ds = Dataset::new(with_candidates, "b").unwrap();
    let raw: Vec<Vec<f64>> = ds.detections.iter().map(Detection::embedding_f64).collect();
    let n = detections.len();
    let out = stage3_build_centroids(&ds, &raw, &anchors, &[n, n + 1], &cfg)
        .map_err(|e| e.to_string())?;
    let check = |idx: usize| out.checks.iter().find(|c| c.index == idx).unwrap();
    ensure!(
        check(n).distance == check(n).threshold,
        "p95 copy not at the threshold"
    );
    ensure!(check(n).accepted, "distance exactly p95 rejected");
    ensure!(!check(n + 1).accepted, "distance beyond p95 accepted");

    // Stage 5: strict at tau, both on the literal and through a full run.
    let animal = Label::Taxon(TaxonPath::animal());
    ensure!(
        !stage5_accepts(&animal, &lion, 0.85, 0.85),
        "score 0.85 accepted at tau 0.85"
    );
    ensure!(
        stage5_accepts(&animal, &lion, 0.85 - 1e-12, 0.85),
        "score just below tau rejected"
    );

    let base = synth_run(&SynthSpec::default(), &cfg)?;
    let target = base
        .result
        .outcomes
        .iter()
        .find(|o| o.decided_by == DecidedBy::Stage5)
        .ok_or("no stage-5 outcome to probe")?;
    let score = target.score.unwrap();
    let at_tau = StageConfig {
        tau: score,
        ..cfg.clone()
    };
    let rerun = run_pipeline(&base.ds, &at_tau).map_err(|e| e.to_string())?;
    let again = rerun
        .outcomes
        .iter()
        .find(|o| o.detection_id == target.detection_id)
        .unwrap();
    ensure!(again.score == Some(score), "rerun changed the score");
    ensure!(
        again.decided_by == DecidedBy::RollupAnimal,
        "score == tau gave {:?}",
        again.decided_by
    );

    Ok(format!(
        "stage1 0.8 in; stage2 sum 0.3 in; stage3 d = p95 = {:.6} in; stage5 score = tau = {score:.6} out",
        check(n).threshold
    ))
}

// ---------------------------------------------------------------------------

fn determinism() -> Check {
    let spec = SynthSpec::default();
    let cfg = StageConfig::default();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut written = Vec::new();
    for dir in &dirs {
        let ds = generate(&spec).map_err(|e| e.to_string())?;
        let result = run_pipeline(&ds, &cfg).map_err(|e| e.to_string())?;
        written.push(write_run(&ds, &result, dir.path()).map_err(|e| e.to_string())?);
    }
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    ensure!(
        read(&written[0].outcomes) == read(&written[1].outcomes),
        "outcome files differ"
    );
    ensure!(
        read(&written[0].model) == read(&written[1].model),
        "model files differ"
    );
    let (a, b) = (written[0].report.as_ref(), written[1].report.as_ref());
    let (a, b) = (a.ok_or("no report written")?, b.ok_or("no report written")?);
    ensure!(
        read(&a.0) == read(&b.0) && read(&a.1) == read(&b.1),
        "report files differ"
    );
    Ok(format!(
        "outcomes {} bytes, model {} bytes identical",
        read(&written[0].outcomes).len(),
        read(&written[0].model).len()
    ))
}

// ---------------------------------------------------------------------------

fn invariants() -> Check {
    let cfg = StageConfig::default();
    let mut stage5 = 0;
    for spec in [SynthSpec::default(), hard_spec()] {
        let run = synth_run(&spec, &cfg)?;
        for o in run
            .result
            .outcomes
            .iter()
            .filter(|o| o.decided_by == DecidedBy::Stage5)
        {
            let best = o
                .final_label
                .as_taxon()
                .ok_or("stage-5 label is not a taxon")?;
            ensure!(
                hierarchy_match(&o.original_label, best),
                "{} breaks the hierarchy",
                o.detection_id
            );
            ensure!(
                o.score.is_some_and(|s| s < cfg.tau),
                "{} score {:?}",
                o.detection_id,
                o.score
            );
            stage5 += 1;
        }
        let clusters = &run.result.learned_clusters;
        let max = clusters
            .iter()
            .map(|c| c.mean_intra_dist)
            .fold(0.0, f64::max);
        for c in clusters {
            let w = tightness_weight(c.mean_intra_dist, max);
            ensure!((1.0..=2.0).contains(&w), "w = {w} for {}", c.label);
            if c.mean_intra_dist == max {
                ensure!(w == 1.0, "loosest cluster has w = {w}");
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let dim = rng.random_range(2..64);
        let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (
            10f64.powf(rng.random_range(-3.0..3.0)),
            10f64.powf(rng.random_range(-3.0..3.0)),
        );
        let us: Vec<f64> = u.iter().map(|x| a * x).collect();
        let vs: Vec<f64> = v.iter().map(|x| b * x).collect();
        let d = cosine_distance(&u, &v).unwrap();
        worst = worst.max((d - cosine_distance(&us, &vs).unwrap()).abs());
        worst = worst.max((d - cosine_distance(&v, &u).unwrap()).abs());
    }
    ensure!(worst < 1e-9, "cosine distance scale drift {worst:.3e}");

    // ‖a − p‖² = 2·cosine distance for unit vectors
    let a = taxorefine::embedspace::normalize(&[0.3, -0.2, 0.9]).unwrap();
    let p = taxorefine::embedspace::normalize(&[-0.1, 0.4, 0.5]).unwrap();
    ensure!(
        (squared_euclidean(&a, &p) - 2.0 * cosine_distance(&a, &p).unwrap()).abs() < 1e-9,
        "squared distance identity"
    );
    Ok(format!(
        "{stage5} stage-5 outcomes checked, scale drift {worst:.1e}"
    ))
}
