//! `taxorefine` command-line tool.
//!
//! Exit codes: 0 on success, 1 when inputs fail validation (missing or
//! malformed files, bad labels, bad configs), 2 when the pipeline itself fails.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use taxorefine::artifacts::write_report_files;
use taxorefine::report::render_funnel;
use taxorefine::synth::write as write_synth;
use taxorefine::{
    build_report, generate, load_manifest, load_model, load_outcomes, load_stage_config,
    render_report, run_pipeline, run_pipeline_with_model, save_model, train_projection, write_run,
    Dataset, Error, PipelineResult, StageConfig, SynthSpec,
};
use taxorefine_service::{AppState, Session};

const SYNTH_MANIFEST: &str = "manifest.jsonl";
const SYNTH_EMBEDDINGS: &str = "embeddings.f32";

#[derive(Debug, Parser)]
#[command(
    name = "taxorefine",
    version,
    about = "Refine coarse camera-trap labels toward species level"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage and write outcomes, the trained model and the report.
    Run {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        stage: StageArgs,
        /// Directory for outcomes.jsonl, model.bin, report.txt and report.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Select anchors and train the projection only.
    Train {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        stage: StageArgs,
        /// Where to write the trained model.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
    },
    /// Run every stage with a previously trained model instead of training.
    Score {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        stage: StageArgs,
        /// Trained model written by `train` or `run`.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Directory for outcomes, a copy of the model, and the report.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Print the accuracy table for an outcomes file graded against a manifest.
    Report {
        /// Manifest carrying ground truth.
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Embedding matrix for the manifest, if it does not embed vectors inline.
        #[arg(long, value_name = "FILE")]
        embeddings: Option<PathBuf>,
        /// Outcomes file written by `run` or `score`.
        #[arg(long, value_name = "FILE")]
        outcomes: PathBuf,
        /// Directory to also write report.txt and report.json into.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with ground truth.
    Synth {
        /// Synthetic spec (TOML). The built-in five-species spec when omitted.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        /// Directory for manifest.jsonl and embeddings.f32.
        #[arg(long, value_name = "DIR", required_unless_present_all = ["manifest", "embeddings"])]
        out: Option<PathBuf>,
        /// Manifest path, overriding <out>/manifest.jsonl.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Embedding matrix path, overriding <out>/embeddings.f32.
        #[arg(long, value_name = "FILE")]
        embeddings: Option<PathBuf>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the review API over a finished run.
    Serve {
        #[command(flatten)]
        input: Input,
        /// Stage/train config file the run used.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Directory holding the run's outcomes.jsonl and model.bin.
        #[arg(long, value_name = "DIR")]
        artifacts_dir: PathBuf,
        /// Directory of images named <image_id>.{jpg,jpeg,png,webp}.
        #[arg(long, value_name = "DIR")]
        images_dir: Option<PathBuf>,
        /// Append-only label journal, replayed on startup.
        #[arg(long, value_name = "FILE")]
        journal_path: Option<PathBuf>,
        /// Address to bind.
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Args)]
struct Input {
    /// Detection manifest (JSON lines).
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Embedding matrix (little-endian f32, 768 per row) indexed by `embedding_row`.
    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,
}

#[derive(Debug, Args)]
struct StageArgs {
    /// Key-value config overriding stage and training defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Missing input files are reported before any work starts.
fn require_file(path: &Path) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        })
    }
}

fn stage_config(args: &StageArgs) -> Result<StageConfig, Error> {
    if let Some(p) = &args.config {
        require_file(p)?;
    }
    let mut cfg = load_stage_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(input: &Input) -> Result<Dataset, Error> {
    require_file(&input.manifest)?;
    require_file(&input.embeddings)?;
    load_manifest(&input.manifest, Some(&input.embeddings))
}

fn print_stdout(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn finish_run(ds: &Dataset, result: &PipelineResult, out: &Path) -> anyhow::Result<()> {
    let artifacts = write_run(ds, result, out)?;
    info!("wrote {}", artifacts.outcomes.display());
    info!("wrote {}", artifacts.model.display());
    match &artifacts.report {
        Some((table, _)) => {
            let text =
                std::fs::read_to_string(table).with_context(|| table.display().to_string())?;
            print_stdout(&text)
        }
        None => print_stdout(&render_funnel(&result.funnel)),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { input, stage, out } => {
            let cfg = stage_config(&stage)?;
            let ds = dataset(&input)?;
            let result = run_pipeline(&ds, &cfg)?;
            finish_run(&ds, &result, &out)
        }
        Command::Train {
            input,
            stage,
            model,
        } => {
            let cfg = stage_config(&stage)?;
            let ds = dataset(&input)?;
            let trained = train_projection(&ds, &cfg)?;
            if let Some(last) = trained.epoch_losses.last() {
                info!("final epoch loss {last:.6e}");
            }
            if let Some(dir) = model.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?;
            }
            save_model(&trained.net, &model)?;
            info!("wrote {}", model.display());
            Ok(())
        }
        Command::Score {
            input,
            stage,
            model,
            out,
        } => {
            let cfg = stage_config(&stage)?;
            require_file(&model)?;
            let ds = dataset(&input)?;
            let net = load_model(&model)?;
            let result = run_pipeline_with_model(&ds, &cfg, net)?;
            finish_run(&ds, &result, &out)
        }
        Command::Report {
            manifest,
            embeddings,
            outcomes,
            out,
        } => {
            require_file(&manifest)?;
            if let Some(e) = &embeddings {
                require_file(e)?;
            }
            require_file(&outcomes)?;
            let ds = load_manifest(&manifest, embeddings.as_deref())?;
            let outcomes = load_outcomes(&outcomes)?;
            let report = build_report(&outcomes, &ds)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                write_report_files(&report, &dir)?;
            }
            let mut text = render_report(&report).table;
            text.push('\n');
            text.push_str(&render_funnel(&report.funnel));
            print_stdout(&text)
        }
        Command::Synth {
            spec,
            out,
            manifest,
            embeddings,
            seed,
        } => {
            let mut spec = match spec {
                Some(p) => {
                    require_file(&p)?;
                    SynthSpec::load(&p)?
                }
                None => SynthSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let ds = generate(&spec)?;
            let pick = |explicit: Option<PathBuf>, name: &str| {
                explicit.unwrap_or_else(|| out.as_deref().expect("clap requires --out").join(name))
            };
            let manifest = pick(manifest, SYNTH_MANIFEST);
            let embeddings = pick(embeddings, SYNTH_EMBEDDINGS);
            for dir in [manifest.parent(), embeddings.parent()]
                .into_iter()
                .flatten()
            {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                        path: dir.to_path_buf(),
                        source: e,
                    })?;
                }
            }
            write_synth(&ds, &manifest, &embeddings)?;
            info!("wrote {} detections to {}", ds.len(), manifest.display());
            Ok(())
        }
        Command::Serve {
            input,
            config,
            artifacts_dir,
            images_dir,
            journal_path,
            host,
            port,
        } => {
            let cfg = stage_config(&StageArgs { config, seed: None })?;
            let ds = dataset(&input)?;
            let session = Session::load(ds, cfg, &artifacts_dir)?;
            let state = AppState::new(session, journal_path.as_deref(), images_dir)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(taxorefine_service::serve(
                SocketAddr::new(host, port),
                state,
            ))?;
            Ok(())
        }
    }
}

/// 1 for input validation failures, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are validation errors; --help and --version are not errors.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
