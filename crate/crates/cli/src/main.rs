use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use log::error;

use storey_core::config::PipelineConfig;
use storey_core::pipeline::{self, Command, PipelineError};

/// Floor-count pipeline over street-level imagery metadata and building footprints.
#[derive(Parser, Debug)]
#[command(name = "storey", version)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,

    /// Override a configuration value, e.g. `--set matcher.eps_deg=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for `match` and `filter` (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,

    /// Only log warnings and errors.
    #[arg(long, short = 'q', global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Parse and filter image metadata; export kept images as GPX waypoints.
    Ingest {
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Match building crops to footprints by ray casting.
    Match {
        #[arg(long)]
        footprints: Option<PathBuf>,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        crops: Option<PathBuf>,
    },
    /// Apply the segmentation quality filters to crop summaries.
    Filter {
        #[arg(long)]
        summaries: Option<PathBuf>,
    },
    /// Select buildings per floor quota and order them into a capture route.
    Plan {
        #[arg(long)]
        footprints: Option<PathBuf>,
        #[arg(long)]
        quota: Option<PathBuf>,
        /// Return to the first building at the end of the route.
        #[arg(long)]
        closed: bool,
    },
    /// Per-floor image counts and a height-versus-floor export.
    Stats {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        footprints: Option<PathBuf>,
    },
    /// Train a floor model on a feature CSV.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Predict floors for a feature CSV with a trained model.
    Infer {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Metrics and confusion matrix for paired predictions.
    Eval {
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ModelFlags {
    /// Head variant: plain, htc:CUT, httc:C1,C2, hyb, hyb+httc:C1,C2.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Add the flat/non-flat roof head.
    #[arg(long)]
    mtl_roof: bool,
}

fn path_set(key: &str, p: &Option<PathBuf>, out: &mut Vec<String>) {
    if let Some(p) = p {
        out.push(format!("paths.{key}={}", toml_string(&p.to_string_lossy())));
    }
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl Cli {
    /// Flags folded into `--set` overrides, applied after the explicit ones.
    fn overrides(&self) -> (Command, Vec<String>) {
        let mut o = self.overrides.clone();
        if let Some(seed) = self.seed {
            o.push(format!("seed={seed}"));
        }
        if let Some(jobs) = self.jobs {
            o.push(format!("jobs={jobs}"));
        }
        path_set("out_dir", &self.out, &mut o);
        let cmd = match &self.command {
            Sub::Ingest { metadata } => {
                path_set("metadata", metadata, &mut o);
                Command::Ingest
            }
            Sub::Match { footprints, metadata, crops } => {
                path_set("footprints", footprints, &mut o);
                path_set("metadata", metadata, &mut o);
                path_set("crops", crops, &mut o);
                Command::Match
            }
            Sub::Filter { summaries } => {
                path_set("summaries", summaries, &mut o);
                Command::Filter
            }
            Sub::Plan { footprints, quota, closed } => {
                path_set("footprints", footprints, &mut o);
                path_set("quota", quota, &mut o);
                if *closed {
                    o.push("plan.closed=true".into());
                }
                Command::Plan
            }
            Sub::Stats { records, footprints } => {
                path_set("records", records, &mut o);
                path_set("footprints", footprints, &mut o);
                Command::Stats
            }
            Sub::Train { dataset, model } => {
                path_set("dataset", dataset, &mut o);
                if let Some(v) = &model.variant {
                    o.push(format!("train.variant={}", toml_string(v)));
                }
                if let Some(e) = model.epochs {
                    o.push(format!("train.optimizer.epochs={e}"));
                }
                if model.mtl_roof {
                    o.push("train.mtl_roof=true".into());
                }
                Command::Train
            }
            Sub::Infer { model, dataset } => {
                path_set("model", model, &mut o);
                path_set("dataset", dataset, &mut o);
                Command::Infer
            }
            Sub::Eval { pairs } => {
                path_set("pairs", pairs, &mut o);
                Command::Eval
            }
        };
        (cmd, o)
    }
}

fn init_logging(quiet: bool) {
    let default = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format(|buf, record| {
            writeln!(
                buf,
                "{} {:<5} {} {}",
                buf.timestamp_millis(),
                record.level(),
                record.module_path().unwrap_or("storey"),
                record.args()
            )
        })
        .init();
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let (cmd, overrides) = cli.overrides();
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    pipeline::run(cmd, &cfg)?;
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print()?;
            return Ok(ExitCode::from(code));
        }
    };
    init_logging(cli.quiet);
    match run(&cli) {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            error!("{e}");
            Ok(ExitCode::from(e.exit_code() as u8))
        }
    }
}
