use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use cisbench::detection::{FusionRule, Thresholds};
use cisbench::registry::load_registry;
use cisbench::runner::{self, Rescore, RunConfig, RunError, RunManifest, Runner};
use cisbench::suite::build_suite;
use cisbench::util::write_atomic;

#[derive(Parser)]
#[command(
    name = "cisbench",
    version,
    about = "Component inclusion benchmark for text-to-image models"
)]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prompt suite operations.
    Suite {
        #[command(subcommand)]
        action: SuiteCommand,
    },
    /// Run a full evaluation.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue an interrupted run.
    Resume {
        /// Manifest file or run directory.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Re-score a run's cached images with new thresholds.
    Score {
        #[arg(long)]
        from: PathBuf,
        /// Defaults to `<from>/rescored`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tau_sim: Option<f64>,
        #[arg(long)]
        tau_det: Option<f64>,
        #[arg(long, value_enum, default_value_t = Rule::Disjunctive)]
        rule: Rule,
        /// Scoring threads, 0 for one per hardware thread.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Attention entropy and embedding overlap only.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a run's outputs from its records.
    Report {
        #[arg(long)]
        from: PathBuf,
    },
    /// Calibrate the similarity threshold on the mock world.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Where to write the calibration JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SuiteCommand {
    /// Build the prompt suite and lookup table.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Disjunctive,
    Conjunctive,
}

fn error_line(kind: &str, message: &str, extra: Option<(&str, String)>) -> String {
    let mut v = json!({ "error": kind, "message": message.replace('\n', " ") });
    if let Some((k, val)) = extra {
        v[k] = json!(val);
    }
    v.to_string()
}

fn usage_error(e: &clap::Error) -> String {
    let flag = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => Some(s.clone()),
        Some(ContextValue::Strings(v)) => v.first().cloned(),
        _ => None,
    };
    let message = e.to_string();
    let first = message
        .lines()
        .next()
        .unwrap_or("usage error")
        .trim_start_matches("error: ");
    error_line("usage", first, flag.map(|f| ("flag", f)))
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        RunManifest::path_in(p)
    } else {
        p.to_path_buf()
    }
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Suite {
            action: SuiteCommand::Build { config, out },
        } => {
            let cfg = RunConfig::load(&config)?;
            let registry = load_registry(&cfg.resolve(&cfg.registry))?;
            let suite = build_suite(&registry, &cfg.suite, cfg.seeds.suite)?;
            std::fs::create_dir_all(&out)?;
            write_atomic(&out.join("suite.jsonl"), suite.to_jsonl().as_bytes())?;
            write_atomic(
                &out.join("lookup.jsonl"),
                suite.lookup_table(&registry).to_jsonl().as_bytes(),
            )?;
            info!("{} prompts written to {}", suite.prompts.len(), out.display());
        }
        Command::Run { config, out } => {
            let (manifest, report) = runner::run_evaluation(&config, out.as_deref())?;
            info!(
                "run {} done: overall CIS {:?}, {} backend calls",
                manifest.run_id, report.overall_cis, manifest.backend_calls
            );
        }
        Command::Resume { manifest } => {
            let (manifest, _) = runner::resume(&manifest_path(&manifest))?;
            info!(
                "run {} resumed: {} backend calls",
                manifest.run_id, manifest.backend_calls
            );
        }
        Command::Score {
            from,
            out,
            tau_sim,
            tau_det,
            rule,
            threads,
        } => {
            let d = Thresholds::default();
            let thresholds = Thresholds {
                sim: tau_sim.unwrap_or(d.sim),
                det: tau_det.unwrap_or(d.det),
            };
            let rule = match rule {
                Rule::Disjunctive => FusionRule::Disjunctive,
                Rule::Conjunctive => FusionRule::Conjunctive,
            };
            let out = out.unwrap_or_else(|| from.join("rescored"));
            let report = runner::rescore(&from, &out, Rescore { thresholds, rule }, threads)?;
            info!(
                "re-scored into {}: overall CIS {:?}",
                out.display(),
                report.overall_cis
            );
        }
        Command::Diagnose { config, out } => {
            let r = Runner::from_config_file(&config, Some(&out))?;
            let diag = runner::diagnose(&r)?;
            if let Some(p) = &diag.entropy {
                info!("entropy ratio {:?}, peak layer {:?}", p.ratio, p.peak_layer);
            }
        }
        Command::Report { from } => {
            runner::rerender(&from)?;
            info!("outputs re-rendered in {}", from.display());
        }
        Command::Calibrate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let c = runner::calibrate(&cfg)?;
            let text = serde_json::to_string_pretty(&c)? + "\n";
            match out {
                Some(p) => write_atomic(&p, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", usage_error(&e));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string(), None));
            ExitCode::from(1)
        }
    }
}
