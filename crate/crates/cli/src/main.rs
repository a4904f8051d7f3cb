use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mcout_cli::config::{RunConfig, Variant};
use mcout_cli::error::{CliError, CliResult};
use mcout_cli::{ablate, analyze, dataset, eval, runner, train};
use mcout_core::metrics::AccuracyMode;

#[derive(Parser)]
#[command(
    name = "mcout",
    about = "Multimodal transformer that reasons in continuous latent space",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Open,
    Choice,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Base,
    Multi,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset as JSONL.
    GenData {
        /// Dataset spec file: flat key = value lines (task, samples, seed,
        /// grid, cell_pixels, mode, min_objects, max_objects).
        #[arg(long)]
        spec: PathBuf,
        /// Output path; a directory gets data.jsonl inside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training JSONL; defaults to the config's train_data key.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this optimizer step (schedule still spans the
        /// configured total, so a later resume completes the same run).
        #[arg(long)]
        stop_after: Option<u64>,
        /// Override a config key, e.g. --set mu=0.8 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Force the scoring mode instead of inferring it from the data.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Report destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Dump latent statistics per reasoning iteration.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Reasoning depth to analyze at (defaults to the checkpoint's).
        #[arg(long)]
        nt: Option<usize>,
        /// Variant to analyze as (defaults to the checkpoint's).
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Aggregate stats CSV path; per-sample CSVs land next to it.
        #[arg(long)]
        out: PathBuf,
        /// Cap on analyzed samples.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train and score the full depth-by-μ grid.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid file: flat key = value lines (mu, nt, steps) overriding
        /// the config's ablate_* keys.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Training JSONL; defaults to the config's train_data key.
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// Scoring JSONL; defaults to the config's eval_data key.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load_config(path: &Option<PathBuf>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(overrides).map_err(CliError::Contract)?;
    Ok(cfg)
}

fn read_text(path: &PathBuf) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))
}

/// `--data` style fallback: flag, else a non-empty config key.
fn resolve_path(flag: &Option<PathBuf>, from_cfg: &str, what: &str) -> CliResult<PathBuf> {
    match flag {
        Some(p) => Ok(p.clone()),
        None if !from_cfg.is_empty() => Ok(PathBuf::from(from_cfg)),
        None => Err(CliError::Contract(mcout_core::Error::Config(format!(
            "no {what}: pass the flag or set the config key"
        )))),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::GenData { spec, out } => {
            let parsed = dataset::parse_spec(&read_text(&spec)?).map_err(CliError::Contract)?;
            let out = if out.extension().is_some_and(|e| e == "jsonl") {
                if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)
                        .map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))?;
                }
                out
            } else {
                std::fs::create_dir_all(&out)
                    .map_err(|e| CliError::io(&format!("creating {}", out.display()), e))?;
                out.join("data.jsonl")
            };
            let data = mcout_core::data::generate_dataset(&parsed).map_err(CliError::Contract)?;
            let records: Vec<dataset::Record> =
                data.iter().map(dataset::Record::from_sample).collect();
            dataset::write_jsonl(&out, &records)?;
            eprintln!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
        Cmd::Train {
            config,
            out,
            data,
            resume,
            stop_after,
            overrides,
        } => {
            let cfg = match (&config, &resume) {
                (None, Some(_)) if overrides.is_empty() => None,
                _ => Some(load_config(&config, &overrides)?),
            };
            let outcome = train::train(&train::TrainArgs {
                config: cfg,
                data,
                out,
                resume,
                stop_after,
            })?;
            eprintln!(
                "trained {} steps (now at step {}); model at {}",
                outcome.steps_run,
                outcome.last_step,
                outcome.model_path.display()
            );
            Ok(())
        }
        Cmd::Eval {
            ckpt,
            data,
            mode,
            out,
            overrides,
        } => {
            let (mut state, _) = runner::ModelState::load(&ckpt)?;
            state
                .run
                .apply_overrides(&overrides)
                .map_err(CliError::Contract)?;
            state.run.validate().map_err(CliError::Contract)?;
            let samples = runner::prepare(&dataset::read_jsonl(&data)?)?;
            let force = mode.map(|m| match m {
                ModeArg::Open => AccuracyMode::Open,
                ModeArg::Choice => AccuracyMode::Choice,
            });
            let outcome = eval::evaluate(&state, &samples, force)?;
            let body = serde_json::to_string_pretty(&outcome.report)
                .map_err(|e| CliError::io("serializing report", e))?;
            match out {
                Some(path) => std::fs::write(&path, body)
                    .map_err(|e| CliError::io(&format!("writing {}", path.display()), e))?,
                None => println!("{body}"),
            }
            eprintln!(
                "accuracy {:.2}% | bleu {:.4} | {} samples",
                outcome.report.accuracy * 100.0,
                outcome.report.bleu,
                outcome.report.n_samples
            );
            Ok(())
        }
        Cmd::Analyze {
            ckpt,
            data,
            nt,
            variant,
            out,
            samples,
            overrides,
        } => {
            let (mut state, _) = runner::ModelState::load(&ckpt)?;
            if let Some(k) = nt {
                state.run.n_t = k;
            }
            if let Some(v) = variant {
                state.run.variant = match v {
                    VariantArg::Base => Variant::Base,
                    VariantArg::Multi => Variant::Multi,
                };
            }
            state
                .run
                .apply_overrides(&overrides)
                .map_err(CliError::Contract)?;
            state.run.validate().map_err(CliError::Contract)?;
            if state.run.variant == Variant::Multi && state.latent.is_none() {
                return Err(CliError::Contract(mcout_core::Error::Config(
                    "checkpoint has no latent-attention parameters; analyze it as --variant base"
                        .into(),
                )));
            }
            let mut prepared = runner::prepare(&dataset::read_jsonl(&data)?)?;
            prepared.truncate(samples);
            let outcome = analyze::analyze(&state, &prepared, &out)?;
            eprintln!(
                "analyzed {} samples x {} iterations; stats at {}",
                outcome.samples,
                outcome.iterations,
                outcome.stats_path.display()
            );
            Ok(())
        }
        Cmd::Ablate {
            config,
            grid,
            train_data,
            eval_data,
            out,
            overrides,
        } => {
            let mut cfg = load_config(&config, &overrides)?;
            if let Some(grid_path) = &grid {
                ablate::apply_grid(&mut cfg, &read_text(grid_path)?).map_err(CliError::Contract)?;
            }
            let train_path = resolve_path(&train_data, &cfg.train_data, "training data")?;
            let eval_path = resolve_path(&eval_data, &cfg.eval_data, "scoring data")?;
            ablate::ablate(&ablate::AblateArgs {
                config: cfg,
                train_data: train_path,
                eval_data: eval_path,
                out,
            })?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
