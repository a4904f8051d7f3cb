//! Training loop: deterministic batching, per-step metrics, epoch-end
//! checkpoints, and resume.
//!
//! Everything that influences the trajectory is a pure function of the
//! run configuration and the dataset: epoch shuffles draw from
//! `(seed, epoch)`, dropout from `(seed, step)`, and the optimizer step
//! count is persisted, so stopping at any step and resuming from the
//! written checkpoint replays the exact run. Wallclock goes to a separate
//! timing file to keep the metrics stream byte-reproducible.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mcout_core::mcout::{total_loss, ReasoningConfig};
use mcout_core::optim::AdamW;
use mcout_core::rng::{seeded, shuffle};
use mcout_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset;
use crate::error::{CliError, CliResult};
use crate::runner::{self, ModelState, PreparedSample};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    #[serde(rename = "final")]
    pub final_loss: f64,
    pub aux: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct TimingLog {
    step: u64,
    millis: f64,
}

#[derive(Debug, Serialize)]
struct GradNorm {
    name: String,
    norm: f64,
    finite: bool,
}

#[derive(Debug, Serialize)]
struct NanDump {
    step: u64,
    lr: f64,
    total: f64,
    #[serde(rename = "final")]
    final_loss: f64,
    aux: Vec<f64>,
    grad_norms: Vec<GradNorm>,
}

pub struct TrainArgs {
    /// Required for fresh runs. A resumed run takes its configuration from
    /// the checkpoint; passing one anyway asserts it matches.
    pub config: Option<RunConfig>,
    /// Falls back to the config's `train_data` key when omitted.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    /// Halt after this optimizer step without touching the schedule;
    /// resume later to finish the configured run.
    pub stop_after: Option<u64>,
}

pub struct TrainOutcome {
    pub state: ModelState,
    pub steps_run: u64,
    pub last_step: u64,
    pub model_path: PathBuf,
}

/// Effective reasoning/μ for a step: the optional first phase trains the
/// plain decoder (no thoughts), the second the full reasoning loop.
fn phase_of(cfg: &RunConfig, step: u64) -> (ReasoningConfig, f64) {
    let mut rcfg = cfg.reasoning_config();
    if step < cfg.pretrain_steps {
        rcfg.n_t = 0;
        (rcfg, 0.0)
    } else {
        (rcfg, cfg.mu)
    }
}

pub fn train(args: &TrainArgs) -> CliResult<TrainOutcome> {
    let records = dataset::read_jsonl(&resolve_data(args)?)?;
    let samples = runner::prepare(&records)?;
    train_prepared(args, &samples)
}

/// Training data comes from the `--data` flag when given, else from the
/// effective config's `train_data` key (checkpoint config on resume).
fn resolve_data(args: &TrainArgs) -> CliResult<PathBuf> {
    if let Some(p) = &args.data {
        return Ok(p.clone());
    }
    let from_cfg = match (&args.config, &args.resume) {
        (Some(cfg), _) => cfg.train_data.clone(),
        (None, Some(ckpt)) => ModelState::load(ckpt)?.0.run.train_data,
        (None, None) => String::new(),
    };
    if from_cfg.is_empty() {
        return Err(CliError::Contract(Error::Config(
            "no training data: pass --data or set train_data in the config".into(),
        )));
    }
    Ok(PathBuf::from(from_cfg))
}

pub fn train_prepared(args: &TrainArgs, samples: &[PreparedSample]) -> CliResult<TrainOutcome> {
    let (mut state, opt) = match &args.resume {
        Some(path) => {
            let (state, opt) = ModelState::load(path)?;
            let opt = opt.ok_or_else(|| {
                CliError::Contract(Error::Config(format!(
                    "{} has no optimizer state to resume from",
                    path.display()
                )))
            })?;
            if let Some(cfg) = &args.config {
                if cfg.hash() != state.run.hash() {
                    return Err(CliError::Contract(Error::Config(
                        "resume config does not match the checkpoint's (omit it, or pass the same one)"
                            .into(),
                    )));
                }
            }
            (state, opt)
        }
        None => {
            let cfg = args.config.as_ref().ok_or_else(|| {
                CliError::Contract(Error::Config("a fresh run needs a configuration".into()))
            })?;
            cfg.validate().map_err(CliError::Contract)?;
            (ModelState::init(cfg.clone())?, AdamW::new(cfg.adamw()))
        }
    };
    let cfg = state.run.clone();
    let mut opt = opt;

    let n = samples.len();
    let steps_per_epoch = n / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(CliError::Contract(Error::Config(format!(
            "{n} samples cannot fill a batch of {}",
            cfg.batch_size
        ))));
    }

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::io(&format!("creating {}", args.out.display()), e))?;
    let metrics_path = args.out.join("metrics.jsonl");
    let timing_path = args.out.join("timing.jsonl");
    let mut metrics = BufWriter::new(
        fs::File::create(&metrics_path)
            .map_err(|e| CliError::io(&format!("creating {}", metrics_path.display()), e))?,
    );
    let mut timing = BufWriter::new(
        fs::File::create(&timing_path)
            .map_err(|e| CliError::io(&format!("creating {}", timing_path.display()), e))?,
    );

    let schedule = cfg.schedule().map_err(CliError::Contract)?;
    let total = cfg.total_steps();
    let start = opt.step_count();
    let stop = args.stop_after.unwrap_or(total).min(total);
    if start > stop {
        return Err(CliError::Contract(Error::Config(format!(
            "checkpoint is already at step {start}, past the requested stop {stop}"
        ))));
    }

    let mut order: Vec<usize> = Vec::new();
    let mut order_epoch = u64::MAX;
    let mut steps_run = 0u64;

    for step in start..stop {
        let clock = Instant::now();
        let epoch = step / steps_per_epoch as u64;
        let pos = (step % steps_per_epoch as u64) as usize;
        if epoch != order_epoch {
            order = (0..n).collect();
            let mut rng = seeded(runner::shuffle_seed(cfg.seed, epoch));
            shuffle(&mut rng, &mut order);
            order_epoch = epoch;
        }
        let refs: Vec<&PreparedSample> = order[pos * cfg.batch_size..(pos + 1) * cfg.batch_size]
            .iter()
            .map(|&i| &samples[i])
            .collect();
        let answers: Vec<Vec<u32>> = refs.iter().map(|s| s.answer_ids.clone()).collect();

        let (rcfg, mu) = phase_of(&cfg, step);
        let mut br = runner::reason_batch(
            &state,
            &rcfg,
            &refs,
            true,
            Some(runner::dropout_seed(cfg.seed, step)),
        )?;
        let loss = total_loss(&mut br.g, &br.bound, &br.run, &answers, mu)
            .map_err(CliError::Contract)?;
        let lr = schedule.lr_at(step).map_err(CliError::Contract)?;

        let entry = StepLog {
            step,
            lr,
            total: loss.total_value(&br.g),
            final_loss: loss.final_value(&br.g),
            aux: loss.aux_values(&br.g),
        };

        let mut numeric_failure = !entry.total.is_finite() || !entry.final_loss.is_finite();
        let mut grads = Vec::new();
        if !numeric_failure {
            br.g.backward(loss.total).map_err(CliError::Contract)?;
            grads = br.gradients();
            numeric_failure = grads
                .iter()
                .any(|g| g.as_ref().is_some_and(|t| !t.is_finite()));
        }
        if numeric_failure {
            let names = state.param_names();
            let grad_norms = names
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    let g = grads.get(i).and_then(Option::as_ref);
                    GradNorm {
                        name: name.clone(),
                        norm: g.map_or(0.0, |t| t.l2_norm_f64()),
                        finite: g.is_none_or(|t| t.is_finite()),
                    }
                })
                .collect();
            let dump = NanDump {
                step,
                lr,
                total: entry.total,
                final_loss: entry.final_loss,
                aux: entry.aux.clone(),
                grad_norms,
            };
            let dump_path = args.out.join("nan-diagnostics.json");
            let body = serde_json::to_string_pretty(&dump)
                .map_err(|e| CliError::io("serializing diagnostics", e))?;
            fs::write(&dump_path, body)
                .map_err(|e| CliError::io(&format!("writing {}", dump_path.display()), e))?;
            return Err(CliError::Numeric(format!(
                "non-finite loss or gradient at step {step} (lr {lr}); diagnostics in {}",
                dump_path.display()
            )));
        }

        let mut refs_mut = runner::param_refs(&mut state.params, &mut state.latent);
        opt.step(lr, &mut refs_mut, &grads).map_err(CliError::Contract)?;

        let line = serde_json::to_string(&entry)
            .map_err(|e| CliError::io("serializing metrics", e))?;
        writeln!(metrics, "{line}").map_err(|e| CliError::io("writing metrics", e))?;
        let tline = serde_json::to_string(&TimingLog {
            step,
            millis: clock.elapsed().as_secs_f64() * 1e3,
        })
        .map_err(|e| CliError::io("serializing timing", e))?;
        writeln!(timing, "{tline}").map_err(|e| CliError::io("writing timing", e))?;
        steps_run += 1;

        let next = step + 1;
        if pos + 1 == steps_per_epoch && next < total {
            let path = args.out.join(format!("ckpt-step{next}.mcout"));
            state.save(&path, Some(&opt))?;
        }
    }

    metrics.flush().map_err(|e| CliError::io("flushing metrics", e))?;
    timing.flush().map_err(|e| CliError::io("flushing timing", e))?;

    let model_path = args.out.join("model.mcout");
    state.save(&model_path, Some(&opt))?;
    Ok(TrainOutcome {
        state,
        steps_run,
        last_step: stop,
        model_path,
    })
}

pub fn read_metrics(path: &Path) -> CliResult<Vec<StepLog>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| CliError::io(&format!("parsing {}", path.display()), e))
        })
        .collect()
}
