//! Ablation grid over reasoning depth and auxiliary-loss weight.
//!
//! Each cell trains a fresh model from the same seed and evaluates it;
//! depth 0 makes the loss independent of μ by construction, so that row
//! trains once and is reused across columns. A numerically failing cell is
//! recorded and the grid continues.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset;
use crate::error::{CliError, CliResult};
use crate::eval::{self, format_with_delta};
use crate::runner::{self, PreparedSample};
use crate::train::{self, TrainArgs};

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub n_t: usize,
    pub mu: f64,
    pub steps: u64,
    pub accuracy: Option<f64>,
    pub bleu: Option<f64>,
    pub status: String,
}

#[derive(Debug, Serialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub baseline: CellResult,
    pub cells: Vec<CellResult>,
}

pub struct AblateArgs {
    pub config: RunConfig,
    pub train_data: PathBuf,
    pub eval_data: PathBuf,
    pub out: PathBuf,
}

/// Applies a grid file (flat `key = value`, keys `mu`, `nt`, `steps`) onto
/// the config's ablation settings.
pub fn apply_grid(cfg: &mut RunConfig, text: &str) -> Result<(), mcout_core::Error> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            mcout_core::Error::Config(format!("grid line {}: expected key = value", lineno + 1))
        })?;
        let target = match key.trim() {
            "mu" => "ablate_mu",
            "nt" => "ablate_nt",
            "steps" => "ablate_steps",
            other => {
                return Err(mcout_core::Error::Config(format!(
                    "unknown grid key {other:?} (expected mu, nt, steps)"
                )))
            }
        };
        cfg.set(target, value.trim())?;
    }
    Ok(())
}

fn run_cell(
    base: &RunConfig,
    n_t: usize,
    mu: f64,
    steps: u64,
    train_samples: &[PreparedSample],
    eval_samples: &[PreparedSample],
    out: &Path,
) -> CliResult<CellResult> {
    let mut cfg = base.clone();
    cfg.n_t = n_t;
    cfg.mu = mu;
    cfg.steps = steps;
    cfg.pretrain_steps = 0;
    let args = TrainArgs {
        config: Some(cfg),
        data: None,
        out: out.to_path_buf(),
        resume: None,
        stop_after: None,
    };
    let outcome = match train::train_prepared(&args, train_samples) {
        Ok(o) => o,
        Err(CliError::Numeric(msg)) => {
            return Ok(CellResult {
                n_t,
                mu,
                steps,
                accuracy: None,
                bleu: None,
                status: format!("failed: {msg}"),
            })
        }
        Err(e) => return Err(e),
    };
    let scored = eval::evaluate(&outcome.state, eval_samples, None)?;
    Ok(CellResult {
        n_t,
        mu,
        steps,
        accuracy: Some(scored.report.accuracy),
        bleu: Some(scored.report.bleu),
        status: "ok".into(),
    })
}

pub fn ablate(args: &AblateArgs) -> CliResult<AblationReport> {
    let cfg = &args.config;
    cfg.validate().map_err(CliError::Contract)?;
    let train_samples = runner::prepare(&dataset::read_jsonl(&args.train_data)?)?;
    let eval_samples = runner::prepare(&dataset::read_jsonl(&args.eval_data)?)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::io(&format!("creating {}", args.out.display()), e))?;

    let steps = if cfg.ablate_steps > 0 {
        cfg.ablate_steps
    } else {
        cfg.steps
    };

    let baseline = run_cell(
        cfg,
        0,
        0.0,
        steps,
        &train_samples,
        &eval_samples,
        &args.out.join("cell-baseline"),
    )?;
    log::info!(
        "baseline (depth 0): {}",
        baseline
            .accuracy
            .map_or("failed".into(), |a| format!("{:.2}% accuracy", a * 100.0))
    );

    let mut cells = Vec::new();
    for &n_t in &cfg.ablate_nt {
        for &mu in &cfg.ablate_mu {
            let cell = if n_t == 0 {
                // Depth 0 never builds the auxiliary branches, so every μ
                // trains identically to the baseline.
                CellResult {
                    mu,
                    ..baseline.clone()
                }
            } else {
                let dir = args.out.join(format!("cell-nt{n_t}-mu{mu}"));
                let cell = run_cell(cfg, n_t, mu, steps, &train_samples, &eval_samples, &dir)?;
                log::info!(
                    "cell n_t={n_t} mu={mu}: {}",
                    cell.accuracy
                        .map_or_else(|| cell.status.clone(), |a| format!("{:.2}%", a * 100.0))
                );
                cell
            };
            cells.push(cell);
        }
    }

    let report = AblationReport {
        config_hash: cfg.hash_hex(),
        baseline,
        cells,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::io("serializing ablation report", e))?;
    fs::write(args.out.join("ablation.json"), json)
        .map_err(|e| CliError::io("writing ablation.json", e))?;
    let table = render_table(&report);
    fs::write(args.out.join("ablation.txt"), &table)
        .map_err(|e| CliError::io("writing ablation.txt", e))?;
    print!("{table}");
    Ok(report)
}

/// Plain-text accuracy table, reasoning depth by μ, each cell carrying its
/// delta against the depth-0 baseline.
pub fn render_table(report: &AblationReport) -> String {
    let base_acc = report.baseline.accuracy.unwrap_or(f64::NAN);
    let mut nts: Vec<usize> = report.cells.iter().map(|c| c.n_t).collect();
    nts.sort_unstable();
    nts.dedup();
    let mut mus: Vec<f64> = report.cells.iter().map(|c| c.mu).collect();
    mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mus.dedup();

    let cell_text = |n_t: usize, mu: f64| -> String {
        let cell = report
            .cells
            .iter()
            .find(|c| c.n_t == n_t && c.mu == mu);
        match cell {
            Some(c) => match c.accuracy {
                Some(a) => format_with_delta(a, base_acc),
                None => c.status.clone(),
            },
            None => "-".into(),
        }
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["n_t \\ mu".to_string()];
    header.extend(mus.iter().map(|m| format!("{m}")));
    rows.push(header);
    for &n_t in &nts {
        let mut row = vec![format!("{n_t}")];
        row.extend(mus.iter().map(|&mu| cell_text(n_t, mu)));
        rows.push(row);
    }

    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::from("accuracy by reasoning depth and auxiliary weight\n");
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let pad = widths[c] - cell.chars().count();
                format!("{cell}{}", " ".repeat(pad))
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
