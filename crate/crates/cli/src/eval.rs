//! Evaluation: reason, generate, score.
//!
//! Each sample's sampling stream is seeded by its dataset index, so
//! predictions do not depend on batch composition. Accuracy uses letter
//! extraction when every record carries choices, exact match otherwise.

use mcout_core::metrics::{accuracy, bleu_corpus, AccuracyMode};
use mcout_core::model::{generate, vocab};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::runner::{self, ModelState, PreparedSample};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub bleu: f64,
    pub n_samples: usize,
    pub config_hash: String,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub predictions: Vec<String>,
}

/// Generates an answer for every sample and scores against the stored
/// ground truth. `force_mode` pins the accuracy mode; otherwise choice
/// scoring applies exactly when every sample carries options.
pub fn evaluate(
    state: &ModelState,
    samples: &[PreparedSample],
    force_mode: Option<AccuracyMode>,
) -> CliResult<EvalOutcome> {
    let cfg = &state.run;
    let rcfg = cfg.reasoning_config();
    let gcfg = cfg.generation(cfg.eval_seed).map_err(CliError::Contract)?;
    let mut predictions = Vec::with_capacity(samples.len());

    for (chunk_start, chunk) in samples
        .chunks(cfg.batch_size)
        .enumerate()
        .map(|(i, c)| (i * cfg.batch_size, c))
    {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let mut br = runner::reason_batch(state, &rcfg, &refs, false, None)?;
        let fin = br.run.final_step();
        let h_last = fin.h_l;
        let mask = fin.mask.clone();
        let mut dstate = fin.cache.clone();
        let seeds: Vec<u64> = (0..chunk.len())
            .map(|i| runner::generation_seed(cfg.eval_seed, (chunk_start + i) as u64))
            .collect();
        let outputs = generate(&mut br.g, &br.bound, &gcfg, &mut dstate, &mask, h_last, &seeds)
            .map_err(CliError::Contract)?;
        for ids in outputs {
            predictions.push(vocab::decode(&ids));
        }
    }

    let golds: Vec<&str> = samples.iter().map(|s| s.answer_text.as_str()).collect();
    let preds: Vec<&str> = predictions.iter().map(String::as_str).collect();
    let mode = force_mode.unwrap_or(if samples.iter().all(|s| s.has_choices) {
        AccuracyMode::Choice
    } else {
        AccuracyMode::Open
    });
    let acc = accuracy(&preds, &golds, mode).map_err(CliError::Contract)?;
    let pairs: Vec<(&str, Vec<&str>)> = preds
        .iter()
        .zip(&golds)
        .map(|(&p, &g)| (p, vec![g]))
        .collect();
    let bleu = bleu_corpus(&pairs).map_err(CliError::Contract)?;

    Ok(EvalOutcome {
        report: EvalReport {
            accuracy: acc,
            bleu,
            n_samples: samples.len(),
            config_hash: cfg.hash_hex(),
        },
        predictions,
    })
}

/// `"92.50% (↑ 2.50%)"`: a percentage with its delta against a baseline,
/// in percentage points.
pub fn format_with_delta(value: f64, baseline: f64) -> String {
    let v = value * 100.0;
    let d = (value - baseline) * 100.0;
    if d.abs() < 5e-3 {
        format!("{v:.2}% (0.00%)")
    } else if d > 0.0 {
        format!("{v:.2}% (\u{2191} {d:.2}%)")
    } else {
        format!("{v:.2}% (\u{2193} {:.2}%)", -d)
    }
}
