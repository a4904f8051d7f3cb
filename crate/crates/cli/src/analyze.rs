//! Latent-distribution analysis: per-sample and aggregate statistics of
//! the hidden state and appended thought at every reasoning iteration.
//!
//! Samples run one at a time so the auxiliary losses in the CSV are exact
//! per-sample values, not batch means.

use std::fs;
use std::path::{Path, PathBuf};

use mcout_core::mcout::{total_loss, Variant, TRACE_CSV_HEADER};

use crate::error::{CliError, CliResult};
use crate::runner::{self, ModelState, PreparedSample};

pub const STATS_CSV_HEADER: &str =
    "k,samples,hl_mean,hl_std,hl_norm,ht_mean,ht_std,ht_norm,aux_loss";

#[derive(Debug, Default, Clone)]
struct Accumulator {
    n: usize,
    sums: [f64; 7],
}

pub struct AnalyzeOutcome {
    pub per_sample_path: PathBuf,
    pub prenorm_path: Option<PathBuf>,
    pub stats_path: PathBuf,
    pub samples: usize,
    pub iterations: usize,
}

/// `out` names the aggregate stats CSV; the per-sample CSVs land next to
/// it as `<stem>_per_sample.csv` and `<stem>_per_sample_prenorm.csv`.
pub fn analyze(
    state: &ModelState,
    samples: &[PreparedSample],
    out: &Path,
) -> CliResult<AnalyzeOutcome> {
    let cfg = &state.run;
    let rcfg = cfg.reasoning_config();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::io(&format!("creating {}", dir.display()), e))?;
    }
    let sibling = |suffix: &str| {
        let stem = out.file_stem().unwrap_or_default().to_string_lossy();
        out.with_file_name(format!("{stem}{suffix}.csv"))
    };

    let n_t = rcfg.n_t;
    if n_t == 0 {
        log::warn!("reasoning depth is 0: no iterations to analyze");
    }
    let prenorm = rcfg.variant == Variant::Multi && n_t > 0;

    let mut per_sample = vec![TRACE_CSV_HEADER.to_string()];
    let mut per_sample_pre = vec![TRACE_CSV_HEADER.to_string()];
    let mut acc: Vec<Accumulator> = vec![Accumulator::default(); n_t];

    for sample in samples {
        let refs = [sample];
        let mut br = runner::reason_batch(state, &rcfg, &refs, false, None)?;
        let aux = if n_t > 0 {
            let loss = total_loss(
                &mut br.g,
                &br.bound,
                &br.run,
                &[sample.answer_ids.clone()],
                1.0,
            )
            .map_err(CliError::Contract)?;
            Some(loss.aux_values(&br.g))
        } else {
            None
        };
        let ids = [sample.id.as_str()];
        let rows = br
            .run
            .trace
            .csv_rows(&ids, aux.as_deref(), false)
            .map_err(CliError::Contract)?;
        for (k, row) in rows.iter().enumerate() {
            let fields: Vec<&str> = row.split(',').collect();
            let a = &mut acc[k];
            a.n += 1;
            for (slot, field) in a.sums.iter_mut().zip(&fields[2..9]) {
                let v: f64 = field.parse().map_err(|_| {
                    CliError::Io(format!("unparseable stat {field:?} in trace row"))
                })?;
                *slot += v;
            }
        }
        per_sample.extend(rows);
        if prenorm {
            per_sample_pre.extend(
                br.run
                    .trace
                    .csv_rows(&ids, aux.as_deref(), true)
                    .map_err(CliError::Contract)?,
            );
        }
    }

    let mut stats = vec![STATS_CSV_HEADER.to_string()];
    for (k, a) in acc.iter().enumerate() {
        let n = a.n.max(1) as f64;
        let cells: Vec<String> = a.sums.iter().map(|s| format!("{}", s / n)).collect();
        stats.push(format!("{},{},{}", k + 1, a.n, cells.join(",")));
    }

    let per_sample_path = sibling("_per_sample");
    write_lines(&per_sample_path, &per_sample)?;
    let prenorm_path = if prenorm {
        let p = sibling("_per_sample_prenorm");
        write_lines(&p, &per_sample_pre)?;
        Some(p)
    } else {
        None
    };
    let stats_path = out.to_path_buf();
    write_lines(&stats_path, &stats)?;

    Ok(AnalyzeOutcome {
        per_sample_path,
        prenorm_path,
        stats_path,
        samples: samples.len(),
        iterations: n_t,
    })
}

fn write_lines(path: &Path, lines: &[String]) -> CliResult<()> {
    let mut body = lines.join("\n");
    body.push('\n');
    fs::write(path, body).map_err(|e| CliError::io(&format!("writing {}", path.display()), e))
}
