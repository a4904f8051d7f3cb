//! Finite-difference gradient verification.
//!
//! Rebuilds a user-supplied scalar function around perturbed inputs and
//! compares central differences against the tape's analytic gradients.
//! Meant for f64 tests; the relative error uses a floored denominator
//! `max(|fd|, |analytic|, 1e-3)` so near-zero gradients are compared
//! absolutely instead of amplifying rounding noise.

use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::{below, seeded};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Coordinates probed across all inputs.
    pub checked: usize,
}

/// Checks `build`'s analytic gradients at `inputs`.
///
/// `build` must construct the scalar loss from leaves handed to it in input
/// order. Each input has up to `probes_per_input` coordinates perturbed by
/// `±h` (all coordinates when the input is small enough).
pub fn check<F>(
    inputs: &[Tensor<f64>],
    probes_per_input: usize,
    h: f64,
    seed: u64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &vars)?;
        g.value(loss).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;

    let mut rng = seeded(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.numel();
        if n == 0 {
            continue;
        }
        let analytic = g.grad(vars[idx]);
        let coords: Vec<usize> = if n <= probes_per_input {
            (0..n).collect()
        } else {
            (0..probes_per_input).map(|_| below(&mut rng, n)).collect()
        };
        for c in coords {
            let orig = input.data()[c];
            work[idx].data_mut()[c] = orig + h;
            let f_plus = eval(&work)?;
            work[idx].data_mut()[c] = orig - h;
            let f_minus = eval(&work)?;
            work[idx].data_mut()[c] = orig;
            let fd = (f_plus - f_minus) / (2.0 * h);
            let an = analytic.map_or(0.0, |t| t.data()[c]);
            let abs = (fd - an).abs();
            let rel = abs / fd.abs().max(an.abs()).max(1e-3);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, seeded};

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = seeded(seed);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal(&mut rng, 0.0, 1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_sum_gradient() {
        let a = random_tensor(&[3, 4], 10);
        let b = random_tensor(&[4, 2], 11);
        let report = check(&[a, b], 64, 1e-5, 99, |g, vars| {
            let c = g.matmul(vars[0], vars[1])?;
            Ok(g.sum(c))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn detects_broken_gradient() {
        // sum(x * x) but probe against a graph computing sum(x * const):
        // analytic and fd gradients must disagree.
        let x = random_tensor(&[4], 3);
        let report = check(&[x], 8, 1e-5, 5, |g, vars| {
            let d = g.detach(vars[0]);
            let y = g.mul(vars[0], d)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(report.max_rel_err > 1e-2, "{report:?}");
    }
}
