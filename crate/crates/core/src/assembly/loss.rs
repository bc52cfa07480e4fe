//! Objective terms on the per-slot probability tensor `P[a, j, i]` (copy,
//! lab slot, generated item) and their gradient through the softmax.

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{AssemblyConfig, AssemblyProblem, ReuseMode};
use crate::error::{Error, Result};

/// `sum_a sum_j sum_i P[a,j,i] D[i,j]`
pub fn loss_distance(p: &Array3<f64>, dist: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for slot in p.outer_iter() {
        for (j, row) in slot.outer_iter().enumerate() {
            total += row.iter().zip(dist.column(j)).map(|(p, d)| p * d).sum::<f64>();
        }
    }
    total
}

/// Slot totals used by the reuse term: `(G, per-slot group sums)`.
fn reuse_groups(p: &Array3<f64>, mode: ReuseMode) -> (Array1<f64>, Array2<f64>) {
    let g = p.sum_axis(Axis(0)).sum_axis(Axis(0));
    let groups = match mode {
        // one group per (copy, slot)
        ReuseMode::AllDistinctSlots => p.to_shape((p.dim().0 * p.dim().1, p.dim().2)).unwrap().to_owned(),
        // one group per lab slot, summed over copies
        ReuseMode::PaperLiteral => p.sum_axis(Axis(0)),
    };
    (g, groups)
}

/// Sum of inner products between the probability vectors of distinct
/// slots. `AllDistinctSlots` counts every ordered pair `(a,i) != (b,j)`;
/// `PaperLiteral` only pairs with different lab-slot index.
pub fn loss_reuse(p: &Array3<f64>, mode: ReuseMode) -> f64 {
    let (g, groups) = reuse_groups(p, mode);
    g.dot(&g) - groups.iter().map(|x| x * x).sum::<f64>()
}

/// Per-copy selection mass `Q[a, i] = sum_j P[a, j, i]`.
pub fn selection_mass(p: &Array3<f64>) -> Array2<f64> {
    p.sum_axis(Axis(1))
}

/// `sum_a sum_{i != k} Q[a,i] C[i,k] Q[a,k]`; `C` has a zero diagonal.
pub fn loss_cosine(p: &Array3<f64>, sim: &Array2<f64>) -> f64 {
    let q = selection_mass(p);
    let cq = q.dot(sim);
    (&q * &cq).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub distance: f64,
    pub reuse: f64,
    pub cosine: f64,
    /// Weighted sum of the three terms.
    pub total: f64,
}

pub fn loss_breakdown(problem: &AssemblyProblem, p: &Array3<f64>, config: &AssemblyConfig) -> LossBreakdown {
    let distance = loss_distance(p, problem.distance());
    let reuse = loss_reuse(p, config.reuse_mode);
    let cosine = loss_cosine(p, problem.similarity());
    LossBreakdown {
        distance,
        reuse,
        cosine,
        total: config.lambda_distance * distance + config.lambda_reuse * reuse + config.lambda_cosine * cosine,
    }
}

/// Per-slot softmax over the unmasked generated items; masked entries are
/// exactly 0 and their logits are never read.
pub fn softmax(problem: &AssemblyProblem, logits: &Array3<f64>) -> Array3<f64> {
    let mut p = Array3::<f64>::zeros(logits.dim());
    for a in 0..problem.copies() {
        for j in 0..problem.n_lab() {
            let cand = problem.candidates(j);
            let max = cand.iter().map(|&i| logits[[a, j, i]]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &i in cand {
                let e = (logits[[a, j, i]] - max).exp();
                p[[a, j, i]] = e;
                z += e;
            }
            for &i in cand {
                p[[a, j, i]] /= z;
            }
        }
    }
    p
}

/// `dloss/dP` for the weighted objective.
fn grad_wrt_probs(problem: &AssemblyProblem, p: &Array3<f64>, config: &AssemblyConfig) -> Array3<f64> {
    let (d, m, n) = p.dim();
    let dist = problem.distance();
    let mut g = Array3::<f64>::zeros((d, m, n));
    let (total, groups) = reuse_groups(p, config.reuse_mode);
    let cq = selection_mass(p).dot(problem.similarity());
    for a in 0..d {
        for j in 0..m {
            let group = match config.reuse_mode {
                ReuseMode::AllDistinctSlots => groups.row(a * m + j),
                ReuseMode::PaperLiteral => groups.row(j),
            };
            for i in 0..n {
                g[[a, j, i]] = config.lambda_distance * dist[[i, j]]
                    + config.lambda_reuse * 2.0 * (total[i] - group[i])
                    + config.lambda_cosine * 2.0 * cq[[a, i]];
            }
        }
    }
    g
}

/// Backpropagates `dloss/dP` through each slot's softmax:
/// `dloss/dL_k = P_k (g_k - sum_l P_l g_l)` over unmasked `k`.
fn softmax_backward(problem: &AssemblyProblem, p: &Array3<f64>, gp: &Array3<f64>) -> Array3<f64> {
    let mut gl = Array3::<f64>::zeros(p.dim());
    for a in 0..problem.copies() {
        for j in 0..problem.n_lab() {
            let cand = problem.candidates(j);
            let mean: f64 = cand.iter().map(|&i| p[[a, j, i]] * gp[[a, j, i]]).sum();
            for &i in cand {
                gl[[a, j, i]] = p[[a, j, i]] * (gp[[a, j, i]] - mean);
            }
        }
    }
    gl
}

/// Total weighted loss at `softmax(logits)` and its exact gradient with
/// respect to the logits (zero on masked entries).
pub fn total_loss_and_gradient(
    logits: &Array3<f64>,
    problem: &AssemblyProblem,
    config: &AssemblyConfig,
) -> Result<(f64, Array3<f64>)> {
    let p = softmax(problem, logits);
    let loss = loss_breakdown(problem, &p, config).total;
    if !loss.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    let gp = grad_wrt_probs(problem, &p, config);
    Ok((loss, softmax_backward(problem, &p, &gp)))
}
