//! Parallel-form assembly as a relaxed matching problem.
//!
//! Every slot `j` of every copy `a` of the lab form holds a probability
//! vector over generated items, `P[a, j, ·] = softmax(L[a, j, ·])` restricted
//! to items whose truth value matches the slot. The objective is
//!
//! ```text
//! loss = λ_d · Σ P[a,j,i] D[i,j]                       (parameter distance)
//!      + λ_r · Σ_{slot pairs} <P[slot], P[slot']>        (item reuse)
//!      + λ_c · Σ_a Σ_{i≠k} Q[a,i] C[i,k] Q[a,k]          (semantic overlap)
//! ```
//!
//! with `Q[a, i] = Σ_j P[a, j, i]`. Logits are optimized with Adam and the
//! relaxed solution is discretized greedily.

pub mod extract;
pub mod loss;
pub mod optimize;
pub mod problem;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use extract::{brute_force_assign, discrete_loss, extract_assignment, extract_forms};
pub use loss::{loss_breakdown, loss_cosine, loss_distance, loss_reuse, softmax, total_loss_and_gradient, LossBreakdown};
pub use optimize::{init_logits, optimize, optimize_observed, OptimizeResult};
pub use problem::{build_distance_matrix, build_similarity_matrix, AssemblyProblem, Feature, DEFAULT_FEATURES};

/// Which slot pairs the reuse term penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReuseMode {
    /// Only pairs with different lab-slot index; the same slot of two copies
    /// may share an item.
    PaperLiteral,
    /// Every pair of distinct (copy, slot) positions.
    #[default]
    AllDistinctSlots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub lambda_distance: f64,
    pub lambda_reuse: f64,
    pub lambda_cosine: f64,
    pub cosine_threshold: f64,
    pub reuse_mode: ReuseMode,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            learning_rate: 0.1,
            steps: 2000,
            lambda_distance: 1.0,
            lambda_reuse: 1.0,
            lambda_cosine: 1.0,
            cosine_threshold: 0.5,
            reuse_mode: ReuseMode::default(),
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl AssemblyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: format!("assembly.{key}"),
                message: message.into(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if self.steps == 0 {
            return bad("steps", "must be at least 1");
        }
        for (key, v) in [
            ("lambda_distance", self.lambda_distance),
            ("lambda_reuse", self.lambda_reuse),
            ("lambda_cosine", self.lambda_cosine),
            ("init_scale", self.init_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, "must be finite and non-negative");
            }
        }
        if !(0.0..=1.0).contains(&self.cosine_threshold) {
            return bad("cosine_threshold", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Logits `L[a, j, i]` (masked entries `-inf`) and `P = softmax(L)` per slot.
#[derive(Debug, Clone)]
pub struct AssignmentTensor {
    pub logits: Array3<f64>,
    pub probs: Array3<f64>,
}

/// `assignment[a][j]` is the generated-item index placed in slot `j` of
/// copy `a`.
pub type Assignment = Vec<Vec<usize>>;

impl AssignmentTensor {
    /// Most probable generated item of every slot, ties to the lower index.
    pub fn argmax(&self) -> Assignment {
        self.probs
            .outer_iter()
            .map(|copy| {
                copy.outer_iter()
                    .map(|row| {
                        let mut best = 0;
                        for (i, &p) in row.iter().enumerate() {
                            if p > row[best] {
                                best = i;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect()
    }

    /// Shannon entropy (nats) of every slot's distribution.
    pub fn slot_entropy(&self) -> Vec<Vec<f64>> {
        self.probs
            .outer_iter()
            .map(|copy| {
                copy.outer_iter()
                    .map(|row| row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelForms {
    /// One list of generated-item ids per copy, in lab-slot order.
    pub forms: Vec<Vec<String>>,
}

impl ParallelForms {
    pub fn from_assignment(problem: &AssemblyProblem, assignment: &Assignment) -> Self {
        ParallelForms {
            forms: assignment
                .iter()
                .map(|form| form.iter().map(|&i| problem.gen_ids()[i].clone()).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReuseOverlap {
    pub item_id: String,
    /// Copies containing the item, ascending.
    pub copies: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `[copy][slot]` entropy of the final relaxed distribution.
    pub slot_entropy: Vec<Vec<f64>>,
    /// Generated items placed in more than one copy.
    pub reuse_overlaps: Vec<ReuseOverlap>,
    pub relaxed_loss: LossBreakdown,
    pub discrete_loss: LossBreakdown,
    /// Lab item id for each slot, so forms can be read against the lab form.
    pub lab_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub config: AssemblyConfig,
    pub loss_trace: Vec<f64>,
    pub forms: Vec<Vec<String>>,
    pub diagnostics: Diagnostics,
}

/// Optimizes, extracts forms and collects diagnostics.
pub fn assemble(problem: &AssemblyProblem, config: &AssemblyConfig) -> Result<AssemblyReport> {
    let result = optimize(problem, config)?;
    let assignment = extract_assignment(&result.tensor.probs, problem, config.reuse_mode)?;
    let mut overlaps: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (a, form) in assignment.iter().enumerate() {
        for &i in form {
            overlaps.entry(i).or_default().push(a);
        }
    }
    let reuse_overlaps = overlaps
        .into_iter()
        .filter(|(_, copies)| copies.len() > 1)
        .map(|(i, copies)| ReuseOverlap {
            item_id: problem.gen_ids()[i].clone(),
            copies,
        })
        .collect();
    let diagnostics = Diagnostics {
        slot_entropy: result.tensor.slot_entropy(),
        reuse_overlaps,
        relaxed_loss: loss_breakdown(problem, &result.tensor.probs, config),
        discrete_loss: discrete_loss(problem, &assignment, config),
        lab_ids: problem.lab_ids().to_vec(),
    };
    Ok(AssemblyReport {
        config: config.clone(),
        loss_trace: result.loss_trace,
        forms: ParallelForms::from_assignment(problem, &assignment).forms,
        diagnostics,
    })
}

/// Random instances for tests and benchmarks: median RTs drawn uniformly,
/// random 3-dimensional embeddings, gen truth values alternating and lab
/// truth values random.
pub mod test_support {
    use rand::Rng;

    use super::problem::{build_distance_matrix, build_similarity_matrix, DEFAULT_FEATURES};
    use super::AssemblyProblem;
    use crate::calibration::ItemCalibration;
    use crate::seed;

    fn cal(rt: f64) -> ItemCalibration {
        ItemCalibration {
            item_id: String::new(),
            p_true: 1.0,
            accuracy: 1.0,
            mean_rt_ms: rt,
            median_rt_ms: rt,
            std_rt_ms: 0.0,
            n_draws: 2,
            fk_grade: 0.0,
        }
    }

    /// `n >= 2` so both truth classes have a candidate.
    pub fn random_problem(d: usize, m: usize, n: usize, seed: u64) -> AssemblyProblem {
        assert!(n >= 2);
        let mut rng = seed::rng(seed);
        let lab: Vec<ItemCalibration> = (0..m).map(|_| cal(rng.random_range(1000.0..5000.0))).collect();
        let gen: Vec<ItemCalibration> = (0..n).map(|_| cal(rng.random_range(1000.0..5000.0))).collect();
        let dist = build_distance_matrix(&lab.iter().collect::<Vec<_>>(), &gen.iter().collect::<Vec<_>>(), DEFAULT_FEATURES)
            .expect("continuous draws differ");
        let emb: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = emb.iter().map(|e| e.as_slice()).collect();
        let sim = build_similarity_matrix(&refs, 0.5).expect("non-zero embeddings");
        AssemblyProblem::new(
            d,
            (0..m).map(|j| (format!("l{j}"), rng.random::<bool>())).collect(),
            (0..n).map(|i| (format!("g{i}"), i % 2 == 0)).collect(),
            dist,
            sim,
        )
        .expect("valid random problem")
    }
}
