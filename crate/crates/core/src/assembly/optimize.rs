use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::loss::{softmax, total_loss_and_gradient};
use super::{AssemblyConfig, AssemblyProblem, AssignmentTensor};
use crate::error::{Error, Result};
use crate::seed;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Standard deviation of the tie-breaking jitter added at initialization.
pub const INIT_JITTER: f64 = 1e-3;

/// `L[a, j, i] = -init_scale * D[i, j] + N(0, INIT_JITTER)`; masked entries
/// are `-inf`.
pub fn init_logits(problem: &AssemblyProblem, init_scale: f64, rng: &mut impl Rng) -> Array3<f64> {
    let (d, m, n) = (problem.copies(), problem.n_lab(), problem.n_gen());
    let jitter = Normal::new(0.0, INIT_JITTER).expect("valid sd");
    let dist = problem.distance();
    let mut l = Array3::from_elem((d, m, n), f64::NEG_INFINITY);
    for a in 0..d {
        for j in 0..m {
            for &i in problem.candidates(j) {
                l[[a, j, i]] = -init_scale * dist[[i, j]] + jitter.sample(rng);
            }
        }
    }
    l
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub tensor: AssignmentTensor,
    /// Loss at initialization followed by the loss after each step.
    pub loss_trace: Vec<f64>,
}

/// Adam on the unmasked logits for `config.steps` iterations.
pub fn optimize(problem: &AssemblyProblem, config: &AssemblyConfig) -> Result<OptimizeResult> {
    optimize_observed(problem, config, |_, _| {})
}

/// [`optimize`] that hands the probability tensor to `observer` after every
/// step.
pub fn optimize_observed(
    problem: &AssemblyProblem,
    config: &AssemblyConfig,
    mut observer: impl FnMut(usize, &Array3<f64>),
) -> Result<OptimizeResult> {
    config.validate()?;
    let mut rng = seed::rng(config.seed);
    let mut logits = init_logits(problem, config.init_scale, &mut rng);
    let mut m1 = Array3::<f64>::zeros(logits.dim());
    let mut m2 = Array3::<f64>::zeros(logits.dim());
    let mut trace = Vec::with_capacity(config.steps + 1);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for step in 0..config.steps {
        let (loss, grad) = total_loss_and_gradient(&logits, problem, config).map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { step },
            other => other,
        })?;
        trace.push(loss);
        b1t *= ADAM_BETA1;
        b2t *= ADAM_BETA2;
        for j in 0..problem.n_lab() {
            for a in 0..problem.copies() {
                for &i in problem.candidates(j) {
                    let g = grad[[a, j, i]];
                    let idx = [a, j, i];
                    m1[idx] = ADAM_BETA1 * m1[idx] + (1.0 - ADAM_BETA1) * g;
                    m2[idx] = ADAM_BETA2 * m2[idx] + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = m1[idx] / (1.0 - b1t);
                    let vhat = m2[idx] / (1.0 - b2t);
                    logits[idx] -= config.learning_rate * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
        observer(step, &softmax(problem, &logits));
    }
    let (loss, _) = total_loss_and_gradient(&logits, problem, config).map_err(|e| match e {
        Error::Divergence { .. } => Error::Divergence { step: config.steps },
        other => other,
    })?;
    trace.push(loss);
    let probs = softmax(problem, &logits);
    Ok(OptimizeResult {
        tensor: AssignmentTensor { logits, probs },
        loss_trace: trace,
    })
}
