use std::collections::BTreeMap;

use ndarray::Array3;

use super::loss::LossBreakdown;
use super::{AssemblyConfig, AssemblyProblem, Assignment, ParallelForms, ReuseMode};
use crate::error::{Error, Result};

/// Largest number of raw assignments `n^(d*m)` brute force will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Greedy discretization. Slots are visited in descending order of their
/// peak probability (ties by copy, then slot); each takes its most probable
/// admissible item, ties broken by generated-item id. Items never repeat
/// within a copy; under `AllDistinctSlots` they never repeat across copies
/// either.
pub fn extract_assignment(probs: &Array3<f64>, problem: &AssemblyProblem, mode: ReuseMode) -> Result<Assignment> {
    let (d, m, n) = (problem.copies(), problem.n_lab(), problem.n_gen());
    let mut order: Vec<(f64, usize, usize)> = Vec::with_capacity(d * m);
    for a in 0..d {
        for j in 0..m {
            let peak = problem
                .candidates(j)
                .iter()
                .map(|&i| probs[[a, j, i]])
                .fold(f64::NEG_INFINITY, f64::max);
            order.push((peak, a, j));
        }
    }
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let ids = problem.gen_ids();
    let mut used_in_copy = vec![vec![false; n]; d];
    let mut used_anywhere = vec![false; n];
    let mut out = vec![vec![usize::MAX; m]; d];
    let mut starved = Vec::new();
    for (_, a, j) in order {
        let pick = problem
            .candidates(j)
            .iter()
            .copied()
            .filter(|&i| !used_in_copy[a][i] && !(mode == ReuseMode::AllDistinctSlots && used_anywhere[i]))
            .min_by(|&x, &y| {
                probs[[a, j, y]]
                    .total_cmp(&probs[[a, j, x]])
                    .then_with(|| ids[x].cmp(&ids[y]))
                    .then(x.cmp(&y))
            });
        match pick {
            Some(i) => {
                out[a][j] = i;
                used_in_copy[a][i] = true;
                used_anywhere[i] = true;
            }
            None => starved.push((a, j)),
        }
    }
    if !starved.is_empty() {
        starved.sort_unstable();
        return Err(Error::Starvation { slots: starved });
    }
    Ok(out)
}

pub fn extract_forms(probs: &Array3<f64>, problem: &AssemblyProblem, mode: ReuseMode) -> Result<ParallelForms> {
    let assignment = extract_assignment(probs, problem, mode)?;
    Ok(ParallelForms::from_assignment(problem, &assignment))
}

/// The objective evaluated on a one-hot assignment, by counting.
pub fn discrete_loss(problem: &AssemblyProblem, assignment: &Assignment, config: &AssemblyConfig) -> LossBreakdown {
    let dist = problem.distance();
    let sim = problem.similarity();
    let distance: f64 = assignment
        .iter()
        .flat_map(|form| form.iter().enumerate().map(|(j, &i)| dist[[i, j]]))
        .sum();

    // ordered pairs of slots sharing an item
    let mut total: BTreeMap<usize, usize> = BTreeMap::new();
    let mut per_slot: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for form in assignment {
        for (j, &i) in form.iter().enumerate() {
            *total.entry(i).or_default() += 1;
            *per_slot.entry((j, i)).or_default() += 1;
        }
    }
    let pairs = |c: usize| (c * c.saturating_sub(1)) as f64;
    let all: f64 = total.values().map(|&c| pairs(c)).sum();
    let reuse = match config.reuse_mode {
        ReuseMode::AllDistinctSlots => all,
        ReuseMode::PaperLiteral => all - per_slot.values().map(|&c| pairs(c)).sum::<f64>(),
    };

    let mut cosine = 0.0;
    for form in assignment {
        for (x, &i) in form.iter().enumerate() {
            for (y, &k) in form.iter().enumerate() {
                if x != y {
                    cosine += sim[[i, k]];
                }
            }
        }
    }
    LossBreakdown {
        distance,
        reuse,
        cosine,
        total: config.lambda_distance * distance + config.lambda_reuse * reuse + config.lambda_cosine * cosine,
    }
}

/// Exhaustive search over every assignment `extract_assignment` could
/// produce under `config.reuse_mode`. Among equal losses the
/// lexicographically smallest assignment (copy-major, slot-minor, by item
/// index) wins.
pub fn brute_force_assign(problem: &AssemblyProblem, config: &AssemblyConfig) -> Result<(Assignment, f64)> {
    let (d, m, n) = (problem.copies(), problem.n_lab(), problem.n_gen());
    let raw = (n as f64).powi((d * m) as i32);
    if raw > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!("{n}^({d}*{m}) assignments exceed {BRUTE_FORCE_LIMIT}")));
    }

    struct Search<'a> {
        problem: &'a AssemblyProblem,
        config: &'a AssemblyConfig,
        current: Assignment,
        used_in_copy: Vec<Vec<bool>>,
        uses: Vec<usize>,
        best: Option<(Assignment, f64)>,
    }

    impl Search<'_> {
        fn visit(&mut self, slot: usize) {
            let m = self.problem.n_lab();
            if slot == self.problem.copies() * m {
                let loss = discrete_loss(self.problem, &self.current, self.config).total;
                let better = match &self.best {
                    None => true,
                    Some((_, b)) => loss < b - 1e-12 * b.abs().max(1.0),
                };
                if better {
                    self.best = Some((self.current.clone(), loss));
                }
                return;
            }
            let (a, j) = (slot / m, slot % m);
            for &i in self.problem.candidates(j) {
                if self.used_in_copy[a][i]
                    || (self.config.reuse_mode == ReuseMode::AllDistinctSlots && self.uses[i] > 0)
                {
                    continue;
                }
                self.current[a][j] = i;
                self.used_in_copy[a][i] = true;
                self.uses[i] += 1;
                self.visit(slot + 1);
                self.used_in_copy[a][i] = false;
                self.uses[i] -= 1;
            }
        }
    }

    let mut search = Search {
        problem,
        config,
        current: vec![vec![0; m]; d],
        used_in_copy: vec![vec![false; n]; d],
        uses: vec![0; n],
        best: None,
    };
    search.visit(0);
    search
        .best
        .ok_or_else(|| Error::InsufficientData("no feasible assignment exists".into()))
}
