use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::calibration::dedup::cosine;
use crate::calibration::ItemCalibration;
use crate::error::{Error, Result};
use crate::item_bank::Item;

/// Calibrated parameters the distance matrix can match on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    MedianRt,
    Accuracy,
}

impl Feature {
    fn value(self, c: &ItemCalibration) -> f64 {
        match self {
            Feature::MedianRt => c.median_rt_ms,
            Feature::Accuracy => c.accuracy,
        }
    }
}

pub const DEFAULT_FEATURES: &[Feature] = &[Feature::MedianRt];

/// `D[i, j]`: Euclidean distance between generated item `i` and lab item
/// `j` after z-scoring each feature over the pooled lab and generated values
/// (population standard deviation).
pub fn build_distance_matrix(
    lab: &[&ItemCalibration],
    gen: &[&ItemCalibration],
    features: &[Feature],
) -> Result<Array2<f64>> {
    if features.is_empty() {
        return Err(Error::invalid("at least one matching feature is required"));
    }
    let (n, m) = (gen.len(), lab.len());
    let mut d2 = Array2::<f64>::zeros((n, m));
    for &f in features {
        let pooled: Vec<f64> = lab.iter().chain(gen).map(|c| f.value(c)).collect();
        let k = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / k;
        let sd = (pooled.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k).sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::Degenerate(format!("feature {f:?} has zero variance")));
        }
        let z = |c: &ItemCalibration| (f.value(c) - mean) / sd;
        for (i, g) in gen.iter().enumerate() {
            for (j, l) in lab.iter().enumerate() {
                let diff = z(g) - z(l);
                d2[[i, j]] += diff * diff;
            }
        }
    }
    Ok(d2.mapv(f64::sqrt))
}

/// `C[i, k] = |cos(e_i, e_k)|` where that reaches `threshold`, else 0; the
/// diagonal is 0.
pub fn build_similarity_matrix(embeddings: &[&[f64]], threshold: f64) -> Result<Array2<f64>> {
    let n = embeddings.len();
    for (i, e) in embeddings.iter().enumerate() {
        if !e.iter().any(|x| *x != 0.0) {
            return Err(Error::invalid(format!("embedding {i} has zero norm")));
        }
        if e.len() != embeddings[0].len() {
            return Err(Error::invalid(format!("embedding {i} has a different length")));
        }
    }
    let mut c = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for k in i + 1..n {
            let s = cosine(embeddings[i], embeddings[k]).abs();
            if s >= threshold {
                c[[i, k]] = s;
                c[[k, i]] = s;
            }
        }
    }
    Ok(c)
}

/// One matching instance: `d` copies of an `m`-slot lab form to be filled
/// from `n` generated items.
#[derive(Debug, Clone)]
pub struct AssemblyProblem {
    d: usize,
    lab_ids: Vec<String>,
    lab_truth: Vec<bool>,
    gen_ids: Vec<String>,
    gen_truth: Vec<bool>,
    dist: Array2<f64>,
    sim: Array2<f64>,
    /// Unmasked generated indices for each lab slot, ascending.
    candidates: Vec<Vec<usize>>,
}

impl AssemblyProblem {
    /// `lab` and `gen` are `(id, truth)` pairs; `dist` is `n x m`, `sim` is
    /// `n x n`.
    pub fn new(
        d: usize,
        lab: Vec<(String, bool)>,
        gen: Vec<(String, bool)>,
        dist: Array2<f64>,
        sim: Array2<f64>,
    ) -> Result<Self> {
        let (m, n) = (lab.len(), gen.len());
        if d == 0 || m == 0 || n == 0 {
            return Err(Error::invalid("copies, lab items and generated items must all be non-empty"));
        }
        if dist.dim() != (n, m) || sim.dim() != (n, n) {
            return Err(Error::invalid(format!(
                "matrix shapes {:?} / {:?} do not match n={n}, m={m}",
                dist.dim(),
                sim.dim()
            )));
        }
        if dist.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("distances must be finite and non-negative"));
        }
        for i in 0..n {
            if sim[[i, i]] != 0.0 {
                return Err(Error::invalid("similarity diagonal must be zero"));
            }
            for k in 0..n {
                if sim[[i, k]] != sim[[k, i]] || !(sim[[i, k]].is_finite() && sim[[i, k]] >= 0.0) {
                    return Err(Error::invalid("similarity matrix must be symmetric and non-negative"));
                }
            }
        }
        let (lab_ids, lab_truth): (Vec<_>, Vec<_>) = lab.into_iter().unzip();
        let (gen_ids, gen_truth): (Vec<_>, Vec<_>) = gen.into_iter().unzip();
        let candidates: Vec<Vec<usize>> = lab_truth
            .iter()
            .map(|&t| (0..n).filter(|&i| gen_truth[i] == t).collect())
            .collect();
        let empty: Vec<(usize, usize)> = candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_empty())
            .flat_map(|(j, _)| (0..d).map(move |a| (a, j)))
            .collect();
        if !empty.is_empty() {
            return Err(Error::Starvation { slots: empty });
        }
        Ok(AssemblyProblem {
            d,
            lab_ids,
            lab_truth,
            gen_ids,
            gen_truth,
            dist,
            sim,
            candidates,
        })
    }

    /// Builds the problem from calibrated items: distances on `features`,
    /// similarities from the generated items' embeddings.
    pub fn from_calibrations(
        d: usize,
        lab: &[(&Item, &ItemCalibration)],
        gen: &[(&Item, &ItemCalibration)],
        features: &[Feature],
        cosine_threshold: f64,
    ) -> Result<Self> {
        let lab_cals: Vec<&ItemCalibration> = lab.iter().map(|p| p.1).collect();
        let gen_cals: Vec<&ItemCalibration> = gen.iter().map(|p| p.1).collect();
        let dist = build_distance_matrix(&lab_cals, &gen_cals, features)?;
        let gen_items: Vec<&Item> = gen.iter().map(|p| p.0).collect();
        let embeddings = crate::calibration::dedup::embeddings(&gen_items)?;
        let sim = build_similarity_matrix(&embeddings, cosine_threshold)?;
        AssemblyProblem::new(
            d,
            lab.iter().map(|p| (p.0.id.clone(), p.0.truth)).collect(),
            gen.iter().map(|p| (p.0.id.clone(), p.0.truth)).collect(),
            dist,
            sim,
        )
    }

    pub fn copies(&self) -> usize {
        self.d
    }
    pub fn n_lab(&self) -> usize {
        self.lab_ids.len()
    }
    pub fn n_gen(&self) -> usize {
        self.gen_ids.len()
    }
    pub fn lab_ids(&self) -> &[String] {
        &self.lab_ids
    }
    pub fn gen_ids(&self) -> &[String] {
        &self.gen_ids
    }
    pub fn lab_truth(&self) -> &[bool] {
        &self.lab_truth
    }
    pub fn gen_truth(&self) -> &[bool] {
        &self.gen_truth
    }
    /// `n x m` distance matrix.
    pub fn distance(&self) -> &Array2<f64> {
        &self.dist
    }
    /// `n x n` similarity matrix.
    pub fn similarity(&self) -> &Array2<f64> {
        &self.sim
    }
    /// Generated items whose truth value matches lab slot `j`.
    pub fn candidates(&self, j: usize) -> &[usize] {
        &self.candidates[j]
    }
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.gen_truth[i] == self.lab_truth[j]
    }

    /// The same problem with a constant added to every distance.
    pub fn with_shifted_distances(&self, shift: f64) -> Result<Self> {
        let mut p = self.clone();
        p.dist.mapv_inplace(|x| x + shift);
        if p.dist.iter().any(|x| *x < 0.0) {
            return Err(Error::invalid("shift would make distances negative"));
        }
        Ok(p)
    }
}
