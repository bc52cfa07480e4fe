//! Scoring, agreement statistics between forms, and 2PL IRT.

pub mod irt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::item_bank::ResponseRecord;
use crate::stats;

pub use irt::{fit_2pl, gauss_hermite_normal, item_information, IrtItem, IrtModel, IrtOptions, ResponseMatrix};

/// Correct answers minus incorrect answers.
pub fn total_score<'a>(records: impl IntoIterator<Item = &'a ResponseRecord>) -> i64 {
    records.into_iter().map(|r| if r.correct { 1 } else { -1 }).sum()
}

/// Total score per participant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSheet {
    pub scores: BTreeMap<String, i64>,
}

impl ScoreSheet {
    /// Groups `records` by participant and scores each group.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ResponseRecord>) -> Self {
        let mut by_participant: BTreeMap<String, Vec<&ResponseRecord>> = BTreeMap::new();
        for r in records {
            by_participant.entry(r.participant_id.clone()).or_default().push(r);
        }
        ScoreSheet {
            scores: by_participant
                .into_iter()
                .map(|(p, rs)| (p, total_score(rs)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.scores.values().map(|&s| s as f64).collect();
        stats::mean(&v)
    }
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::InsufficientData(format!("need at least {min} pairs, got {}", x.len())));
    }
    Ok(())
}

/// Centered sums `(Sxx, Syy, Sxy)`.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mx = stats::mean(x).unwrap_or(0.0);
    let my = stats::mean(y).unwrap_or(0.0);
    x.iter().zip(y).fold((0.0, 0.0, 0.0), |(sxx, syy, sxy), (a, b)| {
        let (dx, dy) = (a - mx, b - my);
        (sxx + dx * dx, syy + dy * dy, sxy + dx * dy)
    })
}

/// Sample Pearson correlation, clamped to [-1, 1].
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (sxx, syy, sxy) = moments(x, y);
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::Degenerate("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual, 1)?;
    let mse = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Ordinary least squares of `y` on `x`: `(slope, intercept)`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, y, 2)?;
    let (sxx, _, sxy) = moments(x, y);
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("regression on a constant predictor".into()));
    }
    let slope = sxy / sxx;
    let intercept = stats::mean(y).unwrap() - slope * stats::mean(x).unwrap();
    Ok((slope, intercept))
}

const Z_975: f64 = 1.959_963_984_540_054;

/// 95% Fisher-z interval for a correlation from `n` pairs; needs `n > 3`.
pub fn fisher_z_ci95(r: f64, n: usize) -> Option<(f64, f64)> {
    if n <= 3 {
        return None;
    }
    let z = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh();
    let half = Z_975 / ((n - 3) as f64).sqrt();
    Some(((z - half).tanh(), (z + half).tanh()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Participants present in both sheets.
    pub n: usize,
    pub r: f64,
    pub r2: f64,
    /// Fisher-z 95% interval on `r`, when `n > 3`.
    pub r_ci95_fisher_z: Option<(f64, f64)>,
    pub rmse: f64,
    /// OLS of form B scores on form A scores.
    pub slope: f64,
    pub intercept: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Mean of `B - A`.
    pub mean_diff: f64,
}

/// Agreement between two forms' scores, joined on participant id.
pub fn compare_forms(a: &ScoreSheet, b: &ScoreSheet) -> Result<AgreementReport> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .scores
        .iter()
        .filter_map(|(p, &sa)| b.scores.get(p).map(|&sb| (sa as f64, sb as f64)))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} participant(s) appear on both forms; at least 2 are needed",
            xs.len()
        )));
    }
    let r = pearson_r(&xs, &ys)?;
    let (slope, intercept) = ols(&xs, &ys)?;
    let mean_a = stats::mean(&xs).unwrap();
    let mean_b = stats::mean(&ys).unwrap();
    let diffs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - x).collect();
    Ok(AgreementReport {
        n: xs.len(),
        r,
        r2: r * r,
        r_ci95_fisher_z: fisher_z_ci95(r, xs.len()),
        rmse: rmse(&ys, &xs)?,
        slope,
        intercept,
        mean_a,
        mean_b,
        mean_diff: stats::mean(&diffs).unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(p: &str, item: &str, correct: bool) -> ResponseRecord {
        ResponseRecord {
            participant_id: p.into(),
            item_id: item.into(),
            response: correct,
            correct,
            rt_ms: 1000.0,
        }
    }

    #[test]
    fn scoring_rule() {
        let ten: Vec<_> = (0..10).map(|k| rec("p", &format!("i{k}"), true)).collect();
        assert_eq!(total_score(&ten), 10);
        let mixed: Vec<_> = (0..10).map(|k| rec("p", &format!("i{k}"), k < 7)).collect();
        assert_eq!(total_score(&mixed), 4);
        assert_eq!(total_score(&[]), 0);
    }

    #[test]
    fn score_sheet_groups() {
        let rs = [rec("a", "1", true), rec("b", "1", false), rec("a", "2", true), rec("b", "2", false)];
        let s = ScoreSheet::from_records(&rs);
        assert_eq!(s.scores["a"], 2);
        assert_eq!(s.scores["b"], -2);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 3.0).collect();
        assert!((pearson_r(&x, &y).unwrap() + 1.0).abs() < 1e-15);
        // Sxy = 4, Sxx = Syy = 5
        assert!((pearson_r(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(pearson_r(&x, &[1.0; 4]), Err(Error::Degenerate(_))));
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.5);
        assert!(rmse(&[0.5], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn fisher_interval_brackets_r() {
        let (lo, hi) = fisher_z_ci95(0.93, 40).unwrap();
        assert!(lo < 0.93 && 0.93 < hi && hi < 1.0);
        // z = atanh(0.5) = 0.549306, half-width 1.959964 / sqrt(97)
        let (lo, hi) = fisher_z_ci95(0.5, 100).unwrap();
        assert!((lo - 0.3366).abs() < 1e-4 && (hi - 0.6341).abs() < 1e-4, "{lo} {hi}");
        assert_eq!(fisher_z_ci95(0.5, 3), None);
    }

    fn sheet(pairs: &[(&str, i64)]) -> ScoreSheet {
        ScoreSheet {
            scores: pairs.iter().map(|(p, s)| (p.to_string(), *s)).collect(),
        }
    }

    #[test]
    fn compare_identity_and_shift() {
        let a = sheet(&[("p1", 40), ("p2", 55), ("p3", 61), ("p4", 20)]);
        let r = compare_forms(&a, &a).unwrap();
        assert_eq!((r.r, r.r2, r.slope, r.intercept, r.rmse, r.mean_diff), (1.0, 1.0, 1.0, 0.0, 0.0, 0.0));
        let b = ScoreSheet {
            scores: a.scores.iter().map(|(p, s)| (p.clone(), s + 5)).collect(),
        };
        let r = compare_forms(&a, &b).unwrap();
        assert!((r.r - 1.0).abs() < 1e-15);
        assert!((r.slope - 1.0).abs() < 1e-12);
        assert!((r.intercept - 5.0).abs() < 1e-9);
        assert_eq!(r.mean_diff, 5.0);
    }

    #[test]
    fn compare_needs_overlap() {
        let a = sheet(&[("p1", 1), ("p2", 2)]);
        let b = sheet(&[("q1", 1), ("q2", 2)]);
        assert!(matches!(compare_forms(&a, &b), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(
            xy in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60),
            s in 0.01f64..50.0,
            t in -100.0f64..100.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            let r = pearson_r(&x, &y);
            prop_assume!(r.is_ok());
            let r = r.unwrap();
            let xt: Vec<f64> = x.iter().map(|v| s * v + t).collect();
            prop_assert!((pearson_r(&xt, &y).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }
}
