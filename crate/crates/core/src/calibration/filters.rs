use super::{DropReason, FilterReport, ItemCalibration};
use crate::error::{Error, Result};
use crate::item_bank::ItemBank;
use crate::stats;

/// Items must be answered correctly strictly more often than this.
pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 0.85;

/// Splits calibrations at the training-data median accuracy. Items at or
/// above the median are unambiguous.
pub fn ambiguity_split(
    cals: &[ItemCalibration],
    training_median_accuracy: f64,
) -> (Vec<ItemCalibration>, Vec<ItemCalibration>) {
    cals.iter()
        .cloned()
        .partition(|c| c.accuracy >= training_median_accuracy)
}

/// [`ambiguity_split`] expressed as a filter report.
pub fn ambiguity_filter(cals: &[ItemCalibration], training_median_accuracy: f64) -> FilterReport {
    let (clear, ambiguous) = ambiguity_split(cals, training_median_accuracy);
    FilterReport {
        kept: clear.into_iter().map(|c| c.item_id).collect(),
        dropped: ambiguous.into_iter().map(|c| (c.item_id, DropReason::Ambiguous)).collect(),
    }
}

/// Keeps items whose accuracy is strictly greater than `threshold`.
pub fn accuracy_filter(cals: &[ItemCalibration], threshold: f64) -> FilterReport {
    let mut report = FilterReport::default();
    for c in cals {
        if c.accuracy > threshold {
            report.kept.push(c.item_id.clone());
        } else {
            report.dropped.push((c.item_id.clone(), DropReason::LowAccuracy));
        }
    }
    report
}

/// Least-squares line through the origin and its residual spread.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginFit {
    /// Milliseconds per word.
    pub slope: f64,
    pub residuals: Vec<f64>,
    /// Sample standard deviation of the residuals.
    pub residual_sd: f64,
}

pub fn fit_through_origin(points: &[(f64, f64)]) -> Result<OriginFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 items for the response-time band, got {}",
            points.len()
        )));
    }
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let slope = sxy / sxx;
    let residuals: Vec<f64> = points.iter().map(|(x, y)| y - slope * x).collect();
    let residual_sd = stats::sample_std(&residuals).expect("n >= 3");
    Ok(OriginFit {
        slope,
        residuals,
        residual_sd,
    })
}

/// Keeps items whose median response time lies within one residual
/// standard deviation of the per-word response-time line (no intercept).
pub fn rt_band_filter(cals: &[ItemCalibration], items: &ItemBank) -> Result<FilterReport> {
    let points = cals
        .iter()
        .map(|c| {
            let item = items.item(&c.item_id).ok_or_else(|| Error::UnknownItem {
                item_id: c.item_id.clone(),
                line: 0,
            })?;
            Ok((item.word_count as f64, c.median_rt_ms))
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_through_origin(&points)?;
    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let band = fit.residual_sd * (1.0 + 1e-12) + scale * 1e-12;
    let mut report = FilterReport::default();
    for (c, r) in cals.iter().zip(&fit.residuals) {
        if r.abs() <= band {
            report.kept.push(c.item_id.clone());
        } else {
            report.dropped.push((c.item_id.clone(), DropReason::RtBand));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::item_bank::{Item, Source};
    use proptest::prelude::*;

    fn cal(id: &str, accuracy: f64, median_rt_ms: f64) -> ItemCalibration {
        ItemCalibration {
            item_id: id.into(),
            p_true: accuracy,
            accuracy,
            mean_rt_ms: median_rt_ms,
            median_rt_ms,
            std_rt_ms: 0.0,
            n_draws: 100,
            fk_grade: 0.0,
        }
    }

    fn bank_with_lengths(lengths: &[(&str, usize)]) -> ItemBank {
        ItemBank::from_items(lengths.iter().map(|(id, n)| {
            let text = vec!["word"; *n].join(" ");
            Item::new(*id, text, true, Source::Generated).unwrap()
        }))
        .unwrap()
    }

    #[test]
    fn ambiguity_boundaries() {
        let cals = [cal("hi", 0.90, 1.0), cal("lo", 0.60, 1.0), cal("eq", 0.85, 1.0)];
        let (clear, amb) = ambiguity_split(&cals, 0.85);
        let ids = |v: &[ItemCalibration]| v.iter().map(|c| c.item_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&clear), vec!["hi", "eq"]);
        assert_eq!(ids(&amb), vec!["lo"]);
        let report = ambiguity_filter(&cals, 0.85);
        assert_eq!(report.dropped, vec![("lo".to_string(), DropReason::Ambiguous)]);
    }

    #[test]
    fn accuracy_boundaries() {
        let r = accuracy_filter(&[cal("a", 0.851, 1.0), cal("b", 0.850, 1.0)], DEFAULT_ACCURACY_THRESHOLD);
        assert_eq!(r.kept, vec!["a"]);
        assert_eq!(r.dropped, vec![("b".to_string(), DropReason::LowAccuracy)]);
        assert_eq!(accuracy_filter(&[], 0.85), FilterReport::default());
    }

    proptest! {
        #[test]
        fn accuracy_filter_idempotent(accs in prop::collection::vec(0.0f64..1.0, 0..50), t in 0.0f64..1.0) {
            let cals: Vec<_> = accs.iter().enumerate().map(|(k, &a)| cal(&format!("i{k}"), a, 1.0)).collect();
            let once = accuracy_filter(&cals, t);
            let survivors: Vec<_> = cals.iter().filter(|c| once.kept.contains(&c.item_id)).cloned().collect();
            let twice = accuracy_filter(&survivors, t);
            prop_assert_eq!(&twice.kept, &once.kept);
            prop_assert!(twice.dropped.is_empty());
            prop_assert_eq!(once.kept.len() + once.dropped.len(), cals.len());
        }
    }

    #[test]
    fn exact_line_keeps_everything() {
        let bank = bank_with_lengths(&[("a", 4), ("b", 8), ("c", 6)]);
        let cals = [cal("a", 1.0, 2000.0), cal("b", 1.0, 4000.0), cal("c", 1.0, 3000.0)];
        let fit = fit_through_origin(&[(4.0, 2000.0), (8.0, 4000.0), (6.0, 3000.0)]).unwrap();
        assert_eq!(fit.slope, 500.0);
        assert!(fit.residuals.iter().all(|r| *r == 0.0));
        let r = rt_band_filter(&cals, &bank).unwrap();
        assert_eq!(r.kept.len(), 3);
    }

    #[test]
    fn outlier_dropped() {
        // Hand-calculator values for the 4-point set:
        // slope = 103000 / 141 = 730.4965, residuals = (-921.99, -1843.97,
        // -1382.98, 5347.52), residual sd = 3386.23.
        let bank = bank_with_lengths(&[("a", 4), ("b", 8), ("c", 6), ("d", 5)]);
        let cals = [
            cal("a", 1.0, 2000.0),
            cal("b", 1.0, 4000.0),
            cal("c", 1.0, 3000.0),
            cal("d", 1.0, 9000.0),
        ];
        let fit = fit_through_origin(&[(4.0, 2000.0), (8.0, 4000.0), (6.0, 3000.0), (5.0, 9000.0)]).unwrap();
        assert!((fit.slope - 103000.0 / 141.0).abs() < 1e-9);
        assert!((fit.residual_sd - 3386.2327).abs() < 1e-3);
        let r = rt_band_filter(&cals, &bank).unwrap();
        assert_eq!(r.kept, vec!["a", "b", "c"]);
        assert_eq!(r.dropped, vec![("d".to_string(), DropReason::RtBand)]);
    }

    #[test]
    fn rt_band_needs_three_items() {
        let bank = bank_with_lengths(&[("a", 4), ("b", 8)]);
        let cals = [cal("a", 1.0, 2000.0), cal("b", 1.0, 4000.0)];
        assert!(matches!(rt_band_filter(&cals, &bank), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn identical_items_all_kept_at_zero_spread() {
        let bank = bank_with_lengths(&[("a", 5), ("b", 5), ("c", 5)]);
        let cals = [cal("a", 1.0, 2500.0), cal("b", 1.0, 2500.0), cal("c", 1.0, 2500.0)];
        let r = rt_band_filter(&cals, &bank).unwrap();
        assert_eq!(r.kept.len(), 3);
    }

    proptest! {
        #[test]
        fn rt_band_scale_invariant(
            pts in prop::collection::vec((1usize..15, 500.0f64..8000.0), 3..30),
            c in 0.01f64..100.0,
        ) {
            let lengths: Vec<(String, usize)> = pts.iter().enumerate().map(|(k, p)| (format!("i{k}"), p.0)).collect();
            let refs: Vec<(&str, usize)> = lengths.iter().map(|(s, n)| (s.as_str(), *n)).collect();
            let bank = bank_with_lengths(&refs);
            let cals: Vec<_> = pts.iter().enumerate().map(|(k, p)| cal(&format!("i{k}"), 1.0, p.1)).collect();
            let scaled: Vec<_> = pts.iter().enumerate().map(|(k, p)| cal(&format!("i{k}"), 1.0, p.1 * c)).collect();
            let raw: Vec<(f64, f64)> = pts.iter().map(|p| (p.0 as f64, p.1)).collect();
            let raw_scaled: Vec<(f64, f64)> = pts.iter().map(|p| (p.0 as f64, p.1 * c)).collect();
            let f1 = fit_through_origin(&raw).unwrap();
            let f2 = fit_through_origin(&raw_scaled).unwrap();
            prop_assert!((f2.slope - c * f1.slope).abs() <= 1e-9 * f2.slope.abs());
            prop_assert!((f2.residual_sd - c * f1.residual_sd).abs() <= 1e-9 * f2.residual_sd.abs().max(1e-9));
            // skip instances where a residual sits within rounding of the band edge
            let margin = f1.residuals.iter().map(|r| (r.abs() - f1.residual_sd).abs()).fold(f64::INFINITY, f64::min);
            prop_assume!(margin > 1e-6 * f1.residual_sd);
            let a = rt_band_filter(&cals, &bank).unwrap();
            let b = rt_band_filter(&scaled, &bank).unwrap();
            prop_assert_eq!(a.kept, b.kept);
        }
    }
}
