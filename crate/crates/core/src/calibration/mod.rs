//! Per-item calibrations from simulated (or observed) responses and the
//! filters that decide which generated items are usable.

pub mod dedup;
pub mod filters;
pub mod readability;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::item_bank::{self, FileFormat, Item, ItemBank};
use crate::simulator::SimulationDraw;
use crate::stats;

pub use dedup::naive_dedup;
pub use filters::{accuracy_filter, ambiguity_filter, ambiguity_split, rt_band_filter, DEFAULT_ACCURACY_THRESHOLD};
pub use readability::{count_syllables, flesch_kincaid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCalibration {
    pub item_id: String,
    /// Fraction of draws answering "true".
    pub p_true: f64,
    /// Fraction of draws matching the item's truth value.
    pub accuracy: f64,
    pub mean_rt_ms: f64,
    pub median_rt_ms: f64,
    pub std_rt_ms: f64,
    pub n_draws: usize,
    pub fk_grade: f64,
}

impl ItemCalibration {
    pub fn p_false(&self) -> f64 {
        1.0 - self.p_true
    }
}

/// Summarizes at least two draws of one item.
pub fn aggregate(item: &Item, draws: &[SimulationDraw]) -> Result<ItemCalibration> {
    summarize(item, draws.iter().map(|d| (d.response, d.rt_ms)))
}

fn summarize(item: &Item, obs: impl Iterator<Item = (bool, f64)>) -> Result<ItemCalibration> {
    let (responses, rts): (Vec<bool>, Vec<f64>) = obs.unzip();
    let n = responses.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "item `{}` has {n} draw(s); at least 2 are needed",
            item.id
        )));
    }
    let n_true = responses.iter().filter(|&&r| r).count();
    let p_true = n_true as f64 / n as f64;
    // counted, not `1 - p_true`, so 850 of 1000 is exactly 0.85
    let n_correct = if item.truth { n_true } else { n - n_true };
    let accuracy = n_correct as f64 / n as f64;
    Ok(ItemCalibration {
        item_id: item.id.clone(),
        p_true,
        accuracy,
        mean_rt_ms: stats::mean(&rts).expect("n >= 2"),
        median_rt_ms: stats::median(&rts).expect("n >= 2"),
        std_rt_ms: stats::sample_std(&rts).expect("n >= 2"),
        n_draws: n,
        fk_grade: readability::flesch_kincaid(&item.text)?,
    })
}

/// Calibrations computed from the observed responses in `bank`, for every
/// item with at least two responses. Ordered by item id.
pub fn empirical_calibrations(bank: &ItemBank) -> Result<Vec<ItemCalibration>> {
    let mut per_item: BTreeMap<&str, Vec<(bool, f64)>> = BTreeMap::new();
    for r in bank.records() {
        per_item.entry(r.item_id.as_str()).or_default().push((r.response, r.rt_ms));
    }
    per_item
        .into_iter()
        .filter(|(_, obs)| obs.len() >= 2)
        .map(|(id, obs)| {
            let item = bank.item(id).expect("records reference known items");
            summarize(item, obs.into_iter())
        })
        .collect()
}

/// Median accuracy over a set of calibrations (the ambiguity threshold when
/// computed on the training items).
pub fn median_accuracy(cals: &[ItemCalibration]) -> Option<f64> {
    let acc: Vec<f64> = cals.iter().map(|c| c.accuracy).collect();
    stats::median(&acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LowAccuracy,
    RtBand,
    Duplicate,
    Ambiguous,
}

/// Outcome of one filter stage. `kept` and the dropped ids partition the
/// stage's input.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: Vec<String>,
    pub dropped: Vec<(String, DropReason)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub item_id: String,
    pub decision: Decision,
    pub reason: Option<DropReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Kept,
    Dropped,
}

impl FilterReport {
    pub fn decisions(&self) -> Vec<FilterDecision> {
        let kept = self.kept.iter().map(|id| FilterDecision {
            item_id: id.clone(),
            decision: Decision::Kept,
            reason: None,
        });
        let dropped = self.dropped.iter().map(|(id, r)| FilterDecision {
            item_id: id.clone(),
            decision: Decision::Dropped,
            reason: Some(*r),
        });
        kept.chain(dropped).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for d in self.decisions() {
            out.push_str(&serde_json::to_string(&d).map_err(|e| Error::invalid(e.to_string()))?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn write_calibrations(path: &Path, cals: &[ItemCalibration]) -> Result<()> {
    match FileFormat::from_path(path) {
        FileFormat::Csv => item_bank::write_csv(path, cals.iter()),
        FileFormat::Jsonl => {
            let mut out = String::new();
            for c in cals {
                out.push_str(&serde_json::to_string(c).map_err(|e| Error::invalid(e.to_string()))?);
                out.push('\n');
            }
            std::fs::write(path, out).map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_calibrations(path: &Path) -> Result<Vec<ItemCalibration>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    match FileFormat::from_path(path) {
        FileFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(file);
            let mut out = Vec::new();
            for row in rdr.deserialize() {
                let row: ItemCalibration = row.map_err(|e| {
                    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                    parse_err(line, e.to_string())
                })?;
                out.push(row);
            }
            Ok(out)
        }
        FileFormat::Jsonl => BufReader::new(file)
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
            .map(|(idx, l)| {
                let l = l.map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&l).map_err(|e| parse_err(idx + 1, e.to_string()))
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::item_bank::{ResponseRow, Source};
    use proptest::prelude::*;

    fn draws(responses: &[bool], rts: &[f64]) -> Vec<SimulationDraw> {
        responses
            .iter()
            .zip(rts)
            .map(|(&response, &rt_ms)| SimulationDraw { response, rt_ms })
            .collect()
    }

    #[test]
    fn counts_for_false_item() {
        let item = Item::new("f", "Rocks can fly.", false, Source::Generated).unwrap();
        let c = aggregate(&item, &draws(&[true, false, false, false], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(c.p_true, 0.25);
        assert_eq!(c.accuracy, 0.75);
        assert_eq!(c.n_draws, 4);
    }

    #[test]
    fn all_true_for_true_item() {
        let item = Item::new("t", "Fish swim.", true, Source::Generated).unwrap();
        let c = aggregate(&item, &draws(&[true; 100], &[900.0; 100])).unwrap();
        assert_eq!((c.p_true, c.accuracy), (1.0, 1.0));
        assert_eq!(c.std_rt_ms, 0.0);
    }

    #[test]
    fn rt_statistics() {
        let item = Item::new("t", "Fish swim.", true, Source::Generated).unwrap();
        let c = aggregate(&item, &draws(&[true, true, false], &[1000.0, 2000.0, 3000.0])).unwrap();
        assert_eq!(c.mean_rt_ms, 2000.0);
        assert_eq!(c.median_rt_ms, 2000.0);
        assert_eq!(c.std_rt_ms, 1000.0);
    }

    #[test]
    fn too_few_draws() {
        let item = Item::new("t", "Fish swim.", true, Source::Generated).unwrap();
        assert!(aggregate(&item, &draws(&[true], &[1.0])).is_err());
        assert!(aggregate(&item, &[]).is_err());
    }

    proptest! {
        #[test]
        fn accuracy_invariant(responses in prop::collection::vec(any::<bool>(), 2..200), truth in any::<bool>()) {
            let item = Item::new("x", "Birds can fly.", truth, Source::Generated).unwrap();
            let rts: Vec<f64> = (0..responses.len()).map(|k| 500.0 + k as f64).collect();
            let c = aggregate(&item, &draws(&responses, &rts)).unwrap();
            prop_assert!((0.0..=1.0).contains(&c.p_true));
            prop_assert_eq!(c.p_true + c.p_false(), 1.0);
            let correct = responses.iter().filter(|&&r| r == truth).count();
            prop_assert_eq!(c.accuracy, correct as f64 / responses.len() as f64);
            let via_p = if truth { c.p_true } else { 1.0 - c.p_true };
            prop_assert!((c.accuracy - via_p).abs() < 1e-15);
            prop_assert!(c.std_rt_ms >= 0.0);
        }
    }

    #[test]
    fn empirical_from_bank() {
        let items = vec![
            Item::new("a", "Fish swim.", true, Source::Lab).unwrap(),
            Item::new("b", "Rocks fly.", false, Source::Lab).unwrap(),
        ];
        let rows = [("p1", "a", true, 800.0), ("p2", "a", false, 1200.0), ("p1", "b", false, 700.0)]
            .into_iter()
            .map(|(p, i, r, rt)| ResponseRow {
                participant_id: p.into(),
                item_id: i.into(),
                response: r,
                rt_ms: rt,
                grade: None,
            });
        let bank = ItemBank::from_items(items).unwrap().with_responses(rows).unwrap();
        let cals = empirical_calibrations(&bank).unwrap();
        assert_eq!(cals.len(), 1, "item b has a single response");
        assert_eq!(cals[0].item_id, "a");
        assert_eq!(cals[0].accuracy, 0.5);
        assert_eq!(cals[0].median_rt_ms, 1000.0);
    }

    #[test]
    fn calibration_file_columns_and_roundtrip() {
        let c = ItemCalibration {
            item_id: "g1".into(),
            p_true: 0.25,
            accuracy: 0.75,
            mean_rt_ms: 2000.5,
            median_rt_ms: 1999.0,
            std_rt_ms: 10.0,
            n_draws: 100,
            fk_grade: -1.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("cal.csv");
        write_calibrations(&csv_path, std::slice::from_ref(&c)).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "item_id,p_true,accuracy,mean_rt_ms,median_rt_ms,std_rt_ms,n_draws,fk_grade"
        );
        assert_eq!(read_calibrations(&csv_path).unwrap(), vec![c.clone()]);
        let jsonl = dir.path().join("cal.jsonl");
        write_calibrations(&jsonl, std::slice::from_ref(&c)).unwrap();
        assert_eq!(read_calibrations(&jsonl).unwrap(), vec![c]);
    }

    #[test]
    fn report_jsonl_shape() {
        let r = FilterReport {
            kept: vec!["a".into()],
            dropped: vec![("b".into(), DropReason::LowAccuracy)],
        };
        let lines: Vec<String> = r.decisions().iter().map(|d| serde_json::to_string(d).unwrap()).collect();
        assert_eq!(lines[0], r#"{"item_id":"a","decision":"kept","reason":null}"#);
        assert_eq!(lines[1], r#"{"item_id":"b","decision":"dropped","reason":"low_accuracy"}"#);
    }
}
