//! The item-response simulator contract and the per-item simulation
//! procedure that marginalizes a simulator over sampled participants.
//!
//! A simulator receives few-shot queries (a participant's earlier responses
//! followed by a target item) and returns one response and response time per
//! query. Two implementations ship with the crate: [`reference`], a
//! generative 2PL / lognormal model, and [`external`], an HTTP batch client.

pub mod external;
pub mod prompt;
pub mod reference;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::item_bank::{Item, ItemBank, ParticipantProfile};
use crate::seed;
use crate::stats;

pub use prompt::render_prompt;

pub const DEFAULT_N_PARTICIPANTS: usize = 100;
pub const DEFAULT_MAX_CONTEXT: usize = 30;

/// Quantile-based response-time label shown to the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RtBin {
    #[serde(rename = "very fast", alias = "very_fast")]
    VeryFast,
    #[serde(rename = "fast")]
    Fast,
    #[serde(rename = "medium")]
    Medium,
    #[serde(rename = "slow")]
    Slow,
    #[serde(rename = "very slow", alias = "very_slow")]
    VerySlow,
}

impl RtBin {
    pub const ALL: [RtBin; 5] = [RtBin::VeryFast, RtBin::Fast, RtBin::Medium, RtBin::Slow, RtBin::VerySlow];

    pub fn label(self) -> &'static str {
        match self {
            RtBin::VeryFast => "very fast",
            RtBin::Fast => "fast",
            RtBin::Medium => "medium",
            RtBin::Slow => "slow",
            RtBin::VerySlow => "very slow",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RtBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RtBin {
    type Err = Error;

    fn from_str(s: &str) -> Result<RtBin> {
        match s.trim() {
            "very fast" | "very_fast" => Ok(RtBin::VeryFast),
            "fast" => Ok(RtBin::Fast),
            "medium" => Ok(RtBin::Medium),
            "slow" => Ok(RtBin::Slow),
            "very slow" | "very_slow" => Ok(RtBin::VerySlow),
            other => Err(Error::invalid(format!("unknown response-time bin `{other}`"))),
        }
    }
}

/// Four ascending thresholds at the 20/40/60/80th percentiles of the pooled
/// response-time distribution. Bins are half-open `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtBinner {
    boundaries: [f64; 4],
}

impl RtBinner {
    pub fn new(boundaries: [f64; 4]) -> Result<RtBinner> {
        if !boundaries.iter().all(|b| b.is_finite() && *b > 0.0)
            || boundaries.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Degenerate(format!(
                "bin boundaries must be positive and strictly ascending, got {boundaries:?}"
            )));
        }
        Ok(RtBinner { boundaries })
    }

    /// Fits boundaries to the linear-interpolation quantiles of `rts`.
    pub fn fit(rts: &[f64]) -> Result<RtBinner> {
        if rts.len() < 5 {
            return Err(Error::InsufficientData(format!(
                "need at least 5 response times to fit bins, got {}",
                rts.len()
            )));
        }
        let mut sorted = rts.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut b = [0.0; 4];
        for (k, slot) in b.iter_mut().enumerate() {
            *slot = stats::quantile_sorted(&sorted, 0.2 * (k + 1) as f64).expect("non-empty, p in range");
        }
        RtBinner::new(b)
    }

    pub fn boundaries(&self) -> [f64; 4] {
        self.boundaries
    }

    pub fn bin(&self, rt_ms: f64) -> Result<RtBin> {
        if !(rt_ms > 0.0) {
            return Err(Error::invalid(format!("response time must be positive, got {rt_ms}")));
        }
        let idx = self.boundaries.iter().take_while(|&&b| rt_ms >= b).count();
        Ok(RtBin::ALL[idx])
    }

    /// Millisecond value standing in for a bin label: the bin midpoint, with
    /// `(0, b0)` for the fastest bin and `1.5 * b3` for the slowest.
    pub fn representative_ms(&self, bin: RtBin) -> f64 {
        let b = self.boundaries;
        match bin {
            RtBin::VeryFast => b[0] / 2.0,
            RtBin::VerySlow => b[3] * 1.5,
            other => {
                let i = other.index();
                (b[i - 1] + b[i]) / 2.0
            }
        }
    }
}

/// Fits response-time bins on every record in the bank.
pub fn fit_rt_bins(bank: &ItemBank) -> Result<RtBinner> {
    RtBinner::fit(&bank.all_rts())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub text: String,
    pub response: bool,
    pub rt_bin: RtBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorQuery {
    pub context: Vec<ContextEntry>,
    pub target_text: String,
}

impl SimulatorQuery {
    pub fn new(context: Vec<ContextEntry>, target_text: impl Into<String>, max_context: usize) -> Result<Self> {
        let target_text = target_text.into();
        if target_text.trim().is_empty() {
            return Err(Error::invalid("target text is empty"));
        }
        if context.len() > max_context {
            return Err(Error::invalid(format!(
                "context has {} entries, limit is {max_context}",
                context.len()
            )));
        }
        Ok(SimulatorQuery { context, target_text })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationDraw {
    pub response: bool,
    pub rt_ms: f64,
}

/// A query together with who it simulates and for which item.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRequest {
    pub participant_id: String,
    pub item_id: String,
    pub query: SimulatorQuery,
}

/// Anything that can answer simulator queries. Implementations must return
/// exactly one draw per request, in request order.
pub trait ResponseSimulator: Send + Sync {
    fn simulate(&self, requests: &[SimulationRequest], seed: u64) -> Result<Vec<SimulationDraw>>;
}

fn sample_context(
    profile: &ParticipantProfile,
    bank: &ItemBank,
    binner: &RtBinner,
    target: &Item,
    max_context: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ContextEntry>> {
    // the target item never appears in its own context
    let available: Vec<_> = profile.records.iter().filter(|r| r.item_id != target.id).collect();
    let amount = available.len().min(max_context);
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, available.len(), amount).into_vec();
    picked.shuffle(rng);
    picked
        .into_iter()
        .map(|k| {
            let rec = available[k];
            let item = bank.item(&rec.item_id).ok_or_else(|| Error::UnknownItem {
                item_id: rec.item_id.clone(),
                line: 0,
            })?;
            Ok(ContextEntry {
                text: item.text.clone(),
                response: rec.response,
                rt_bin: binner.bin(rec.rt_ms)?,
            })
        })
        .collect()
}

/// Samples `n_participants` participants uniformly with replacement and
/// builds one query per sample: up to `max_context` of the participant's
/// records, drawn without replacement and shuffled, followed by `item`.
pub fn sample_item_requests(
    bank: &ItemBank,
    binner: &RtBinner,
    item: &Item,
    n_participants: usize,
    max_context: usize,
    seed: u64,
) -> Result<Vec<SimulationRequest>> {
    let participants: Vec<&ParticipantProfile> = bank.participants().collect();
    if participants.is_empty() {
        return Err(Error::InsufficientData("bank has no participants".into()));
    }
    let mut rng = seed::rng(seed);
    (0..n_participants)
        .map(|_| {
            let p = participants[rng.random_range(0..participants.len())];
            let context = sample_context(p, bank, binner, item, max_context, &mut rng)?;
            Ok(SimulationRequest {
                participant_id: p.id.clone(),
                item_id: item.id.clone(),
                query: SimulatorQuery::new(context, item.text.clone(), max_context)?,
            })
        })
        .collect()
}

/// Simulates `item` for `n_participants` sampled participants. Draw `k`
/// belongs to participant sample `k`.
pub fn simulate_item(
    bank: &ItemBank,
    binner: &RtBinner,
    item: &Item,
    simulator: &dyn ResponseSimulator,
    n_participants: usize,
    max_context: usize,
    seed: u64,
) -> Result<Vec<SimulationDraw>> {
    simulate_item_logged(bank, binner, item, simulator, n_participants, max_context, seed).map(|(_, d)| d)
}

/// [`simulate_item`] that also returns the requests, for audit logs.
pub fn simulate_item_logged(
    bank: &ItemBank,
    binner: &RtBinner,
    item: &Item,
    simulator: &dyn ResponseSimulator,
    n_participants: usize,
    max_context: usize,
    seed: u64,
) -> Result<(Vec<SimulationRequest>, Vec<SimulationDraw>)> {
    let requests = sample_item_requests(bank, binner, item, n_participants, max_context, seed::derive(seed, 0))?;
    let draws = simulator.simulate(&requests, seed::derive(seed, 1))?;
    if draws.len() != requests.len() {
        return Err(Error::invalid(format!(
            "simulator returned {} draws for {} requests",
            draws.len(),
            requests.len()
        )));
    }
    Ok((requests, draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::item_bank::{ResponseRow, Source};
    use proptest::prelude::*;

    /// Independent oracle: linear-interpolation quantile through 1-based ranks.
    fn quantile_oracle(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = 1.0 + p * (v.len() as f64 - 1.0);
        let k = rank.trunc() as usize;
        let frac = rank - k as f64;
        if k >= v.len() {
            return v[v.len() - 1];
        }
        v[k - 1] * (1.0 - frac) + v[k] * frac
    }

    #[test]
    fn bins_on_one_to_hundred() {
        let rts: Vec<f64> = (1..=100).map(f64::from).collect();
        let binner = RtBinner::fit(&rts).unwrap();
        let expected = [0.2, 0.4, 0.6, 0.8].map(|p| quantile_oracle(&rts, p));
        for (got, want) in binner.boundaries().iter().zip(expected) {
            assert!((got - want).abs() < 1e-9);
        }
        for (got, want) in binner.boundaries().iter().zip([20.8, 40.6, 60.4, 80.2]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn bins_on_five_values() {
        let rts = [100.0, 200.0, 300.0, 400.0, 500.0];
        let binner = RtBinner::fit(&rts).unwrap();
        let expected = [0.2, 0.4, 0.6, 0.8].map(|p| quantile_oracle(&rts, p));
        for ((got, oracle), literal) in binner.boundaries().iter().zip(expected).zip([180.0, 260.0, 340.0, 420.0]) {
            assert!((got - oracle).abs() < 1e-9);
            assert!((got - literal).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_and_small_inputs() {
        assert!(matches!(RtBinner::fit(&[1000.0; 50]), Err(Error::Degenerate(_))));
        assert!(matches!(RtBinner::fit(&[1.0, 2.0, 3.0, 4.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn bin_half_open() {
        let b = RtBinner::new([180.0, 260.0, 340.0, 420.0]).unwrap();
        assert_eq!(b.bin(100.0).unwrap(), RtBin::VeryFast);
        assert_eq!(b.bin(179.999).unwrap(), RtBin::VeryFast);
        assert_eq!(b.bin(180.0).unwrap(), RtBin::Fast);
        assert_eq!(b.bin(260.0).unwrap(), RtBin::Medium);
        assert_eq!(b.bin(420.0).unwrap(), RtBin::VerySlow);
        assert_eq!(b.bin(10_000.0).unwrap(), RtBin::VerySlow);
        assert!(b.bin(0.0).is_err());
        assert!(b.bin(-3.0).is_err());
    }

    #[test]
    fn representative_values() {
        let b = RtBinner::new([180.0, 260.0, 340.0, 420.0]).unwrap();
        let reps: Vec<f64> = RtBin::ALL.iter().map(|&bin| b.representative_ms(bin)).collect();
        assert_eq!(reps, vec![90.0, 220.0, 300.0, 380.0, 630.0]);
        for bin in RtBin::ALL {
            assert_eq!(b.bin(b.representative_ms(bin)).unwrap(), bin);
        }
    }

    #[test]
    fn labels_parse_both_spellings() {
        for bin in RtBin::ALL {
            assert_eq!(bin.label().parse::<RtBin>().unwrap(), bin);
            assert_eq!(bin.label().replace(' ', "_").parse::<RtBin>().unwrap(), bin);
            let json = serde_json::to_string(&bin).unwrap();
            assert_eq!(json, format!("\"{}\"", bin.label()));
        }
        assert!("quick".parse::<RtBin>().is_err());
    }

    proptest! {
        #[test]
        fn binning_is_a_total_partition(rt in 1e-6f64..1e7, raw in prop::array::uniform4(1.0f64..1e5)) {
            let mut b = raw;
            b.sort_by(f64::total_cmp);
            prop_assume!(b.windows(2).all(|w| w[0] < w[1]));
            let binner = RtBinner::new(b).unwrap();
            let bin = binner.bin(rt).unwrap();
            let i = bin as usize;
            let lo = if i == 0 { 0.0 } else { b[i - 1] };
            let hi = if i == 4 { f64::INFINITY } else { b[i] };
            prop_assert!(lo <= rt && rt < hi);
            let hits = (0..5).filter(|&k| {
                let lo = if k == 0 { 0.0 } else { b[k - 1] };
                let hi = if k == 4 { f64::INFINITY } else { b[k] };
                lo <= rt && rt < hi
            }).count();
            prop_assert_eq!(hits, 1);
        }
    }

    fn small_bank() -> ItemBank {
        let items: Vec<Item> = (0..10)
            .map(|k| Item::new(format!("i{k}"), format!("Sentence number {k} here."), k % 2 == 0, Source::Lab).unwrap())
            .collect();
        let mut rows = Vec::new();
        for (p, n) in [("p0", 4usize), ("p1", 10)] {
            for k in 0..n {
                rows.push(ResponseRow {
                    participant_id: p.into(),
                    item_id: format!("i{k}"),
                    response: k % 3 == 0,
                    rt_ms: 600.0 + 100.0 * k as f64,
                    grade: None,
                });
            }
        }
        ItemBank::from_items(items).unwrap().with_responses(rows).unwrap()
    }

    #[test]
    fn request_sampling_rules() {
        let bank = small_bank();
        let binner = fit_rt_bins(&bank).unwrap();
        let target = Item::new("new", "A turtle has a shell.", true, Source::Generated).unwrap();
        let reqs = sample_item_requests(&bank, &binner, &target, 100, 30, 3).unwrap();
        assert_eq!(reqs.len(), 100);
        for r in &reqs {
            let want = if r.participant_id == "p0" { 4 } else { 10 };
            assert_eq!(r.query.context.len(), want);
            assert_eq!(r.query.target_text, "A turtle has a shell.");
        }
        let capped = sample_item_requests(&bank, &binner, &target, 20, 3, 3).unwrap();
        assert!(capped.iter().all(|r| r.query.context.len() == 3));
        assert_eq!(reqs, sample_item_requests(&bank, &binner, &target, 100, 30, 3).unwrap());
        assert_ne!(reqs, sample_item_requests(&bank, &binner, &target, 100, 30, 4).unwrap());
    }

    #[test]
    fn target_excluded_from_its_own_context() {
        let bank = small_bank();
        let binner = fit_rt_bins(&bank).unwrap();
        let target = bank.item("i2").unwrap().clone();
        let reqs = sample_item_requests(&bank, &binner, &target, 50, 30, 9).unwrap();
        for r in reqs {
            assert!(r.query.context.iter().all(|c| c.text != target.text));
        }
    }

    #[test]
    fn empty_bank_is_an_error() {
        let bank = ItemBank::from_items(vec![]).unwrap();
        let binner = RtBinner::new([1.0, 2.0, 3.0, 4.0]).unwrap();
        let target = Item::new("t", "Dogs bark.", true, Source::Generated).unwrap();
        assert!(sample_item_requests(&bank, &binner, &target, 10, 30, 0).is_err());
    }

    #[test]
    fn query_validation() {
        assert!(SimulatorQuery::new(vec![], "  ", 30).is_err());
        let e = ContextEntry {
            text: "x".into(),
            response: true,
            rt_bin: RtBin::Fast,
        };
        assert!(SimulatorQuery::new(vec![e.clone(); 31], "t", 30).is_err());
        assert!(SimulatorQuery::new(vec![e; 30], "t", 30).is_ok());
    }
}
