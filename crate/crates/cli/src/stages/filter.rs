//! `filter`: apply the configured filters to the generated items in order.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use formsmith_core::calibration::{
    accuracy_filter, ambiguity_filter, median_accuracy, naive_dedup, read_calibrations, rt_band_filter,
    FilterReport, ItemCalibration,
};
use formsmith_core::item_bank::{Item, ItemBank, Source};
use formsmith_core::seed;
use formsmith_core::{Error, Result};

use super::{attach_embeddings, load_items, stage_input};
use crate::config::FilterName;
use crate::files;
use crate::manifest::{RunManifest, StageRecorder};
use crate::synth::{write_id_list, write_json};
use crate::Context;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub name: String,
    pub report: String,
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    /// Median simulated accuracy of the lab items, when calibrated.
    pub training_median_accuracy: Option<f64>,
    pub candidates: usize,
    pub stages: Vec<StageSummary>,
    pub kept: usize,
}

/// Splits calibrations by the source of their item.
fn split<'a>(
    cals: &'a [ItemCalibration],
    bank: &ItemBank,
) -> Result<(Vec<&'a ItemCalibration>, Vec<&'a ItemCalibration>)> {
    let mut lab = Vec::new();
    let mut gen = Vec::new();
    for c in cals {
        let item = bank.item(&c.item_id).ok_or_else(|| Error::UnknownItem {
            item_id: c.item_id.clone(),
            line: 0,
        })?;
        match item.source {
            Source::Lab => lab.push(c),
            Source::Generated => gen.push(c),
        }
    }
    Ok((lab, gen))
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let stage_seed = ctx.stage_seed("filter");
    let cfg = &ctx.config.filter;
    let items_path = ctx.input("items", files::ITEMS)?;
    let cal_path = stage_input(ctx, files::CALIBRATION)?;
    let mut rec = StageRecorder::start("filter", &ctx.out);
    let mut bank = load_items(&items_path, &mut rec)?;
    if cfg.filter_order.contains(&FilterName::Dedup) {
        attach_embeddings(ctx, &mut bank, &mut rec)?;
    }
    rec.input(&cal_path);
    let cals = read_calibrations(&cal_path)?;
    let (lab, gen) = split(&cals, &bank)?;
    let lab_owned: Vec<ItemCalibration> = lab.into_iter().cloned().collect();
    let training_median = median_accuracy(&lab_owned);

    let mut current: Vec<ItemCalibration> = gen.into_iter().cloned().collect();
    let mut summary = FilterSummary {
        training_median_accuracy: training_median,
        candidates: current.len(),
        stages: Vec::new(),
        kept: 0,
    };
    for (k, &name) in cfg.filter_order.iter().enumerate() {
        if name == FilterName::RtBand && !cfg.rt_band {
            continue;
        }
        let report = apply(name, &current, &bank, cfg, training_median, seed::derive(stage_seed, k as u64))?;
        let file = format!("filter_{:02}_{}.jsonl", k + 1, name.as_str());
        report.write_jsonl(&rec.output(&file))?;
        let keep: HashSet<&str> = report.kept.iter().map(String::as_str).collect();
        summary.stages.push(StageSummary {
            name: name.as_str().to_string(),
            report: file,
            input: current.len(),
            kept: report.kept.len(),
            dropped: report.dropped.len(),
        });
        current.retain(|c| keep.contains(c.item_id.as_str()));
    }
    summary.kept = current.len();
    let kept: Vec<String> = current.iter().map(|c| c.item_id.clone()).collect();
    write_id_list(&rec.output(files::KEPT), &kept)?;
    write_json(&rec.output(files::FILTER_SUMMARY), &summary)?;
    tracing::info!(candidates = summary.candidates, kept = summary.kept, "filter done");
    rec.finish(&ctx.config_hash, ctx.seed(), stage_seed)
}

fn apply(
    name: FilterName,
    current: &[ItemCalibration],
    bank: &ItemBank,
    cfg: &crate::config::FilterConfig,
    training_median: Option<f64>,
    seed: u64,
) -> Result<FilterReport> {
    match name {
        FilterName::Accuracy => Ok(accuracy_filter(current, cfg.accuracy_threshold)),
        FilterName::RtBand => rt_band_filter(current, bank),
        FilterName::Ambiguity => {
            let median = training_median.ok_or_else(|| {
                Error::InsufficientData("the ambiguity filter needs calibrated lab items".into())
            })?;
            Ok(ambiguity_filter(current, median))
        }
        FilterName::Dedup => {
            let by_id: BTreeMap<&str, &Item> = bank.items().map(|i| (i.id.as_str(), i)).collect();
            let items: Vec<&Item> = current.iter().map(|c| by_id[c.item_id.as_str()]).collect();
            naive_dedup(&items, cfg.dedup_floor, seed)
        }
    }
}
