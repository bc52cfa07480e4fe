//! `calibrate`: simulate every target item and aggregate the draws.

use serde::Serialize;

use formsmith_core::calibration::{aggregate, empirical_calibrations, write_calibrations, ItemCalibration};
use formsmith_core::item_bank::{filter_guessers, ItemBank, Source};
use formsmith_core::seed;
use formsmith_core::simulator::external::ExternalSimulator;
use formsmith_core::simulator::{fit_rt_bins, simulate_item_logged, ResponseSimulator, RtBinner};
use formsmith_core::{Error, Result};

use super::{load_items, load_responses, load_truth};
use crate::config::SimulatorKind;
use crate::files;
use crate::manifest::{RunManifest, StageRecorder};
use crate::synth::{build_simulator, write_json, write_text};
use crate::Context;

#[derive(Serialize)]
struct DrawLogRow<'a> {
    item_id: &'a str,
    sample: usize,
    participant_id: &'a str,
    response: bool,
    rt_ms: f64,
}

#[derive(Serialize)]
struct BinsFile {
    boundaries_ms: [f64; 4],
    n_rts: usize,
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let stage_seed = ctx.stage_seed("calibrate");
    let items_path = ctx.input("items", files::ITEMS)?;
    let responses_path = ctx.input("responses", files::RESPONSES)?;
    let mut rec = StageRecorder::start("calibrate", &ctx.out);
    let items = load_items(&items_path, &mut rec)?;
    let bank = load_responses(&items, &responses_path, &mut rec)?;
    let bank = filter_guessers(&bank, ctx.config.simulator.guesser_threshold_ms);
    if bank.n_participants() == 0 {
        return Err(Error::InsufficientData("no participants left after the guesser filter".into()));
    }
    let binner = fit_rt_bins(&bank)?;
    let simulator: Box<dyn ResponseSimulator> = match ctx.config.simulator.kind {
        SimulatorKind::Reference => {
            let truth = load_truth(ctx, &mut rec)?;
            let all: Vec<_> = bank.items().cloned().collect();
            Box::new(build_simulator(&all, &truth.items, &truth.participants, &truth.model)?)
        }
        SimulatorKind::External => {
            let ext = ctx.config.simulator.external.clone().expect("validated");
            Box::new(ExternalSimulator::new(ext, binner.clone()).map_err(Error::External)?)
        }
    };
    ctx.ensure_out()?;
    calibrate_with(ctx, &bank, &binner, simulator.as_ref(), stage_seed, &mut rec)?;
    rec.finish(&ctx.config_hash, ctx.seed(), stage_seed)
}

/// Simulates and aggregates each target item in id order. On a simulator
/// failure the calibrations finished so far go to the partial-results file
/// and the error is returned.
pub fn calibrate_with(
    ctx: &Context,
    bank: &ItemBank,
    binner: &RtBinner,
    simulator: &dyn ResponseSimulator,
    stage_seed: u64,
    rec: &mut StageRecorder,
) -> Result<Vec<ItemCalibration>> {
    let cfg = &ctx.config.simulator;
    let targets = bank
        .items()
        .filter(|i| i.source == Source::Generated || (cfg.calibrate_lab && i.source == Source::Lab));
    let mut cals = Vec::new();
    let mut log = String::new();
    for item in targets {
        let outcome = simulate_item_logged(
            bank,
            binner,
            item,
            simulator,
            cfg.n_participants,
            cfg.max_context,
            seed::derive_named(stage_seed, &item.id),
        )
        .and_then(|(requests, draws)| Ok((aggregate(item, &draws)?, requests, draws)));
        let (cal, requests, draws) = match outcome {
            Ok(v) => v,
            Err(e) => {
                let partial = ctx.out.join(files::CALIBRATION_PARTIAL);
                write_calibrations(&partial, &cals)?;
                tracing::error!(item = %item.id, done = cals.len(), "simulation failed; partial results in {}", partial.display());
                return Err(e);
            }
        };
        for (k, (r, d)) in requests.iter().zip(&draws).enumerate() {
            let row = DrawLogRow {
                item_id: &item.id,
                sample: k,
                participant_id: &r.participant_id,
                response: d.response,
                rt_ms: d.rt_ms,
            };
            log.push_str(&serde_json::to_string(&row).map_err(|e| Error::Invalid(e.to_string()))?);
            log.push('\n');
        }
        cals.push(cal);
    }
    let _ = std::fs::remove_file(ctx.out.join(files::CALIBRATION_PARTIAL));
    write_calibrations(&rec.output(files::CALIBRATION), &cals)?;
    write_text(&rec.output(files::DRAWS), &log)?;
    write_json(
        &rec.output(files::RT_BINS),
        &BinsFile {
            boundaries_ms: binner.boundaries(),
            n_rts: bank.all_rts().len(),
        },
    )?;
    let empirical: Vec<ItemCalibration> = empirical_calibrations(bank)?
        .into_iter()
        .filter(|c| bank.item(&c.item_id).is_some_and(|i| i.source == Source::Lab))
        .collect();
    write_calibrations(&rec.output(files::EMPIRICAL), &empirical)?;
    tracing::info!(items = cals.len(), "calibrate done");
    Ok(cals)
}
