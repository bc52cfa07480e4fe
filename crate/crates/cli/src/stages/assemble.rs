//! `assemble`: match kept generated items to the lab form's slots.

use std::collections::HashMap;

use formsmith_core::assembly::{assemble, AssemblyProblem, AssemblyReport};
use formsmith_core::calibration::{read_calibrations, ItemCalibration};
use formsmith_core::item_bank::Item;
use formsmith_core::{Error, Result};

use super::{attach_embeddings, load_items, stage_input};
use crate::files;
use crate::manifest::{RunManifest, StageRecorder};
use crate::synth::{read_id_list, write_json};
use crate::Context;

fn pair<'a>(
    ids: &[String],
    bank: &'a formsmith_core::item_bank::ItemBank,
    cals: &'a HashMap<String, ItemCalibration>,
    what: &str,
) -> Result<Vec<(&'a Item, &'a ItemCalibration)>> {
    let missing: Vec<&str> = ids.iter().filter(|id| !cals.contains_key(*id)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::InsufficientData(format!("{what} item(s) without a calibration: {missing:?}")));
    }
    ids.iter()
        .map(|id| {
            let item = bank.item(id).ok_or_else(|| Error::UnknownItem {
                item_id: id.clone(),
                line: 0,
            })?;
            Ok((item, &cals[id]))
        })
        .collect()
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let stage_seed = ctx.stage_seed("assemble");
    let section = &ctx.config.assembly;
    let items_path = ctx.input("items", files::ITEMS)?;
    let lab_path = ctx.input("lab_form", files::LAB_FORM)?;
    let cal_path = stage_input(ctx, files::CALIBRATION)?;
    let kept_path = stage_input(ctx, files::KEPT)?;
    let mut rec = StageRecorder::start("assemble", &ctx.out);
    let mut bank = load_items(&items_path, &mut rec)?;
    attach_embeddings(ctx, &mut bank, &mut rec)?;
    for p in [&lab_path, &cal_path, &kept_path] {
        rec.input(p);
    }
    let cals: HashMap<String, ItemCalibration> = read_calibrations(&cal_path)?
        .into_iter()
        .map(|c| (c.item_id.clone(), c))
        .collect();
    let lab = pair(&read_id_list(&lab_path)?, &bank, &cals, "lab")?;
    let gen = pair(&read_id_list(&kept_path)?, &bank, &cals, "kept")?;
    let problem = AssemblyProblem::from_calibrations(section.copies, &lab, &gen, &section.features, section.cosine_threshold)?;
    let report: AssemblyReport = assemble(&problem, &section.to_config(stage_seed))?;
    write_json(&rec.output(files::FORMS), &report)?;
    tracing::info!(
        copies = report.forms.len(),
        slots = problem.n_lab(),
        candidates = problem.n_gen(),
        loss = report.diagnostics.discrete_loss.total,
        "assemble done"
    );
    rec.finish(&ctx.config_hash, ctx.seed(), stage_seed)
}
