//! `evaluate`: score the lab form against each assembled form, fit 2PL IRT
//! to every administered item and compare the simulator and readability
//! predictions with the observed lab-item statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use formsmith_core::assembly::AssemblyReport;
use formsmith_core::calibration::{read_calibrations, ItemCalibration};
use formsmith_core::item_bank::{ItemBank, ResponseRecord, Source};
use formsmith_core::psychometrics::irt::{theta_grid, write_information_curves, write_irt_params};
use formsmith_core::psychometrics::{
    compare_forms, fit_2pl, item_information, pearson_r, rmse, AgreementReport, IrtModel, ResponseMatrix, ScoreSheet,
};
use formsmith_core::seed;
use formsmith_core::{Error, Result};

use super::{load_items, load_truth, stage_input};
use crate::config::ReportFormat;
use crate::files;
use crate::manifest::{RunManifest, StageRecorder};
use crate::svg::{scatter_svg, Scatter};
use crate::synth::{build_simulator, read_id_list, read_json, read_rows, write_json, write_rows, write_text};
use crate::Context;

pub const LAB_FORM_NAME: &str = "lab";

pub fn form_name(k: usize) -> String {
    format!("form_{}", k + 1)
}

/// One administered item, tagged with the form it was part of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormResponseRow {
    pub form: String,
    pub participant_id: String,
    pub item_id: String,
    pub response: bool,
    pub rt_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormAgreement {
    pub form: String,
    pub report: AgreementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparisonRow {
    pub predictor: String,
    pub accuracy_r: Option<f64>,
    pub median_rt_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorFit {
    pub n_items: usize,
    pub accuracy_r: Option<f64>,
    pub accuracy_r2: Option<f64>,
    /// In percentage points.
    pub accuracy_rmse_pct: f64,
    pub median_rt_r: Option<f64>,
    pub median_rt_r2: Option<f64>,
    pub median_rt_rmse_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtSummary {
    pub items_fitted: usize,
    /// Items left out for too few responses or no variation.
    pub items_excluded: Vec<String>,
    pub cycles: usize,
    pub converged: bool,
    pub final_log_likelihood: f64,
    pub model: IrtModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `simulated` or `observed`.
    pub responses: String,
    pub n_participants: usize,
    pub agreement: Vec<FormAgreement>,
    pub model_comparison: Vec<ModelComparisonRow>,
    pub simulator_fit: Option<SimulatorFit>,
    pub irt: IrtSummary,
}

/// Forms in administration order: the lab form, then each assembled form.
pub fn named_forms(lab: &[String], report: &AssemblyReport) -> Vec<(String, Vec<String>)> {
    let mut out = vec![(LAB_FORM_NAME.to_string(), lab.to_vec())];
    out.extend(report.forms.iter().enumerate().map(|(k, f)| (form_name(k), f.clone())));
    out
}

/// Each participant of a fresh population takes every form in order, each
/// under its own time limit.
pub fn simulate_population(
    ctx: &Context,
    bank: &ItemBank,
    forms: &[(String, Vec<String>)],
    rec: &mut StageRecorder,
    stage_seed: u64,
) -> Result<Vec<FormResponseRow>> {
    let cfg = &ctx.config.evaluate;
    let truth = load_truth(ctx, rec)?;
    let all: Vec<_> = bank.items().cloned().collect();
    let mut sim = build_simulator(&all, &truth.items, &[], &truth.model)?;
    let mut prng = seed::rng(seed::derive_named(stage_seed, "population"));
    let ids: Vec<String> = (0..cfg.n_participants).map(|k| format!("e{:04}", k + 1)).collect();
    for id in &ids {
        sim.add_participant(id.clone(), truth.model.sample_participant(&mut prng));
    }
    let session_seed = seed::derive_named(stage_seed, "sessions");
    let mut rows = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        for (f, (name, form)) in forms.iter().enumerate() {
            let items = form
                .iter()
                .map(|i| {
                    bank.item(i).ok_or_else(|| Error::UnknownItem {
                        item_id: i.clone(),
                        line: 0,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut rng = seed::rng(seed::derive(session_seed, (k * forms.len() + f) as u64));
            for r in sim.administer(id, &items, cfg.time_limit_ms, &mut rng)? {
                rows.push(FormResponseRow {
                    form: name.clone(),
                    participant_id: r.participant_id,
                    item_id: r.item_id,
                    response: r.response,
                    rt_ms: r.rt_ms,
                });
            }
        }
    }
    Ok(rows)
}

/// Scored records per form name. Unknown forms or items are errors.
pub fn score_rows(
    bank: &ItemBank,
    forms: &[(String, Vec<String>)],
    rows: &[FormResponseRow],
) -> Result<BTreeMap<String, Vec<ResponseRecord>>> {
    let known: HashSet<&str> = forms.iter().map(|f| f.0.as_str()).collect();
    let mut out: BTreeMap<String, Vec<ResponseRecord>> = forms.iter().map(|f| (f.0.clone(), Vec::new())).collect();
    for (line, r) in rows.iter().enumerate() {
        if !known.contains(r.form.as_str()) {
            return Err(Error::Invalid(format!("row {}: unknown form `{}`", line + 1, r.form)));
        }
        if !(r.rt_ms > 0.0) {
            return Err(Error::Invalid(format!("row {}: rt_ms must be positive", line + 1)));
        }
        let item = bank.item(&r.item_id).ok_or_else(|| Error::UnknownItem {
            item_id: r.item_id.clone(),
            line: line + 2,
        })?;
        out.get_mut(&r.form).expect("known form").push(ResponseRecord {
            participant_id: r.participant_id.clone(),
            item_id: r.item_id.clone(),
            response: r.response,
            correct: r.response == item.truth,
            rt_ms: r.rt_ms,
        });
    }
    Ok(out)
}

/// Lab form against each other form.
pub fn agreement(
    forms: &[(String, Vec<String>)],
    scored: &BTreeMap<String, Vec<ResponseRecord>>,
) -> Result<(Vec<FormAgreement>, BTreeMap<String, ScoreSheet>)> {
    let sheets: BTreeMap<String, ScoreSheet> = scored
        .iter()
        .map(|(name, recs)| (name.clone(), ScoreSheet::from_records(recs)))
        .collect();
    let lab = &sheets[LAB_FORM_NAME];
    let mut out = Vec::new();
    for (name, _) in forms.iter().skip(1) {
        let report = compare_forms(lab, &sheets[name]).map_err(|e| match e {
            Error::InsufficientData(m) => Error::InsufficientData(format!("lab vs {name}: {m}")),
            other => other,
        })?;
        out.push(FormAgreement {
            form: name.clone(),
            report,
        });
    }
    Ok((out, sheets))
}

/// Fits 2PL on every item with enough varied responses.
pub fn fit_irt(
    forms: &[(String, Vec<String>)],
    scored: &BTreeMap<String, Vec<ResponseRecord>>,
    ctx: &Context,
) -> Result<IrtSummary> {
    let mut order: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for (_, form) in forms {
        for id in form {
            if seen.insert(id.clone()) {
                order.push(id.clone());
            }
        }
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for r in scored.values().flatten() {
        let c = counts.entry(r.item_id.as_str()).or_default();
        c.0 += 1;
        c.1 += usize::from(r.correct);
    }
    let min = ctx.config.evaluate.min_item_responses;
    let (fit_ids, excluded): (Vec<String>, Vec<String>) = order.into_iter().partition(|id| {
        counts
            .get(id.as_str())
            .is_some_and(|&(n, right)| n >= min && right > 0 && right < n)
    });
    if fit_ids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} item(s) have at least {min} responses with both outcomes",
            fit_ids.len()
        )));
    }
    let matrix = ResponseMatrix::from_records(scored.values().flatten(), &fit_ids);
    let model = fit_2pl(&matrix, &ctx.config.evaluate.irt)?;
    Ok(IrtSummary {
        items_fitted: fit_ids.len(),
        items_excluded: excluded,
        cycles: model.cycles,
        converged: model.converged,
        final_log_likelihood: *model.log_likelihood.last().unwrap_or(&f64::NAN),
        model,
    })
}

fn r_or_none(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_r(x, y).ok()
}

/// Table of prediction correlations against observed lab-item statistics:
/// rows `flesch_kincaid` and `simulator`, columns accuracy and median RT.
pub fn model_comparison(
    simulated: &[ItemCalibration],
    empirical: &[ItemCalibration],
) -> (Vec<ModelComparisonRow>, Option<SimulatorFit>, Vec<[f64; 5]>) {
    let sim: HashMap<&str, &ItemCalibration> = simulated.iter().map(|c| (c.item_id.as_str(), c)).collect();
    let fk: Vec<f64> = empirical.iter().map(|c| c.fk_grade).collect();
    let acc: Vec<f64> = empirical.iter().map(|c| c.accuracy).collect();
    let rt: Vec<f64> = empirical.iter().map(|c| c.median_rt_ms).collect();
    let mut rows = vec![ModelComparisonRow {
        predictor: "flesch_kincaid".into(),
        accuracy_r: r_or_none(&fk, &acc),
        median_rt_r: r_or_none(&fk, &rt),
    }];
    // (fk, observed acc, simulated acc, observed rt, simulated rt)
    let joined: Vec<[f64; 5]> = empirical
        .iter()
        .filter_map(|e| {
            sim.get(e.item_id.as_str())
                .map(|s| [e.fk_grade, e.accuracy, s.accuracy, e.median_rt_ms, s.median_rt_ms])
        })
        .collect();
    let col = |k: usize| joined.iter().map(|j| j[k]).collect::<Vec<f64>>();
    let (oa, sa, ort, srt) = (col(1), col(2), col(3), col(4));
    let acc_r = r_or_none(&sa, &oa);
    let rt_r = r_or_none(&srt, &ort);
    rows.push(ModelComparisonRow {
        predictor: "simulator".into(),
        accuracy_r: acc_r,
        median_rt_r: rt_r,
    });
    let fit = (!joined.is_empty()).then(|| SimulatorFit {
        n_items: joined.len(),
        accuracy_r: acc_r,
        accuracy_r2: acc_r.map(|r| r * r),
        accuracy_rmse_pct: 100.0 * rmse(&sa, &oa).expect("non-empty"),
        median_rt_r: rt_r,
        median_rt_r2: rt_r.map(|r| r * r),
        median_rt_rmse_ms: rmse(&srt, &ort).expect("non-empty"),
    });
    (rows, fit, joined)
}

#[derive(Serialize)]
struct AgreementCsvRow<'a> {
    form: &'a str,
    n: usize,
    r: f64,
    r2: f64,
    r_ci95_low: Option<f64>,
    r_ci95_high: Option<f64>,
    rmse: f64,
    slope: f64,
    intercept: f64,
    mean_lab: f64,
    mean_form: f64,
    mean_diff: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_information_by_source(path: &Path, model: &IrtModel, bank: &ItemBank) -> Result<()> {
    let mut text = String::from("theta,lab,generated\n");
    let groups: Vec<(Source, Vec<(f64, f64)>)> = [Source::Lab, Source::Generated]
        .into_iter()
        .map(|s| {
            let items = model
                .items
                .iter()
                .filter(|it| bank.item(&it.item_id).is_some_and(|i| i.source == s))
                .map(|it| (it.a, it.b))
                .collect();
            (s, items)
        })
        .collect();
    for t in theta_grid() {
        text.push_str(&format!("{t:.1}"));
        for (_, items) in &groups {
            let mean = if items.is_empty() {
                None
            } else {
                Some(items.iter().map(|&(a, b)| item_information(a, b, t)).sum::<f64>() / items.len() as f64)
            };
            text.push(',');
            text.push_str(&opt(mean));
        }
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let stage_seed = ctx.stage_seed("evaluate");
    let report_cfg = &ctx.config.report;
    let items_path = ctx.input("items", files::ITEMS)?;
    let lab_path = ctx.input("lab_form", files::LAB_FORM)?;
    let forms_path = stage_input(ctx, files::FORMS)?;
    let cal_path = stage_input(ctx, files::CALIBRATION)?;
    let emp_path = stage_input(ctx, files::EMPIRICAL)?;
    // observed responses only when configured; the simulated file in the
    // output directory is never read back
    let observed = match ctx.config.paths.form_responses {
        Some(_) => Some(ctx.input("form_responses", files::FORM_RESPONSES)?),
        None => None,
    };
    let mut rec = StageRecorder::start("evaluate", &ctx.out);
    let bank = load_items(&items_path, &mut rec)?;
    for p in [&lab_path, &forms_path, &cal_path, &emp_path] {
        rec.input(p);
    }
    let assembly: AssemblyReport = read_json(&forms_path)?;
    let forms = named_forms(&read_id_list(&lab_path)?, &assembly);

    let (rows, source) = match &observed {
        Some(path) => {
            rec.input(path);
            (read_rows::<FormResponseRow>(path)?, "observed")
        }
        None => {
            let rows = simulate_population(ctx, &bank, &forms, &mut rec, stage_seed)?;
            write_rows(&rec.output(files::FORM_RESPONSES), &rows)?;
            (rows, "simulated")
        }
    };
    let scored = score_rows(&bank, &forms, &rows)?;
    let (agreements, sheets) = agreement(&forms, &scored)?;
    let irt = fit_irt(&forms, &scored, ctx)?;
    let (comparison, simulator_fit, joined) =
        model_comparison(&read_calibrations(&cal_path)?, &read_calibrations(&emp_path)?);
    let participants: HashSet<&str> = sheets.values().flat_map(|s| s.scores.keys().map(String::as_str)).collect();
    let evaluation = Evaluation {
        responses: source.to_string(),
        n_participants: participants.len(),
        agreement: agreements,
        model_comparison: comparison,
        simulator_fit,
        irt,
    };

    if report_cfg.wants(ReportFormat::Json) {
        write_json(&rec.output("evaluation.json"), &evaluation)?;
    }
    if report_cfg.wants(ReportFormat::Csv) {
        write_csv_reports(&evaluation, &forms, &sheets, &bank, &mut rec)?;
    }
    if report_cfg.wants(ReportFormat::Svg) {
        write_plots(&evaluation, &sheets, &joined, &mut rec)?;
    }
    for a in &evaluation.agreement {
        tracing::info!(form = %a.form, r = a.report.r, mean_diff = a.report.mean_diff, "agreement");
    }
    rec.finish(&ctx.config_hash, ctx.seed(), stage_seed)
}

fn write_csv_reports(
    ev: &Evaluation,
    forms: &[(String, Vec<String>)],
    sheets: &BTreeMap<String, ScoreSheet>,
    bank: &ItemBank,
    rec: &mut StageRecorder,
) -> Result<()> {
    let rows: Vec<AgreementCsvRow> = ev
        .agreement
        .iter()
        .map(|a| {
            let r = &a.report;
            AgreementCsvRow {
                form: &a.form,
                n: r.n,
                r: r.r,
                r2: r.r2,
                r_ci95_low: r.r_ci95_fisher_z.map(|c| c.0),
                r_ci95_high: r.r_ci95_fisher_z.map(|c| c.1),
                rmse: r.rmse,
                slope: r.slope,
                intercept: r.intercept,
                mean_lab: r.mean_a,
                mean_form: r.mean_b,
                mean_diff: r.mean_diff,
            }
        })
        .collect();
    write_rows(&rec.output("agreement.csv"), &rows)?;

    let mut table = String::from("predictor,accuracy_r,median_rt_r\n");
    for row in &ev.model_comparison {
        table.push_str(&format!("{},{},{}\n", row.predictor, opt(row.accuracy_r), opt(row.median_rt_r)));
    }
    write_text(&rec.output("model_comparison.csv"), &table)?;

    let mut scores = String::from("participant_id");
    for (name, _) in forms {
        scores.push(',');
        scores.push_str(name);
    }
    scores.push('\n');
    let participants: std::collections::BTreeSet<&String> = sheets.values().flat_map(|s| s.scores.keys()).collect();
    for p in participants {
        scores.push_str(p);
        for (name, _) in forms {
            scores.push(',');
            if let Some(s) = sheets[name].scores.get(p) {
                scores.push_str(&s.to_string());
            }
        }
        scores.push('\n');
    }
    write_text(&rec.output(files::SCORES), &scores)?;

    write_irt_params(&rec.output("irt_params.csv"), &ev.irt.model)?;
    write_information_curves(&rec.output("information_curves.csv"), &ev.irt.model)?;
    write_information_by_source(&rec.output("information_by_source.csv"), &ev.irt.model, bank)
}

fn write_plots(
    ev: &Evaluation,
    sheets: &BTreeMap<String, ScoreSheet>,
    joined: &[[f64; 5]],
    rec: &mut StageRecorder,
) -> Result<()> {
    let lab = &sheets[LAB_FORM_NAME];
    for a in &ev.agreement {
        let other = &sheets[&a.form];
        let pts: Vec<(f64, f64)> = lab
            .scores
            .iter()
            .filter_map(|(p, &x)| other.scores.get(p).map(|&y| (x as f64, y as f64)))
            .collect();
        let title = format!("Lab form vs {} (r = {:.3})", a.form, a.report.r);
        let svg = scatter_svg(&Scatter {
            title: &title,
            x_label: "lab form score",
            y_label: &format!("{} score", a.form),
            points: &pts,
            identity_line: true,
        });
        write_text(&rec.output(&format!("scatter_{}.svg", a.form)), &svg)?;
    }
    let panels = [
        ("scatter_simulator_accuracy.svg", "Simulated vs observed accuracy", "observed accuracy", "simulated accuracy", 1, 2, true),
        ("scatter_simulator_median_rt.svg", "Simulated vs observed median RT (ms)", "observed median RT", "simulated median RT", 3, 4, true),
        ("scatter_fk_median_rt.svg", "Flesch-Kincaid grade vs observed median RT (ms)", "Flesch-Kincaid grade", "observed median RT", 0, 3, false),
    ];
    for (file, title, xl, yl, xi, yi, identity) in panels {
        let pts: Vec<(f64, f64)> = joined.iter().map(|j| (j[xi], j[yi])).collect();
        let svg = scatter_svg(&Scatter {
            title,
            x_label: xl,
            y_label: yl,
            points: &pts,
            identity_line: identity,
        });
        write_text(&rec.output(file), &svg)?;
    }
    Ok(())
}
