//! Synthetic item banks drawn from the reference simulator's generative
//! model, with planted ambiguous items, near-duplicates and guessers.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use formsmith_core::item_bank::{self, FileFormat, Item, ResponseRow, Source};
use formsmith_core::seed::{self, StageRng};
use formsmith_core::simulator::reference::{ItemParams, ParticipantParams, ReferenceSimulator, RtModel};
use formsmith_core::{Error, Result};

use crate::config::SynthConfig;
use crate::files;
use crate::manifest::{RunManifest, StageRecorder};
use crate::Context;

/// Log-RT offset of planted guessers; puts their median response time well
/// under the guesser threshold.
pub const GUESSER_SPEED: f64 = -1.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthItem {
    pub item_id: String,
    pub source: Source,
    pub truth: bool,
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub planted_ambiguous: bool,
    pub duplicate_of: Option<String>,
}

impl TruthItem {
    pub fn params(&self) -> ItemParams {
        ItemParams {
            discrimination: self.a,
            difficulty: self.b,
            base_log_rt: self.mu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthParticipant {
    pub participant_id: String,
    pub ability: f64,
    pub speed: f64,
    pub guesser: bool,
}

impl TruthParticipant {
    pub fn params(&self) -> ParticipantParams {
        ParticipantParams {
            ability: self.ability,
            speed: self.speed,
        }
    }
}

/// Population and response-time model shared by every stage that simulates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthModel {
    pub rt: RtModel,
    pub ability_sd: f64,
    pub speed_sd: f64,
}

impl TruthModel {
    /// Draws a fresh non-guessing participant.
    pub fn sample_participant(&self, rng: &mut impl Rng) -> ParticipantParams {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        ParticipantParams {
            ability: self.ability_sd * z1,
            speed: self.speed_sd * z2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub items: Vec<Item>,
    pub lab_form: Vec<String>,
    pub truth_items: Vec<TruthItem>,
    pub participants: Vec<TruthParticipant>,
    pub responses: Vec<ResponseRow>,
    pub model: TruthModel,
}

impl SynthData {
    pub fn simulator(&self) -> Result<ReferenceSimulator> {
        build_simulator(&self.items, &self.truth_items, &self.participants, &self.model)
    }
}

pub fn build_simulator(
    items: &[Item],
    truth: &[TruthItem],
    participants: &[TruthParticipant],
    model: &TruthModel,
) -> Result<ReferenceSimulator> {
    let mut sim = ReferenceSimulator::new(model.rt)?;
    let by_id: std::collections::HashMap<&str, &TruthItem> = truth.iter().map(|t| (t.item_id.as_str(), t)).collect();
    for item in items {
        if let Some(t) = by_id.get(item.id.as_str()) {
            sim.add_item(item, t.params())?;
        }
    }
    for p in participants {
        sim.add_participant(p.participant_id.clone(), p.params());
    }
    Ok(sim)
}

const DETERMINERS: &[&str] = &["The", "A", "My", "Our", "That", "This"];
const ADJECTIVES: &[&str] = &[
    "small", "happy", "yellow", "heavy", "quiet", "wooden", "hungry", "enormous", "gentle", "purple", "famous",
    "little", "shiny", "curious", "ancient", "sleepy", "beautiful", "cold", "busy", "tiny",
];
const NOUNS: &[&str] = &[
    "dog", "cat", "teacher", "river", "apple", "elephant", "library", "bicycle", "mountain", "baby", "farmer",
    "butterfly", "kitchen", "window", "doctor", "ocean", "pencil", "garden", "umbrella", "tomato", "rabbit",
    "computer", "airplane", "sandwich", "tiger", "bottle", "family", "potato", "violin", "neighbor",
];
const VERBS: &[&str] = &[
    "likes", "eats", "reads", "carries", "paints", "follows", "wants", "remembers", "cleans", "watches", "visits",
];
const INTRANSITIVE: &[&str] = &["sleeps", "runs", "swims", "sings", "waits", "smiles", "flies", "laughs"];
const TAILS: &[&str] = &[
    "every morning", "in the park", "after school", "with great care", "on sunny days", "before dinner",
    "at the station", "during the winter", "near the old bridge", "without any help", "very slowly",
    "in a hurry", "under the table", "for a long time",
];
const ADVERBS: &[&str] = &["today", "again", "quietly", "often", "outside", "sometimes"];

fn pick<'a>(rng: &mut impl Rng, list: &[&'a str]) -> &'a str {
    list[rng.random_range(0..list.len())]
}

/// A short declarative sentence of exactly `target >= 3` words.
fn sentence(rng: &mut impl Rng, target: usize) -> String {
    let det = pick(rng, DETERMINERS);
    let mut words: Vec<&str> = if target >= 5 {
        vec![det, pick(rng, NOUNS), pick(rng, VERBS), "the", pick(rng, NOUNS)]
    } else {
        vec![det, pick(rng, NOUNS), pick(rng, INTRANSITIVE)]
    };
    // positions of nouns that can still take an adjective
    let mut open_nouns: Vec<usize> = if target >= 5 { vec![1, 4] } else { vec![1] };
    while words.len() < target {
        let room = target - words.len();
        let tails: Vec<&str> = TAILS
            .iter()
            .copied()
            .filter(|t| t.split_whitespace().count() <= room)
            .collect();
        if !tails.is_empty() && (room >= 2 || open_nouns.is_empty()) && rng.random_bool(0.7) {
            words.extend(pick(rng, &tails).split_whitespace());
        } else if let Some(pos) = open_nouns.pop() {
            words.insert(pos, pick(rng, ADJECTIVES));
        } else {
            words.push(pick(rng, ADVERBS));
        }
    }
    format!("{}.", words.join(" "))
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Indices `0..n` marked with exactly `round(fraction * n)` trues.
fn planted(rng: &mut StageRng, n: usize, fraction: f64) -> Vec<bool> {
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut flags: Vec<bool> = (0..n).map(|i| i < k).collect();
    flags.shuffle(rng);
    flags
}

fn sample_params(cfg: &SynthConfig, ambiguous: bool, rng: &mut StageRng) -> Result<ItemParams> {
    let bad = |e: rand_distr::NormalError| Error::Invalid(e.to_string());
    let (mean, sd) = if ambiguous {
        (cfg.ambiguous_difficulty_mean, cfg.ambiguous_difficulty_sd)
    } else {
        (cfg.clean_difficulty_mean, cfg.clean_difficulty_sd)
    };
    Ok(ItemParams {
        discrimination: rng.random_range(cfg.discrimination_min..=cfg.discrimination_max),
        difficulty: Normal::new(mean, sd).map_err(bad)?.sample(rng),
        base_log_rt: Normal::new(cfg.base_log_rt_mean, cfg.base_log_rt_sd).map_err(bad)?.sample(rng),
    })
}

/// Samples a complete synthetic study.
pub fn generate(cfg: &SynthConfig, master: u64) -> Result<SynthData> {
    if cfg.n_participants == 0 {
        return Err(Error::Config {
            key: "synth.n_participants".into(),
            message: "must be at least 1".into(),
        });
    }
    let mut rng = seed::rng(seed::derive_named(master, "items"));
    let mut items = Vec::new();
    let mut truth_items = Vec::new();

    let lab_ambiguous = planted(&mut rng, cfg.n_lab_items, cfg.lab_ambiguous_fraction);
    for (k, &ambiguous) in lab_ambiguous.iter().enumerate() {
        let id = format!("l{:04}", k + 1);
        let words = rng.random_range(cfg.min_words..=cfg.max_words);
        let truth = rng.random_bool(0.5);
        let item = Item::new(id.clone(), sentence(&mut rng, words), truth, Source::Lab)?
            .with_embedding(unit_vector(&mut rng, cfg.embedding_dim));
        let p = sample_params(cfg, ambiguous, &mut rng)?;
        truth_items.push(TruthItem {
            item_id: id,
            source: Source::Lab,
            truth,
            a: p.discrimination,
            b: p.difficulty,
            mu: p.base_log_rt,
            planted_ambiguous: ambiguous,
            duplicate_of: None,
        });
        items.push(item);
    }

    let gen_ambiguous = planted(&mut rng, cfg.n_generated, cfg.generated_ambiguous_fraction);
    let mut duplicate = planted(&mut rng, cfg.n_generated, cfg.duplicate_fraction);
    duplicate[0] = false;
    let first_gen = items.len();
    for k in 0..cfg.n_generated {
        let id = format!("g{:04}", k + 1);
        if duplicate[k] {
            // near-copy of an earlier original generated item
            let originals: Vec<usize> = (0..k).filter(|&j| !duplicate[j]).collect();
            let src = originals[rng.random_range(0..originals.len())];
            let (src_item, src_truth) = (items[first_gen + src].clone(), truth_items[first_gen + src].clone());
            let base = src_item.embedding.clone().expect("synthetic items carry embeddings");
            let jitter = 0.25 / (cfg.embedding_dim as f64).sqrt();
            let mut e: Vec<f64> = base
                .iter()
                .map(|v| v + jitter * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            e.iter_mut().for_each(|x| *x /= norm);
            items.push(Item::new(id.clone(), src_item.text.clone(), src_item.truth, Source::Generated)?.with_embedding(e));
            truth_items.push(TruthItem {
                item_id: id,
                duplicate_of: Some(src_truth.item_id.clone()),
                ..src_truth
            });
            continue;
        }
        let ambiguous = gen_ambiguous[k];
        let words = rng.random_range(cfg.min_words..=cfg.max_words);
        let truth = rng.random_bool(0.5);
        let item = Item::new(id.clone(), sentence(&mut rng, words), truth, Source::Generated)?
            .with_embedding(unit_vector(&mut rng, cfg.embedding_dim));
        let p = sample_params(cfg, ambiguous, &mut rng)?;
        truth_items.push(TruthItem {
            item_id: id,
            source: Source::Generated,
            truth,
            a: p.discrimination,
            b: p.difficulty,
            mu: p.base_log_rt,
            planted_ambiguous: ambiguous,
            duplicate_of: None,
        });
        items.push(item);
    }

    let model = TruthModel {
        rt: RtModel {
            per_word_log_rt: cfg.per_word_log_rt,
            noise_sd: cfg.noise_sd,
        },
        ability_sd: cfg.ability_sd,
        speed_sd: cfg.speed_sd,
    };
    let mut prng = seed::rng(seed::derive_named(master, "participants"));
    let guessers = planted(&mut prng, cfg.n_participants, cfg.guesser_fraction);
    let participants: Vec<TruthParticipant> = guessers
        .iter()
        .enumerate()
        .map(|(k, &guesser)| {
            let p = model.sample_participant(&mut prng);
            TruthParticipant {
                participant_id: format!("p{:04}", k + 1),
                // a guesser answers near chance on a typical clean item
                ability: if guesser { cfg.clean_difficulty_mean } else { p.ability },
                speed: if guesser { GUESSER_SPEED } else { p.speed },
                guesser,
            }
        })
        .collect();

    let lab_form: Vec<String> = items[..first_gen].iter().map(|i| i.id.clone()).collect();
    let sim = build_simulator(&items, &truth_items, &participants, &model)?;
    let lab_items: Vec<&Item> = items[..first_gen].iter().collect();
    let response_seed = seed::derive_named(master, "responses");
    let mut responses = Vec::new();
    for (k, p) in participants.iter().enumerate() {
        // each lab-study session presents the lab items in a fresh random order
        let mut rng = seed::rng(seed::derive(response_seed, k as u64));
        let mut order = lab_items.clone();
        order.shuffle(&mut rng);
        responses.extend(sim.administer(&p.participant_id, &order, cfg.time_limit_ms, &mut rng)?);
    }

    Ok(SynthData {
        items,
        lab_form,
        truth_items,
        participants,
        responses,
        model,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: e.to_string(),
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// One id per line; blank lines are ignored.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    if !ids.is_empty() {
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn run(ctx: &Context) -> Result<RunManifest> {
    let stage_seed = ctx.stage_seed("synth");
    let data = generate(&ctx.config.synth, stage_seed)?;
    ctx.ensure_out()?;
    let mut rec = StageRecorder::start("synth", &ctx.out);

    let plain: Vec<Item> = data
        .items
        .iter()
        .map(|i| Item {
            embedding: None,
            ..i.clone()
        })
        .collect();
    item_bank::write_items(&rec.output(files::ITEMS), FileFormat::Csv, &plain)?;
    item_bank::write_embeddings(
        &rec.output(files::EMBEDDINGS),
        FileFormat::Csv,
        data.items
            .iter()
            .filter_map(|i| i.embedding.as_deref().map(|e| (i.id.as_str(), e))),
    )?;
    item_bank::write_responses(&rec.output(files::RESPONSES), FileFormat::Csv, &data.responses)?;
    write_id_list(&rec.output(files::LAB_FORM), &data.lab_form)?;
    write_rows(&rec.output(files::TRUTH_ITEMS), &data.truth_items)?;
    write_rows(&rec.output(files::TRUTH_PARTICIPANTS), &data.participants)?;
    write_json(&rec.output(files::TRUTH_MODEL), &data.model)?;
    tracing::info!(
        items = data.items.len(),
        participants = data.participants.len(),
        responses = data.responses.len(),
        "synth done"
    );
    rec.finish(&ctx.config_hash, ctx.seed(), stage_seed)
}
