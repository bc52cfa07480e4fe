//! Generative reference simulator.
//!
//! Correctness follows a 2PL kernel, `P(correct) = 1 / (1 + exp(-a (theta - b)))`.
//! Response times are lognormal:
//! `rt = exp(mu + w * words + s + sigma * z)`, `z ~ N(0, 1)`.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ResponseSimulator, SimulationDraw, SimulationRequest};
use crate::error::{Error, Result};
use crate::item_bank::{Item, ResponseRow};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    /// Discrimination `a > 0`.
    pub discrimination: f64,
    /// Difficulty `b`.
    pub difficulty: f64,
    /// Base log response time `mu` (log milliseconds).
    pub base_log_rt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticipantParams {
    pub ability: f64,
    /// Additive log-RT offset; negative is faster.
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtModel {
    /// Log-RT increase per word (`w >= 0`).
    pub per_word_log_rt: f64,
    /// Lognormal noise scale (`sigma > 0`).
    pub noise_sd: f64,
}

impl RtModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.per_word_log_rt >= 0.0) || !(self.noise_sd > 0.0) {
            return Err(Error::invalid(format!("invalid RT model {self:?}")));
        }
        Ok(())
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// 2PL probability that a participant with `ability` answers correctly.
pub fn p_correct(item: &ItemParams, ability: f64) -> f64 {
    logistic(item.discrimination * (ability - item.difficulty))
}

/// One draw for one participant on one item. `noise_sd = 0` is allowed here
/// and gives the deterministic median response time.
pub fn reference_simulate(
    item: &ItemParams,
    truth: bool,
    word_count: usize,
    participant: &ParticipantParams,
    rt: &RtModel,
    rng: &mut impl Rng,
) -> SimulationDraw {
    let correct = rng.random::<f64>() < p_correct(item, participant.ability);
    let z: f64 = rng.sample(StandardNormal);
    let log_rt = item.base_log_rt + rt.per_word_log_rt * word_count as f64 + participant.speed + rt.noise_sd * z;
    SimulationDraw {
        response: if correct { truth } else { !truth },
        rt_ms: log_rt.exp(),
    }
}

#[derive(Debug, Clone)]
struct KnownItem {
    params: ItemParams,
    truth: bool,
    word_count: usize,
}

/// Reference simulator with planted item and participant parameters. It
/// ignores the few-shot context and looks participants up by id.
#[derive(Debug, Clone)]
pub struct ReferenceSimulator {
    items: HashMap<String, KnownItem>,
    participants: HashMap<String, ParticipantParams>,
    rt: RtModel,
}

impl ReferenceSimulator {
    pub fn new(rt: RtModel) -> Result<Self> {
        rt.validate()?;
        Ok(ReferenceSimulator {
            items: HashMap::new(),
            participants: HashMap::new(),
            rt,
        })
    }

    pub fn add_item(&mut self, item: &Item, params: ItemParams) -> Result<()> {
        if !(params.discrimination > 0.0) {
            return Err(Error::invalid(format!(
                "item `{}`: discrimination must be positive",
                item.id
            )));
        }
        self.items.insert(
            item.id.clone(),
            KnownItem {
                params,
                truth: item.truth,
                word_count: item.word_count,
            },
        );
        Ok(())
    }

    pub fn add_participant(&mut self, id: impl Into<String>, params: ParticipantParams) {
        self.participants.insert(id.into(), params);
    }

    pub fn rt_model(&self) -> RtModel {
        self.rt
    }

    pub fn item_params(&self, id: &str) -> Option<ItemParams> {
        self.items.get(id).map(|k| k.params)
    }

    pub fn participant_params(&self, id: &str) -> Option<ParticipantParams> {
        self.participants.get(id).copied()
    }

    fn draw(&self, participant_id: &str, item_id: &str, rng: &mut impl Rng) -> Result<SimulationDraw> {
        let item = self.items.get(item_id).ok_or_else(|| Error::UnknownItem {
            item_id: item_id.to_string(),
            line: 0,
        })?;
        let p = self
            .participants
            .get(participant_id)
            .ok_or_else(|| Error::invalid(format!("no parameters for participant `{participant_id}`")))?;
        Ok(reference_simulate(&item.params, item.truth, item.word_count, p, &self.rt, rng))
    }

    /// Administers `form` in order to one participant until the cumulative
    /// response time would exceed `time_limit_ms`.
    pub fn administer(
        &self,
        participant_id: &str,
        form: &[&Item],
        time_limit_ms: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<ResponseRow>> {
        let mut elapsed = 0.0;
        let mut rows = Vec::new();
        for item in form {
            let d = self.draw(participant_id, &item.id, rng)?;
            elapsed += d.rt_ms;
            if elapsed > time_limit_ms {
                break;
            }
            rows.push(ResponseRow {
                participant_id: participant_id.to_string(),
                item_id: item.id.clone(),
                response: d.response,
                rt_ms: d.rt_ms,
                grade: None,
            });
        }
        Ok(rows)
    }
}

impl ResponseSimulator for ReferenceSimulator {
    fn simulate(&self, requests: &[SimulationRequest], seed: u64) -> Result<Vec<SimulationDraw>> {
        requests
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let mut rng = seed::rng(seed::derive(seed, k as u64));
                self.draw(&r.participant_id, &r.item_id, &mut rng)
            })
            .collect()
    }
}
