//! HTTP batch client for an external (LLM-backed) simulator.
//!
//! Wire protocol: each POST carries a JSON array of `{"id", "prompt"}`
//! objects; the server answers with an array of
//! `{"id", "response": "true"|"false", "rt_ms": number}` or, instead of
//! `rt_ms`, `"rt_bin": "very fast" | ... | "very slow"`. Bin labels are
//! mapped to the fitted binner's representative millisecond values.

use std::collections::BTreeSet;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{render_prompt, ResponseSimulator, RtBin, RtBinner, SimulationDraw, SimulationRequest, SimulatorQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub endpoint: String,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Queries per POST.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_max_in_flight() -> usize {
    8
}
fn default_retries() -> u32 {
    3
}
fn default_batch_size() -> usize {
    16
}
fn default_backoff_ms() -> u64 {
    200
}
fn default_timeout_ms() -> u64 {
    120_000
}

impl ExternalConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ExternalConfig {
            endpoint: endpoint.into(),
            max_in_flight: default_max_in_flight(),
            retries: default_retries(),
            batch_size: default_batch_size(),
            backoff_ms: default_backoff_ms(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExternalError {
    #[error("queries {failed:?} failed after {attempts} attempt(s): {last}")]
    Failed {
        failed: Vec<usize>,
        attempts: u32,
        last: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid client configuration: {0}")]
    Setup(String),
}

#[derive(Debug, Serialize)]
struct WireQuery {
    id: usize,
    prompt: String,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum WireBool {
    Text(String),
    Bool(bool),
}

#[derive(Debug, Deserialize)]
struct WireDraw {
    id: usize,
    response: WireBool,
    #[serde(default)]
    rt_ms: Option<f64>,
    #[serde(default)]
    rt_bin: Option<String>,
}

enum Attempt {
    Done(Vec<(usize, SimulationDraw)>),
    Transient(String),
    Permanent(String),
}

pub struct ExternalClient {
    config: ExternalConfig,
    binner: RtBinner,
    http: reqwest::Client,
}

impl ExternalClient {
    pub fn new(config: ExternalConfig, binner: RtBinner) -> Result<Self, ExternalError> {
        if config.max_in_flight == 0 || config.batch_size == 0 {
            return Err(ExternalError::Setup("max_in_flight and batch_size must be at least 1".into()));
        }
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| ExternalError::Setup(e.to_string()))?;
        Ok(ExternalClient { config, binner, http })
    }

    fn decode(&self, expected: &[usize], body: &[u8]) -> Result<Vec<(usize, SimulationDraw)>, ExternalError> {
        let draws: Vec<WireDraw> =
            serde_json::from_slice(body).map_err(|e| ExternalError::Protocol(format!("bad response body: {e}")))?;
        let got: BTreeSet<usize> = draws.iter().map(|d| d.id).collect();
        let want: BTreeSet<usize> = expected.iter().copied().collect();
        if got != want || draws.len() != expected.len() {
            return Err(ExternalError::Protocol(format!(
                "response ids {got:?} do not match request ids {want:?}"
            )));
        }
        let mut out = Vec::with_capacity(draws.len());
        for d in draws {
            let response = match d.response {
                WireBool::Bool(b) => b,
                WireBool::Text(s) => match s.as_str() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(ExternalError::Protocol(format!("id {}: bad response `{other}`", d.id)));
                    }
                },
            };
            let rt_ms = match (d.rt_ms, d.rt_bin) {
                (Some(ms), None) if ms > 0.0 && ms.is_finite() => ms,
                (None, Some(label)) => {
                    let bin: RtBin = label
                        .parse()
                        .map_err(|_| ExternalError::Protocol(format!("id {}: bad rt_bin `{label}`", d.id)))?;
                    self.binner.representative_ms(bin)
                }
                _ => {
                    return Err(ExternalError::Protocol(format!(
                        "id {}: need exactly one of positive rt_ms or rt_bin",
                        d.id
                    )));
                }
            };
            out.push((d.id, SimulationDraw { response, rt_ms }));
        }
        Ok(out)
    }

    async fn post_once(&self, chunk: &[(usize, String)]) -> Result<Attempt, ExternalError> {
        let body: Vec<WireQuery> = chunk
            .iter()
            .map(|(id, prompt)| WireQuery {
                id: *id,
                prompt: prompt.clone(),
            })
            .collect();
        let resp = match self.http.post(&self.config.endpoint).json(&body).send().await {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Transient(e.to_string())),
        };
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Ok(Attempt::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Ok(Attempt::Permanent(format!("HTTP {status}")));
        }
        let bytes = match resp.bytes().await {
            Ok(b) => b,
            Err(e) => return Ok(Attempt::Transient(e.to_string())),
        };
        let ids: Vec<usize> = chunk.iter().map(|(id, _)| *id).collect();
        self.decode(&ids, &bytes).map(Attempt::Done)
    }

    /// Posts one chunk, retrying transient failures with exponential
    /// backoff. `Ok(Err(..))` carries a chunk that ran out of attempts.
    async fn post_chunk(
        &self,
        chunk: Vec<(usize, String)>,
    ) -> Result<Result<Vec<(usize, SimulationDraw)>, (Vec<usize>, u32, String)>, ExternalError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.post_once(&chunk).await? {
                Attempt::Done(draws) => return Ok(Ok(draws)),
                Attempt::Permanent(msg) => {
                    return Ok(Err((chunk.iter().map(|c| c.0).collect(), attempt + 1, msg)));
                }
                Attempt::Transient(msg) => {
                    debug!(attempt, error = %msg, "transient simulator failure");
                    last = msg;
                    if attempt + 1 < attempts {
                        let delay = self.config.backoff_ms.saturating_mul(1u64 << attempt.min(16));
                        tokio::time::sleep(Duration::from_millis(delay)).await;
                    }
                }
            }
        }
        warn!(error = %last, "simulator retries exhausted");
        Ok(Err((chunk.iter().map(|c| c.0).collect(), attempts, last)))
    }

    /// Submits all queries and returns one draw per query in input order.
    /// At most `max_in_flight` POSTs are outstanding at once.
    pub async fn submit_batch(&self, queries: &[SimulatorQuery]) -> Result<Vec<SimulationDraw>, ExternalError> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let prompts: Vec<(usize, String)> = queries.iter().map(render_prompt).enumerate().collect();
        let chunks: Vec<Vec<(usize, String)>> = prompts.chunks(self.config.batch_size).map(|c| c.to_vec()).collect();
        let results: Vec<_> = stream::iter(chunks)
            .map(|chunk| self.post_chunk(chunk))
            .buffer_unordered(self.config.max_in_flight)
            .collect()
            .await;

        let mut slots: Vec<Option<SimulationDraw>> = vec![None; queries.len()];
        let mut failed = Vec::new();
        let mut attempts = 0;
        let mut last = String::new();
        for r in results {
            match r? {
                Ok(draws) => {
                    for (id, d) in draws {
                        slots[id] = Some(d);
                    }
                }
                Err((ids, n, msg)) => {
                    failed.extend(ids);
                    attempts = attempts.max(n);
                    last = msg;
                }
            }
        }
        if !failed.is_empty() {
            failed.sort_unstable();
            return Err(ExternalError::Failed { failed, attempts, last });
        }
        Ok(slots.into_iter().map(|d| d.expect("every id answered")).collect())
    }
}

/// Blocking adapter so the HTTP client can stand in wherever a
/// [`ResponseSimulator`] is expected.
pub struct ExternalSimulator {
    client: ExternalClient,
}

impl ExternalSimulator {
    pub fn new(config: ExternalConfig, binner: RtBinner) -> Result<Self, ExternalError> {
        Ok(ExternalSimulator {
            client: ExternalClient::new(config, binner)?,
        })
    }
}

impl ResponseSimulator for ExternalSimulator {
    fn simulate(&self, requests: &[SimulationRequest], _seed: u64) -> crate::Result<Vec<SimulationDraw>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let queries: Vec<SimulatorQuery> = requests.iter().map(|r| r.query.clone()).collect();
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(|e| ExternalError::Setup(e.to_string()))?;
        Ok(rt.block_on(self.client.submit_batch(&queries))?)
    }
}
