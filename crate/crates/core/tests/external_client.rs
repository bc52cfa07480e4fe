//! External simulator client against an in-process mock server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use formsmith_core::simulator::external::{ExternalClient, ExternalConfig, ExternalError, ExternalSimulator};
use formsmith_core::simulator::{
    ContextEntry, ResponseSimulator, RtBin, RtBinner, SimulationRequest, SimulatorQuery,
};

#[derive(Clone, Copy)]
enum Behavior {
    /// Answers in reverse order; even ids get `rt_ms`, odd ids an `rt_bin`.
    Reverse,
    /// Fails the first `n` requests with 503.
    FlakyThen(usize),
    AlwaysStatus(u16),
    Garbage,
    /// Sleeps before answering so requests overlap.
    Slow,
}

#[derive(Default)]
struct Counters {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

#[derive(Clone)]
struct Mock {
    behavior: Behavior,
    counters: Arc<Counters>,
}

fn answer(queries: &[Value], reverse: bool) -> Vec<Value> {
    let bins = ["very fast", "fast", "medium", "slow", "very slow"];
    let mut out: Vec<Value> = queries
        .iter()
        .map(|q| {
            let id = q["id"].as_u64().unwrap();
            let prompt = q["prompt"].as_str().unwrap();
            assert!(prompt.ends_with("Cats can bark."), "{prompt}");
            if id % 2 == 0 {
                json!({"id": id, "response": "true", "rt_ms": 1000.0 + id as f64})
            } else {
                json!({"id": id, "response": false, "rt_bin": bins[(id as usize / 2) % 5]})
            }
        })
        .collect();
    if reverse {
        out.reverse();
    }
    out
}

async fn handle(State(mock): State<Mock>, Json(body): Json<Vec<Value>>) -> Response {
    let c = &mock.counters;
    let k = c.requests.fetch_add(1, Ordering::SeqCst);
    let now = c.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    c.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let resp = match mock.behavior {
        Behavior::Reverse => Json(answer(&body, true)).into_response(),
        Behavior::FlakyThen(n) if k < n => StatusCode::SERVICE_UNAVAILABLE.into_response(),
        Behavior::FlakyThen(_) => Json(answer(&body, false)).into_response(),
        Behavior::AlwaysStatus(s) => StatusCode::from_u16(s).unwrap().into_response(),
        Behavior::Garbage => "not json".into_response(),
        Behavior::Slow => {
            tokio::time::sleep(Duration::from_millis(40)).await;
            Json(answer(&body, false)).into_response()
        }
    };
    c.in_flight.fetch_sub(1, Ordering::SeqCst);
    resp
}

async fn serve(behavior: Behavior) -> (String, Arc<Counters>) {
    let counters = Arc::new(Counters::default());
    let app = Router::new().route("/simulate", post(handle)).with_state(Mock {
        behavior,
        counters: counters.clone(),
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/simulate"), counters)
}

fn binner() -> RtBinner {
    RtBinner::new([1000.0, 2000.0, 3000.0, 4000.0]).unwrap()
}

fn queries(n: usize) -> Vec<SimulatorQuery> {
    let ctx = vec![ContextEntry {
        text: "Fish swim.".into(),
        response: true,
        rt_bin: RtBin::Fast,
    }];
    (0..n).map(|_| SimulatorQuery::new(ctx.clone(), "Cats can bark.", 8).unwrap()).collect()
}

fn config(endpoint: String) -> ExternalConfig {
    ExternalConfig {
        batch_size: 4,
        backoff_ms: 1,
        ..ExternalConfig::new(endpoint)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reorders_and_maps_bins() {
    let (url, counters) = serve(Behavior::Reverse).await;
    let client = ExternalClient::new(config(url), binner()).unwrap();
    let draws = client.submit_batch(&queries(10)).await.unwrap();
    assert_eq!(draws.len(), 10);
    assert_eq!(counters.requests.load(Ordering::SeqCst), 3);
    let b = binner();
    for (id, d) in draws.iter().enumerate() {
        if id % 2 == 0 {
            assert!(d.response);
            assert_eq!(d.rt_ms, 1000.0 + id as f64);
        } else {
            assert!(!d.response);
            assert_eq!(d.rt_ms, b.representative_ms(RtBin::ALL[(id / 2) % 5]));
        }
    }
    assert_eq!(draws[1].rt_ms, 500.0);
    assert_eq!(draws[3].rt_ms, 1500.0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn retries_transient_failures() {
    let (url, counters) = serve(Behavior::FlakyThen(2)).await;
    let client = ExternalClient::new(ExternalConfig { batch_size: 16, ..config(url) }, binner()).unwrap();
    let draws = client.submit_batch(&queries(5)).await.unwrap();
    assert_eq!(draws.len(), 5);
    assert_eq!(counters.requests.load(Ordering::SeqCst), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn exhausted_retries_name_failed_queries() {
    let (url, counters) = serve(Behavior::AlwaysStatus(500)).await;
    let client = ExternalClient::new(ExternalConfig { retries: 2, ..config(url) }, binner()).unwrap();
    match client.submit_batch(&queries(6)).await {
        Err(ExternalError::Failed { failed, attempts, .. }) => {
            assert_eq!(failed, (0..6).collect::<Vec<_>>());
            assert_eq!(attempts, 3);
        }
        other => panic!("{other:?}"),
    }
    // two chunks, three attempts each
    assert_eq!(counters.requests.load(Ordering::SeqCst), 6);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn client_errors_are_not_retried() {
    let (url, counters) = serve(Behavior::AlwaysStatus(400)).await;
    let client = ExternalClient::new(config(url), binner()).unwrap();
    let err = client.submit_batch(&queries(2)).await.unwrap_err();
    assert!(matches!(err, ExternalError::Failed { attempts: 1, .. }), "{err:?}");
    assert_eq!(counters.requests.load(Ordering::SeqCst), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn malformed_body_is_a_protocol_error() {
    let (url, _) = serve(Behavior::Garbage).await;
    let client = ExternalClient::new(config(url), binner()).unwrap();
    assert!(matches!(client.submit_batch(&queries(3)).await, Err(ExternalError::Protocol(_))));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrency_is_bounded() {
    let (url, counters) = serve(Behavior::Slow).await;
    let client = ExternalClient::new(
        ExternalConfig {
            batch_size: 1,
            max_in_flight: 3,
            ..config(url)
        },
        binner(),
    )
    .unwrap();
    let draws = client.submit_batch(&queries(12)).await.unwrap();
    assert_eq!(draws.len(), 12);
    let peak = counters.max_in_flight.load(Ordering::SeqCst);
    assert!((2..=3).contains(&peak), "peak {peak}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn empty_batch_makes_no_requests() {
    let (url, counters) = serve(Behavior::Reverse).await;
    let client = ExternalClient::new(config(url), binner()).unwrap();
    assert!(client.submit_batch(&[]).await.unwrap().is_empty());
    assert_eq!(counters.requests.load(Ordering::SeqCst), 0);
}

#[test]
fn blocking_adapter_runs_outside_a_runtime() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (url, _) = rt.block_on(serve(Behavior::Reverse));
    let sim = ExternalSimulator::new(config(url), binner()).unwrap();
    let requests: Vec<SimulationRequest> = queries(5)
        .into_iter()
        .enumerate()
        .map(|(k, query)| SimulationRequest {
            participant_id: format!("p{k}"),
            item_id: "g1".into(),
            query,
        })
        .collect();
    let draws = sim.simulate(&requests, 0).unwrap();
    assert_eq!(draws.len(), 5);
    assert!(draws[0].response);
    drop(rt);
}
