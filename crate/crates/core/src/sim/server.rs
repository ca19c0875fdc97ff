//! HTTP front end for the simulator.
//!
//! Routes:
//!
//! * `POST /v1/chat/completions`: chat-completions request, simulated reply.
//! * `POST /_sim/regime`: body is a regime in TOML; replaces the active one.
//! * `GET /_sim/emissions`: emission log as JSONL.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::engine::{parse_request_body, SimRequest, Simulator};
use super::regime::RegimeSpec;
use super::SimError;
use crate::probe::{ACCOUNT_HEADER, DEFAULT_PATH, REGION_HEADER};

pub const REGIME_PATH: &str = "/_sim/regime";
pub const EMISSIONS_PATH: &str = "/_sim/emissions";

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Artificial delay before each completion reply.
    pub response_delay: Duration,
    /// When set, completions require `Authorization: Bearer <token>`.
    pub require_token: Option<String>,
}

struct AppState {
    sim: Arc<Simulator>,
    opts: ServeOptions,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

/// A running simulator service. Dropping the handle stops it.
pub struct SimHandle {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl SimHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL, e.g. `http://127.0.0.1:41234/`.
    pub fn base_url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub fn simulator(&self) -> &Arc<Simulator> {
        &self.state.sim
    }

    /// Largest number of completion requests observed in progress at once.
    pub fn peak_in_flight(&self) -> usize {
        self.state.peak_in_flight.load(Ordering::SeqCst)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }

    /// Blocks until the server stops.
    pub async fn wait(mut self) {
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for SimHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
pub async fn serve(sim: Arc<Simulator>, addr: &str, opts: ServeOptions) -> Result<SimHandle, SimError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| SimError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let local = listener.local_addr().map_err(|source| SimError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let state = Arc::new(AppState {
        sim,
        opts,
        in_flight: AtomicUsize::new(0),
        peak_in_flight: AtomicUsize::new(0),
    });
    let app = Router::new()
        .route(DEFAULT_PATH, post(completions))
        .route(REGIME_PATH, post(set_regime))
        .route(EMISSIONS_PATH, get(emissions))
        .with_state(state.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            tracing::error!("simulator server stopped: {e}");
        }
    });
    Ok(SimHandle {
        addr: local,
        state,
        shutdown: Some(tx),
        task: Some(task),
    })
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn completions(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    let _guard = InFlight(&state.in_flight);
    state.peak_in_flight.fetch_max(now, Ordering::SeqCst);

    if let Some(token) = &state.opts.require_token {
        let expected = format!("Bearer {token}");
        let presented = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if presented != Some(expected.as_str()) {
            return (StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    let value: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return (StatusCode::BAD_REQUEST, format!("invalid json: {e}")).into_response(),
    };
    let Some((model, prompt, seed)) = parse_request_body(&value) else {
        return (StatusCode::BAD_REQUEST, "expected model, messages and seed").into_response();
    };
    if !state.opts.response_delay.is_zero() {
        tokio::time::sleep(state.opts.response_delay).await;
    }
    let tag = |name: &str| headers.get(name).and_then(|v| v.to_str().ok());
    let reply = state.sim.handle(&SimRequest {
        model,
        prompt,
        seed,
        account_tag: tag(ACCOUNT_HEADER),
        region_tag: tag(REGION_HEADER),
    });
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], reply.body).into_response()
}

async fn set_regime(State(state): State<Arc<AppState>>, body: String) -> Response {
    match RegimeSpec::from_toml(&body).and_then(|spec| state.sim.set_regime(spec)) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    }
}

async fn emissions(State(state): State<Arc<AppState>>) -> Response {
    let mut out = Vec::new();
    match state.sim.write_emissions_jsonl(&mut out) {
        Ok(()) => ([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}
