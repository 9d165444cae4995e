//! HTTP front for the hub. Every route moves bytes into [`Hub::handle_json`]
//! and back, adding the processing-time header and one log line.
//!
//! Besides the single-process deployment, the plan and dialogue services
//! can run as their own processes with a thin hub in front that calls them
//! over HTTP ([`remote_router`]).

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Query, RawQuery, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use cair_core::hub::{
    decode, encode, merge_replies, DialogueRequest, Hub, HubError, HubRequest, HubResponse, PlanReply, PlanRequest,
    Route, API_PREFIX, PROCESSING_HEADER,
};
use serde::Deserialize;
use tracing::info;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    /// Hub, plan and dialogue services in one process.
    All,
    Plan,
    Dialogue,
}

#[derive(Debug, Deserialize)]
struct CultureQuery {
    culture: Option<String>,
    seed: Option<u64>,
}

fn path(route: &str) -> String {
    format!("{API_PREFIX}/{route}")
}

fn respond(status: u16, body: Vec<u8>, processing_ms: f64) -> Response {
    let mut response = (
        StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        body,
    )
        .into_response();
    response.headers_mut().insert(
        PROCESSING_HEADER,
        HeaderValue::from_str(&format!("{processing_ms:.3}")).expect("a float is a valid header value"),
    );
    response
}

/// Capacity settings for a local deployment. With `max_concurrent` set,
/// extra requests wait for a slot; that wait is queueing, not processing.
/// `min_service` pads each request to a minimum service time, which lets a
/// fast machine stand in for a slower host.
#[derive(Debug, Clone, Default)]
pub struct Limits {
    pub max_concurrent: Option<usize>,
    pub min_service: Duration,
}

#[derive(Clone)]
struct Local {
    hub: Arc<Hub>,
    slots: Option<Arc<tokio::sync::Semaphore>>,
    min_service: Duration,
}

async fn serve_local(local: &Local, route: Route<'_>, body: &[u8]) -> Response {
    let _slot = match &local.slots {
        Some(s) => Some(s.acquire().await.expect("semaphore is never closed")),
        None => None,
    };
    let started = Instant::now();
    let mut reply = local.hub.handle_json(route, body);
    if let Some(rest) = local.min_service.checked_sub(started.elapsed()) {
        tokio::time::sleep(rest).await;
        reply.processing_ms = started.elapsed().as_secs_f64() * 1000.0;
    }
    info!(
        route = route.name(),
        status = reply.status,
        bytes_in = body.len(),
        bytes_out = reply.body.len(),
        processing_ms = reply.processing_ms,
        intent = reply.intent.as_deref().unwrap_or("-"),
        "request"
    );
    respond(reply.status, reply.body, reply.processing_ms)
}

async fn state_route(State(local): State<Local>, Query(q): Query<CultureQuery>) -> Response {
    serve_local(
        &local,
        Route::State {
            culture: q.culture.as_deref(),
            seed: q.seed,
        },
        b"",
    )
    .await
}

async fn stats_route(State(local): State<Local>, Query(q): Query<CultureQuery>) -> Response {
    let started = Instant::now();
    let culture = q.culture.unwrap_or_else(|| local.hub.default_culture().to_string());
    let body = encode(&local.hub.tree(&culture).stats());
    respond(200, body, started.elapsed().as_secs_f64() * 1000.0)
}

async fn hub_route(State(local): State<Local>, body: Bytes) -> Response {
    serve_local(&local, Route::Hub, &body).await
}

async fn plan_route(State(local): State<Local>, body: Bytes) -> Response {
    serve_local(&local, Route::Plan, &body).await
}

async fn dialogue_route(State(local): State<Local>, body: Bytes) -> Response {
    serve_local(&local, Route::Dialogue, &body).await
}

async fn health() -> &'static str {
    "ok"
}

/// Routes served by an in-process hub. `Role::Plan` and `Role::Dialogue`
/// mount only their own service.
pub fn local_router(hub: Arc<Hub>, role: Role) -> Router {
    limited_router(hub, role, Limits::default())
}

pub fn limited_router(hub: Arc<Hub>, role: Role, limits: Limits) -> Router {
    let local = Local {
        hub,
        slots: limits.max_concurrent.map(|n| Arc::new(tokio::sync::Semaphore::new(n.max(1)))),
        min_service: limits.min_service,
    };
    let mut router = Router::new().route("/health", get(health));
    if role != Role::Dialogue {
        router = router.route(&path("plan"), post(plan_route));
    }
    if role != Role::Plan {
        router = router
            .route(&path("dialogue"), post(dialogue_route))
            .route(&path("state"), get(state_route))
            .route(&path("tree-stats"), get(stats_route));
    }
    if role == Role::All {
        router = router.route(&path("hub"), post(hub_route));
    }
    router.with_state(local)
}

pub struct Upstreams {
    http: reqwest::Client,
    plan: String,
    dialogue: String,
}

enum UpstreamReply {
    Ok(Vec<u8>),
    /// The service answered with an error status; passed through as is.
    Rejected(u16, Vec<u8>),
}

impl Upstreams {
    pub fn new(plan: &str, dialogue: &str) -> Self {
        Upstreams {
            http: reqwest::Client::new(),
            plan: plan.trim_end_matches('/').to_string(),
            dialogue: dialogue.trim_end_matches('/').to_string(),
        }
    }

    async fn call(&self, request: reqwest::RequestBuilder) -> Result<UpstreamReply, HubError> {
        let response = request.send().await.map_err(|e| HubError::Upstream(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .bytes()
            .await
            .map_err(|e| HubError::Upstream(e.to_string()))?
            .to_vec();
        match status {
            200 => Ok(UpstreamReply::Ok(body)),
            400..=499 => Ok(UpstreamReply::Rejected(status, body)),
            _ => Err(HubError::Upstream(format!("status {status}"))),
        }
    }

    async fn post(&self, base: &str, route: &str, body: Vec<u8>) -> Result<UpstreamReply, HubError> {
        self.call(
            self.http
                .post(format!("{base}{}", path(route)))
                .header(header::CONTENT_TYPE, "application/json")
                .body(body),
        )
        .await
    }

    async fn pipeline(&self, body: &[u8]) -> Result<UpstreamReply, HubError> {
        let request: HubRequest = decode(body)?;
        let plan_body = encode(&PlanRequest {
            client_sentence: request.client_sentence.clone(),
        });
        let plan: PlanReply = match self.post(&self.plan, "plan", plan_body).await? {
            UpstreamReply::Ok(b) => decode(&b).map_err(|e| HubError::Upstream(e.to_string()))?,
            rejected => return Ok(rejected),
        };
        info!(stage = "plan", intent = plan.intent.as_deref().unwrap_or("-"));
        let dialogue_body = encode(&DialogueRequest {
            client_sentence: request.client_sentence,
            client_state: request.client_state,
            kbplan: plan.kbplan.clone(),
            seed: request.seed,
            culture: request.culture,
        });
        let dialogue: HubResponse = match self.post(&self.dialogue, "dialogue", dialogue_body).await? {
            UpstreamReply::Ok(b) => decode(&b).map_err(|e| HubError::Upstream(e.to_string()))?,
            rejected => return Ok(rejected),
        };
        info!(stage = "dialogue", topic = %dialogue.client_state.t);
        Ok(UpstreamReply::Ok(encode(&merge_replies(&plan, dialogue))))
    }
}

fn finish(route: &str, started: Instant, bytes_in: usize, result: Result<UpstreamReply, HubError>) -> Response {
    let (status, body) = match result {
        Ok(UpstreamReply::Ok(b)) => (200, b),
        Ok(UpstreamReply::Rejected(s, b)) => (s, b),
        Err(e) => (e.status(), e.body()),
    };
    let processing_ms = started.elapsed().as_secs_f64() * 1000.0;
    info!(route, status, bytes_in, bytes_out = body.len(), processing_ms, "request");
    respond(status, body, processing_ms)
}

async fn remote_hub(State(up): State<Arc<Upstreams>>, body: Bytes) -> Response {
    let started = Instant::now();
    let result = up.pipeline(&body).await;
    finish("hub", started, body.len(), result)
}

async fn remote_plan(State(up): State<Arc<Upstreams>>, body: Bytes) -> Response {
    let started = Instant::now();
    let result = up.post(&up.plan, "plan", body.to_vec()).await;
    finish("plan", started, body.len(), result)
}

async fn remote_dialogue(State(up): State<Arc<Upstreams>>, body: Bytes) -> Response {
    let started = Instant::now();
    let result = up.post(&up.dialogue, "dialogue", body.to_vec()).await;
    finish("dialogue", started, body.len(), result)
}

async fn remote_get(up: &Upstreams, route: &str, query: Option<String>) -> Response {
    let started = Instant::now();
    let mut url = format!("{}{}", up.dialogue, path(route));
    if let Some(q) = query {
        url = format!("{url}?{q}");
    }
    let result = up.call(up.http.get(url)).await;
    finish(route, started, 0, result)
}

async fn remote_state(State(up): State<Arc<Upstreams>>, RawQuery(q): RawQuery) -> Response {
    remote_get(&up, "state", q).await
}

async fn remote_stats(State(up): State<Arc<Upstreams>>, RawQuery(q): RawQuery) -> Response {
    remote_get(&up, "tree-stats", q).await
}

/// A hub that forwards to separately deployed plan and dialogue services.
/// Their failures surface as 502; their 4xx answers pass through.
pub fn remote_router(upstreams: Upstreams) -> Router {
    Router::new()
        .route("/health", get(health))
        .route(&path("hub"), post(remote_hub))
        .route(&path("plan"), post(remote_plan))
        .route(&path("dialogue"), post(remote_dialogue))
        .route(&path("state"), get(remote_state))
        .route(&path("tree-stats"), get(remote_stats))
        .with_state(Arc::new(upstreams))
}

/// A server running on its own runtime thread; stops when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn start(router: Router, workers: Option<usize>) -> std::io::Result<Self> {
        let mut builder = tokio::runtime::Builder::new_multi_thread();
        builder.enable_all();
        if let Some(w) = workers {
            builder.worker_threads(w.max(1));
        }
        let runtime = builder.build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let _ = axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(BackgroundServer {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
