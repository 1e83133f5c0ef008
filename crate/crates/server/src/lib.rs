//! REST and WebSocket control plane over a running [`Engine`].
//!
//! Read endpoints return the engine's current view as JSON. `POST /control`
//! takes a command such as `{"action": "set_threshold", "name": "min_ev",
//! "value": 0.07}` and needs `Authorization: Bearer <token>`. `/ws` streams
//! event frames, starting with a state snapshot.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use swarmdesk_core::control::{CommandKind, ControlCommand, ControlError};
use swarmdesk_core::engine::Engine;
use swarmdesk_core::events::{EventKind, Subscription};
use tokio::net::TcpListener;
use tracing::{debug, info, warn};

/// Static bearer tokens, each mapped to an operator name.
#[derive(Debug, Clone, Default)]
pub struct Auth {
    tokens: Vec<(String, String)>,
    read_requires_token: bool,
}

impl Auth {
    pub fn new(tokens: Vec<(String, String)>, read_requires_token: bool) -> Self {
        Self {
            tokens,
            read_requires_token,
        }
    }

    /// Operator identity for a token, if it is known.
    pub fn identify(&self, token: &str) -> Option<&str> {
        self.tokens
            .iter()
            .find(|(_, t)| !t.is_empty() && t == token)
            .map(|(name, _)| name.as_str())
    }

    fn bearer(headers: &HeaderMap) -> Option<&str> {
        headers
            .get(header::AUTHORIZATION)?
            .to_str()
            .ok()?
            .strip_prefix("Bearer ")
            .map(str::trim)
    }

    fn check(&self, headers: &HeaderMap, query_token: Option<&str>) -> Result<String, ApiError> {
        let token = Self::bearer(headers).or(query_token).ok_or(ApiError::Unauthorized)?;
        self.identify(token).map(str::to_owned).ok_or(ApiError::Unauthorized)
    }

    fn check_read(&self, headers: &HeaderMap, query_token: Option<&str>) -> Result<(), ApiError> {
        if self.read_requires_token {
            self.check(headers, query_token)?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum ApiError {
    Unauthorized,
    BadRequest(String),
    Unavailable(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::Unauthorized => (StatusCode::UNAUTHORIZED, "missing or invalid token".to_owned()),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, m),
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

impl From<ControlError> for ApiError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Storage(_) => ApiError::Unavailable(e.to_string()),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub auth: Arc<Auth>,
}

#[derive(Debug, Default, Deserialize)]
pub struct TokenQuery {
    token: Option<String>,
}

type ApiResult = Result<Json<Value>, ApiError>;

fn view<T: serde::Serialize>(v: T) -> ApiResult {
    Ok(Json(serde_json::to_value(v).expect("views serialize")))
}

async fn markets(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> ApiResult {
    s.auth.check_read(&headers, q.token.as_deref())?;
    view(s.engine.markets())
}

async fn consensus(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> ApiResult {
    s.auth.check_read(&headers, q.token.as_deref())?;
    view(s.engine.consensus())
}

async fn signals(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> ApiResult {
    s.auth.check_read(&headers, q.token.as_deref())?;
    view(s.engine.signals())
}

async fn trades(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> ApiResult {
    s.auth.check_read(&headers, q.token.as_deref())?;
    view(s.engine.trades())
}

async fn pnl(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> ApiResult {
    s.auth.check_read(&headers, q.token.as_deref())?;
    view(s.engine.pnl())
}

async fn agents(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> ApiResult {
    s.auth.check_read(&headers, q.token.as_deref())?;
    view(s.engine.agents())
}

async fn risk(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> ApiResult {
    s.auth.check_read(&headers, q.token.as_deref())?;
    view(s.engine.risk())
}

async fn cycles(State(s): State<AppState>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> ApiResult {
    s.auth.check_read(&headers, q.token.as_deref())?;
    view(s.engine.reports())
}

async fn control(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let operator = s.auth.check(&headers, None)?;
    let kind: CommandKind =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("invalid command: {e}")))?;
    let now = s.engine.now();
    let cmd = ControlCommand {
        kind,
        issued_by: operator,
        issued_at: now,
    };
    let result = s.engine.controller().apply(cmd);
    match &result {
        Ok(_) => {
            // acknowledged state goes out to every dashboard
            s.engine.bus().publish(EventKind::RiskState, json!(s.engine.risk()), now);
        }
        Err(e) => warn!(%e, "control command rejected"),
    }
    view(result?)
}

async fn ws(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
    upgrade: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    s.auth.check_read(&headers, q.token.as_deref())?;
    let sub = s.engine.bus().subscribe(s.engine.now());
    Ok(upgrade.on_upgrade(move |socket| stream(socket, sub)))
}

/// Forwards frames until the client goes away or the bus drops it for
/// falling behind.
async fn stream(mut socket: WebSocket, mut sub: Subscription) {
    let id = sub.id;
    loop {
        tokio::select! {
            frame = sub.next_frame() => {
                let Some(frame) = frame else {
                    debug!(client = id, "subscriber dropped by bus");
                    let _ = socket
                        .send(Message::Close(Some(CloseFrame {
                            code: 1013,
                            reason: "client fell behind".into(),
                        })))
                        .await;
                    return;
                };
                let text = serde_json::to_string(&frame).expect("frames serialize");
                if socket.send(Message::Text(text.into())).await.is_err() {
                    return;
                }
            }
            incoming = socket.recv() => {
                match incoming {
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => {}
                }
            }
        }
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    let srv = &engine.settings().server;
    let auth = Auth::new(srv.tokens.clone(), srv.read_requires_token);
    router_with_auth(engine, auth)
}

pub fn router_with_auth(engine: Arc<Engine>, auth: Auth) -> Router {
    Router::new()
        .route("/markets", get(markets))
        .route("/consensus", get(consensus))
        .route("/signals", get(signals))
        .route("/trades", get(trades))
        .route("/pnl", get(pnl))
        .route("/agents", get(agents))
        .route("/risk", get(risk))
        .route("/cycles", get(cycles))
        .route("/control", post(control))
        .route("/ws", get(ws))
        .with_state(AppState {
            engine,
            auth: Arc::new(auth),
        })
}

/// Binds `addr` and serves until `shutdown` resolves. Returns the bound
/// address through `on_bound` so callers can use port 0.
pub async fn serve(
    engine: Arc<Engine>,
    addr: &str,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if engine.settings().server.tokens.is_empty() {
        warn!("API_TOKEN is empty; POST /control will reject every request");
    }
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    info!(%local, "control plane listening");
    on_bound(local);
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(shutdown)
        .await
}
