//! Loopback HTTP API consumed by the companion UI and scripts.
//!
//! Every `/v1` route requires `Authorization: Bearer <token>`, where the
//! token is read from a local file. The notification stream also accepts
//! `?token=` since browsers cannot set headers on an `EventSource`.
//! Calls that may reach the language model or the embedder run on the
//! blocking pool so status and feed requests are never queued behind them.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};
use tower_http::services::ServeDir;

use tether_core::config::Settings;
use tether_core::notifier::Notification;
use tether_core::rag::reference_doc_id;
use tether_core::service::{ServiceError, Tether};
use tether_core::store::ChatMessage;

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

#[derive(Clone)]
pub struct AppState {
    tether: Arc<Tether>,
    token: Arc<str>,
    feed: broadcast::Sender<Notification>,
    shutdown: watch::Receiver<bool>,
}

impl AppState {
    /// Hooks the broadcast feed into `tether`'s deliveries.
    pub fn new(tether: Arc<Tether>, token: String, shutdown: watch::Receiver<bool>) -> Self {
        let (feed, _) = broadcast::channel(256);
        let tx = feed.clone();
        tether.on_delivery(Box::new(move |n| {
            // no subscribers is fine; the feed endpoint has the backlog
            let _ = tx.send(n.clone());
        }));
        AppState {
            tether,
            token: token.into(),
            feed,
            shutdown,
        }
    }

    pub fn tether(&self) -> &Arc<Tether> {
        &self.tether
    }
}

/// Error body of every failed request.
#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    /// Set on `LLM_UNAVAILABLE` so the client can retry the stored message.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_message_id: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            user_message_id: None,
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "BAD_TEXT" | "INVALID_SETTINGS" | "BAD_PARAMS" | "BAD_REQUEST" => StatusCode::UNPROCESSABLE_ENTITY,
        "LLM_UNAVAILABLE" | "EMBED_FAILED" => StatusCode::SERVICE_UNAVAILABLE,
        "NOT_FOUND" => StatusCode::NOT_FOUND,
        "FEATURE_DISABLED" | "DUPLICATE_IN_FLIGHT" => StatusCode::CONFLICT,
        "UNAUTHORIZED" => StatusCode::UNAUTHORIZED,
        "STORE_FULL" => StatusCode::INSUFFICIENT_STORAGE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = e.code();
        let user_message_id = match &e {
            ServiceError::LlmUnavailable { user_message_id, .. } => *user_message_id,
            _ => None,
        };
        ApiError {
            status: status_for(code),
            code,
            message: e.to_string(),
            user_message_id,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

pub fn router(state: AppState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/v1/chat/messages", post(post_message).get(list_messages))
        .route("/v1/status", get(status))
        .route("/v1/capabilities", get(capabilities))
        .route("/v1/notifications", get(notifications))
        .route("/v1/notifications/stream", get(stream))
        .route("/v1/settings", get(get_settings).put(put_settings))
        .route("/v1/documents", post(post_document))
        .route("/v1/gamification", get(gamification))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until `shutdown` turns true; open streams end at the same time.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    mut shutdown: watch::Receiver<bool>,
) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            let _ = shutdown.wait_for(|&stop| stop).await;
        })
        .await
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::to_string);
    let query = Query::<TokenQuery>::try_from_uri(req.uri())
        .ok()
        .and_then(|q| q.0.token);
    let presented = bearer.or(query);
    if presented
        .as_deref()
        .is_some_and(|t| same(t.as_bytes(), state.token.as_bytes()))
    {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or wrong API token").into_response()
    }
}

fn same(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn parse<T: DeserializeOwned>(body: &[u8], code: &'static str) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, e.to_string()))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewMessage {
    text: String,
    #[serde(default)]
    retry_of: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatReply {
    pub user_message_id: u64,
    pub reply: ChatMessage,
}

async fn post_message(State(s): State<AppState>, body: Bytes) -> Result<Json<ChatReply>, ApiError> {
    let msg: NewMessage = parse(&body, "BAD_TEXT")?;
    let tether = Arc::clone(&s.tether);
    let out = blocking(move || tether.chat(&msg.text, msg.retry_of)).await?;
    Ok(Json(ChatReply {
        user_message_id: out.user_message_id,
        reply: out.reply,
    }))
}

#[derive(Deserialize)]
struct Page {
    limit: Option<usize>,
    before_id: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessagePage {
    /// Oldest first.
    pub messages: Vec<ChatMessage>,
}

async fn list_messages(State(s): State<AppState>, Query(page): Query<Page>) -> Json<MessagePage> {
    let limit = page.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let mut messages = s.tether.store().list_messages(limit, page.before_id);
    messages.reverse();
    Json(MessagePage { messages })
}

async fn status(State(s): State<AppState>) -> Response {
    Json(s.tether.status()).into_response()
}

async fn capabilities(State(s): State<AppState>) -> Response {
    Json(s.tether.capabilities()).into_response()
}

#[derive(Deserialize)]
struct Since {
    since: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NotificationPage {
    pub notifications: Vec<Notification>,
}

async fn notifications(State(s): State<AppState>, Query(q): Query<Since>) -> Json<NotificationPage> {
    Json(NotificationPage {
        notifications: s.tether.feed_after_id(q.since.unwrap_or(0)),
    })
}

struct Cursor {
    tether: Arc<Tether>,
    rx: broadcast::Receiver<Notification>,
    shutdown: watch::Receiver<bool>,
    pending: VecDeque<Notification>,
    last: u64,
}

impl Cursor {
    async fn next(mut self) -> Option<(Result<Event, Infallible>, Cursor)> {
        loop {
            while let Some(n) = self.pending.pop_front() {
                // the backlog and the live channel can overlap
                if n.id <= self.last {
                    continue;
                }
                self.last = n.id;
                let event = Event::default()
                    .id(n.id.to_string())
                    .event("notification")
                    .json_data(&n)
                    .expect("notification serializes");
                return Some((Ok(event), self));
            }
            tokio::select! {
                _ = self.shutdown.wait_for(|&stop| stop) => return None,
                msg = self.rx.recv() => match msg {
                    Ok(n) => self.pending.push_back(n),
                    Err(broadcast::error::RecvError::Lagged(_)) => {
                        self.pending.extend(self.tether.feed_after_id(self.last));
                    }
                    Err(broadcast::error::RecvError::Closed) => return None,
                },
            }
        }
    }
}

async fn stream(
    State(s): State<AppState>,
    Query(q): Query<Since>,
    headers: HeaderMap,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok());
    let since = q.since.or(resume).unwrap_or(0);
    // subscribe before reading the backlog so nothing falls in between
    let rx = s.feed.subscribe();
    let cursor = Cursor {
        pending: s.tether.feed_after_id(since).into(),
        tether: Arc::clone(&s.tether),
        rx,
        shutdown: s.shutdown.clone(),
        last: since,
    };
    Sse::new(futures::stream::unfold(cursor, Cursor::next)).keep_alive(KeepAlive::default())
}

async fn get_settings(State(s): State<AppState>) -> Json<Settings> {
    Json(s.tether.settings())
}

async fn put_settings(State(s): State<AppState>, body: Bytes) -> Result<Json<Settings>, ApiError> {
    let settings: Settings = parse(&body, "INVALID_SETTINGS")?;
    let tether = Arc::clone(&s.tether);
    Ok(Json(blocking(move || tether.update_settings(&settings)).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewDocument {
    title: String,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Indexed {
    pub doc_id: String,
    pub chunks_indexed: usize,
}

async fn post_document(State(s): State<AppState>, body: Bytes) -> Result<Json<Indexed>, ApiError> {
    let doc: NewDocument = parse(&body, "BAD_TEXT")?;
    let tether = Arc::clone(&s.tether);
    let doc_id = reference_doc_id(&doc.title);
    let chunks_indexed = blocking(move || tether.add_document(&doc.title, &doc.text)).await?;
    Ok(Json(Indexed { doc_id, chunks_indexed }))
}

async fn gamification(State(s): State<AppState>) -> Response {
    Json(s.tether.gamification()).into_response()
}
