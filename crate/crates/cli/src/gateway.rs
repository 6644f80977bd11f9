//! HTTP and WebSocket front door for the dashboard.
//!
//! `POST /command` forwards a user command to the bus, `GET /state` reports
//! the consumption service's mode and colours and `GET /ws` streams every
//! message published on the watched bus topics.

use std::future::Future;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hometwin::bus::RecvError;
use hometwin::consumption::{parse_user_command, ServiceStatus};
use hometwin::payload::canonicalize;
use hometwin::{Bus, Subscription};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

const FORWARD_POLL: Duration = Duration::from_millis(100);
const CLIENT_QUEUE: usize = 256;

#[derive(Clone)]
pub struct GatewayState {
    pub bus: Bus,
    pub users_topic: String,
    pub status: Arc<RwLock<ServiceStatus>>,
    /// Bus topics fanned out to WebSocket clients.
    pub ws_topics: Vec<String>,
}

pub fn router(state: GatewayState) -> Router {
    Router::new()
        .route("/command", post(post_command))
        .route("/state", get(get_state))
        .route("/ws", get(ws_upgrade))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: GatewayState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

fn error(status: StatusCode, reason: String) -> Response {
    (status, Json(serde_json::json!({ "error": reason }))).into_response()
}

async fn post_command(State(state): State<GatewayState>, body: String) -> Response {
    if let Err(e) = parse_user_command(&body) {
        return error(StatusCode::BAD_REQUEST, e.reason);
    }
    // Validated above, so this only normalizes the bytes.
    let canonical = match canonicalize(&body) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    match state.bus.publish(&state.users_topic, canonical.clone()) {
        Ok(()) => (
            StatusCode::ACCEPTED,
            [("content-type", "application/json")],
            canonical,
        )
            .into_response(),
        Err(e) => error(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
    }
}

async fn get_state(State(state): State<GatewayState>) -> Json<ServiceStatus> {
    Json(state.status.read().expect("status poisoned").clone())
}

async fn ws_upgrade(State(state): State<GatewayState>, ws: WebSocketUpgrade) -> Response {
    // Subscribe before the handshake completes so nothing published after
    // the 101 response is missed.
    let subs = match state
        .ws_topics
        .iter()
        .map(|t| state.bus.subscribe(t))
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(subs) => subs,
        Err(e) => return error(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
    };
    ws.on_upgrade(move |socket| stream_to_client(socket, subs))
}

/// Each bus subscription blocks on its own thread and feeds a shared queue.
fn forward(sub: Subscription, tx: mpsc::Sender<String>) {
    std::thread::Builder::new()
        .name(format!("ws {}", sub.topic()))
        .spawn(move || loop {
            match sub.recv_timeout(FORWARD_POLL) {
                Ok(msg) => {
                    if tx.blocking_send(msg.payload).is_err() {
                        return;
                    }
                }
                Err(RecvError::Timeout) if tx.is_closed() => return,
                Err(RecvError::Timeout) => {}
                Err(RecvError::Closed) => return,
            }
        })
        .expect("spawn ws forwarder");
}

async fn stream_to_client(mut socket: WebSocket, subs: Vec<Subscription>) {
    let (tx, mut rx) = mpsc::channel(CLIENT_QUEUE);
    for sub in subs {
        forward(sub, tx.clone());
    }
    drop(tx);
    loop {
        tokio::select! {
            next = rx.recv() => match next {
                Some(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                None => {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
