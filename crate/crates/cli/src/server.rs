//! HTTP and WebSocket front end. Each session runs its turns on a dedicated worker thread,
//! in arrival order; events reach every open socket of the session.
//!
//! Routes:
//! - `POST /sessions` with optional `{"seed": n}` creates a session.
//! - `GET /sessions/{id}/ws` upgrades to the event socket.
//! - `POST /sessions/{id}/audio` takes a multipart `audio` field and returns the transcript.
//!   Unless `?submit=false`, the transcript is then sent as the next user message.
//! - `GET /sessions/{id}/project`, `GET /sessions/{id}/turns`, `GET /sessions/{id}/trace/{turn}`.
//! - `DELETE /sessions/{id}` closes the session.
//!
//! Client socket messages: `{"type":"utterance","text":..}`, `{"type":"answer","text":..}`,
//! `{"type":"upload_audio_ref","audio_ref":..}`. The server sends engine events and
//! `{"type":"error","message":..}` for rejected messages.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc as std_mpsc, Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nlbim_core::gateway::Transcript;
use nlbim_core::kernel::seeded_project;
use nlbim_core::orchestrator::{Engine, Event, Session, SessionError, TurnOutcome};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{mpsc, oneshot};
use tower_http::services::ServeDir;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Utterance { text: String },
    Answer { text: String },
    /// Sends a transcript returned by an earlier audio upload.
    UploadAudioRef { audio_ref: String },
}

#[derive(Debug)]
enum Input {
    Utterance(String),
    Answer(String),
    /// Answer when a question is pending, utterance otherwise.
    Next(String),
}

type Reply = oneshot::Sender<Result<TurnOutcome, SessionError>>;

struct SessionHandle {
    session: Arc<Mutex<Session>>,
    inbox: std_mpsc::Sender<(Input, Option<Reply>)>,
    transcripts: Mutex<HashMap<String, Transcript>>,
}

impl SessionHandle {
    fn spawn(session: Session) -> Self {
        let session = Arc::new(Mutex::new(session));
        let (inbox, rx) = std_mpsc::channel::<(Input, Option<Reply>)>();
        let worker = session.clone();
        std::thread::spawn(move || {
            for (input, reply) in rx {
                let mut s = worker.lock().expect("session lock poisoned");
                let out = match input {
                    Input::Utterance(t) => s.handle_utterance(&t),
                    Input::Answer(t) => s.answer_question(&t),
                    Input::Next(t) if s.pending_question().is_some() => s.answer_question(&t),
                    Input::Next(t) => s.handle_utterance(&t),
                };
                drop(s);
                if let Some(reply) = reply {
                    let _ = reply.send(out);
                }
            }
        });
        Self {
            session,
            inbox,
            transcripts: Mutex::new(HashMap::new()),
        }
    }

    fn submit(&self, input: Input) -> oneshot::Receiver<Result<TurnOutcome, SessionError>> {
        let (tx, rx) = oneshot::channel();
        // The worker lives as long as the handle, so the send cannot fail.
        let _ = self.inbox.send((input, Some(tx)));
        rx
    }

    async fn with_session<T: Send + 'static>(&self, f: impl FnOnce(&mut Session) -> T + Send + 'static) -> T {
        let session = self.session.clone();
        tokio::task::spawn_blocking(move || f(&mut session.lock().expect("session lock poisoned")))
            .await
            .expect("session task panicked")
    }
}

pub struct AppState {
    engine: Arc<Engine>,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Arc<Self> {
        Arc::new(Self {
            engine,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .lock()
            .expect("registry lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session '{id}'")))
    }
}

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(msg: String) -> Self {
        Self(StatusCode::NOT_FOUND, msg)
    }

    fn bad_request(msg: impl ToString) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(close_session))
        .route("/sessions/{id}/ws", get(socket))
        .route("/sessions/{id}/audio", post(upload_audio))
        .route("/sessions/{id}/project", get(project))
        .route("/sessions/{id}/turns", get(turns))
        .route("/sessions/{id}/trace/{turn}", get(trace))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

pub async fn serve(engine: Arc<Engine>, bind: &str, static_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(AppState::new(engine), static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Binds an ephemeral port and serves in the background. For tests and embedding.
pub async fn spawn(engine: Arc<Engine>) -> anyhow::Result<SocketAddr> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let app = router(AppState::new(engine), None);
    tokio::spawn(async move { axum::serve(listener, app).await });
    Ok(addr)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    seed: Option<u64>,
}

async fn create_session(State(state): State<Arc<AppState>>, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let req: NewSession = if body.iter().all(u8::is_ascii_whitespace) {
        NewSession::default()
    } else {
        serde_json::from_slice(&body).map_err(ApiError::bad_request)?
    };
    let n = state.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n}");
    let seed = req.seed.unwrap_or(n);
    let session = Session::new(state.engine.clone(), id.clone(), seed, seeded_project());
    let handle = Arc::new(SessionHandle::spawn(session));
    state
        .sessions
        .lock()
        .expect("registry lock poisoned")
        .insert(id.clone(), handle);
    tracing::info!(%id, seed, "session created");
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "seed": seed }))).into_response())
}

async fn close_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let handle = state
        .sessions
        .lock()
        .expect("registry lock poisoned")
        .remove(&id)
        .ok_or_else(|| ApiError::not_found(format!("no session '{id}'")))?;
    handle.with_session(|s| s.close()).await;
    Ok(StatusCode::NO_CONTENT)
}

async fn project(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = state.session(&id)?;
    let project = handle.with_session(|s| s.project().clone()).await;
    Ok(Json(project).into_response())
}

async fn turns(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = state.session(&id)?;
    let turns = handle.with_session(|s| s.turns().to_vec()).await;
    Ok(Json(turns).into_response())
}

async fn trace(State(state): State<Arc<AppState>>, Path((id, turn)): Path<(String, u32)>) -> Result<Response, ApiError> {
    let handle = state.session(&id)?;
    match handle.with_session(move |s| s.trace(turn).cloned()).await {
        Some(t) => Ok(Json(t).into_response()),
        None => Err(ApiError::not_found(format!("turn {turn} has no trace"))),
    }
}

#[derive(Debug, Deserialize)]
struct AudioQuery {
    #[serde(default = "yes")]
    submit: bool,
}

fn yes() -> bool {
    true
}

async fn upload_audio(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<AudioQuery>,
    mut multipart: Multipart,
) -> Result<Response, ApiError> {
    let handle = state.session(&id)?;
    let mut audio = None;
    while let Some(field) = multipart.next_field().await.map_err(ApiError::bad_request)? {
        if field.name() == Some("audio") {
            let media_type = field.content_type().unwrap_or("application/octet-stream").to_string();
            let bytes = field.bytes().await.map_err(ApiError::bad_request)?;
            audio = Some((bytes, media_type));
        }
    }
    let (bytes, media_type) = audio.ok_or_else(|| ApiError::bad_request("multipart field 'audio' is missing"))?;
    let transcript = handle
        .with_session(move |s| s.transcribe(&bytes, &media_type))
        .await
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let audio_ref = format!("a{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    handle
        .transcripts
        .lock()
        .expect("transcript lock poisoned")
        .insert(audio_ref.clone(), transcript.clone());
    if q.submit {
        // Events report the outcome; the response does not wait for the turn.
        drop(handle.submit(Input::Next(transcript.text.clone())));
    }
    Ok(Json(json!({ "audio_ref": audio_ref, "transcript": transcript, "submitted": q.submit })).into_response())
}

async fn socket(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let handle = state.session(&id)?;
    let events = handle
        .with_session(|s| s.subscribe())
        .await
        .map_err(|e| ApiError(StatusCode::GONE, e.to_string()))?;
    Ok(ws.on_upgrade(move |socket| run_socket(socket, handle, events)))
}

async fn run_socket(mut socket: WebSocket, handle: Arc<SessionHandle>, events: std_mpsc::Receiver<Event>) {
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    let event_tx = tx.clone();
    // The session's event channel is blocking; a thread bridges it into the socket task.
    std::thread::spawn(move || {
        for e in events {
            let text = serde_json::to_string(&e).expect("event serializes");
            if event_tx.send(text).is_err() {
                break;
            }
        }
    });
    loop {
        tokio::select! {
            out = rx.recv() => {
                let Some(text) = out else { break };
                if socket.send(Message::text(text)).await.is_err() {
                    break;
                }
            }
            incoming = socket.recv() => {
                let Some(Ok(msg)) = incoming else { break };
                let text = match msg {
                    Message::Text(t) => t.to_string(),
                    Message::Close(_) => break,
                    _ => continue,
                };
                if let Err(e) = dispatch(&handle, &text, tx.clone()) {
                    let _ = tx.send(json!({ "type": "error", "message": e }).to_string());
                }
            }
        }
    }
}

fn dispatch(handle: &SessionHandle, text: &str, errors: mpsc::UnboundedSender<String>) -> Result<(), String> {
    let msg: ClientMessage = serde_json::from_str(text).map_err(|e| format!("bad message: {e}"))?;
    let input = match msg {
        ClientMessage::Utterance { text } => Input::Utterance(text),
        ClientMessage::Answer { text } => Input::Answer(text),
        ClientMessage::UploadAudioRef { audio_ref } => {
            let t = handle
                .transcripts
                .lock()
                .expect("transcript lock poisoned")
                .remove(&audio_ref)
                .ok_or_else(|| format!("unknown audio_ref '{audio_ref}'"))?;
            Input::Next(t.text)
        }
    };
    let reply = handle.submit(input);
    tokio::spawn(async move {
        if let Ok(Err(e)) = reply.await {
            let _ = errors.send(json!({ "type": "error", "message": e.to_string() }).to_string());
        }
    });
    Ok(())
}
