//! Chat gateway: sessions over HTTP, answers as a server-sent event stream.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, Sse};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream};
use serde::Deserialize;
use skillplug_core::format::{SequenceRecord, ToolCall};
use skillplug_core::serving::protocol::{
    image_ref_from_wire, CreateSessionRequest, CreateSessionResponse, EventKind, MessageRequest,
    ModeName, SessionEvent,
};
use skillplug_core::serving::{Planner, ToolBackend};
use skillplug_core::session::{Agent, OutputRenderer, Session, SessionMode, UserView};
use skillplug_core::skills::{SkillRepository, DEFAULT_ALL_TOOLS};
use tokio::sync::mpsc;

use crate::{ApiError, ApiJson};

type SessionSlot = Arc<tokio::sync::Mutex<Session>>;

pub struct Gateway {
    repo: Arc<SkillRepository>,
    planner: Arc<dyn Planner>,
    backend: Arc<dyn ToolBackend>,
    renderer: OutputRenderer,
    sessions: Mutex<HashMap<String, SessionSlot>>,
    next_id: AtomicU64,
}

/// Wire name of an event kind, also used as the SSE event name.
pub fn event_name(kind: EventKind) -> &'static str {
    match kind {
        EventKind::Status => "status",
        EventKind::Answer => "answer",
        EventKind::ToolResult => "tool_result",
        EventKind::Error => "error",
    }
}

fn to_sse(event: &SessionEvent) -> Event {
    Event::default()
        .event(event_name(event.kind))
        .id(event.seq.to_string())
        .data(serde_json::to_string(event).expect("event serializes"))
}

impl Gateway {
    pub fn new(
        repo: Arc<SkillRepository>,
        planner: Arc<dyn Planner>,
        backend: Arc<dyn ToolBackend>,
    ) -> Arc<Self> {
        Self::with_renderer(repo, planner, backend, OutputRenderer::default())
    }

    pub fn with_renderer(
        repo: Arc<SkillRepository>,
        planner: Arc<dyn Planner>,
        backend: Arc<dyn ToolBackend>,
        renderer: OutputRenderer,
    ) -> Arc<Self> {
        Arc::new(Gateway {
            repo,
            planner,
            backend,
            renderer,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(0),
        })
    }

    pub fn create_session(&self, req: &CreateSessionRequest) -> Result<String, String> {
        let mode = match req.mode {
            ModeName::Fly => SessionMode::OnTheFly,
            ModeName::AllTools => {
                let tools: Vec<String> = match &req.tools {
                    Some(t) => t.clone(),
                    None => DEFAULT_ALL_TOOLS.iter().map(|s| s.to_string()).collect(),
                };
                if let Some(bad) = tools.iter().find(|t| !self.repo.contains(t)) {
                    return Err(format!("unknown tool `{bad}`"));
                }
                for t in &tools {
                    let call = ToolCall::new(t.clone());
                    if let Err(v) = self.repo.validate_call(&call) {
                        return Err(format!("`{t}` cannot run without parameters: {v:?}"));
                    }
                }
                SessionMode::AllTools { tools }
            }
        };
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Session::new(id.clone(), mode).with_renderer(self.renderer);
        self.sessions
            .lock()
            .expect("sessions lock")
            .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        log::info!("session {id} created ({:?})", req.mode);
        Ok(id)
    }

    fn slot(&self, id: &str) -> Result<SessionSlot, ApiError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`")))
    }

    /// Runs one message through the agent and streams its events into
    /// `tx`. The session stays locked until the answer or error is sent.
    fn start_message(
        self: &Arc<Self>,
        id: &str,
        req: MessageRequest,
    ) -> Result<mpsc::UnboundedReceiver<SessionEvent>, ApiError> {
        let slot = self.slot(id)?;
        let mut text = req.text;
        if let Some(vp) = req.visual_prompt {
            vp.check()
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
            text = vp.append_to(&text);
        }
        if text.trim().is_empty() && req.image.is_none() {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "message needs text or an image",
            ));
        }
        let guard = slot.try_lock_owned().map_err(|_| {
            ApiError::new(
                StatusCode::CONFLICT,
                format!("session `{id}` is answering another message"),
            )
        })?;
        let (tx, rx) = mpsc::unbounded_channel();
        let this = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            let mut session = guard;
            let images = req
                .image
                .iter()
                .map(|img| image_ref_from_wire(img, format!("img-{}", session.images().len())))
                .collect();
            let agent = Agent::new(&this.repo, this.planner.as_ref(), this.backend.as_ref());
            if let Err(e) = agent.handle_message(&mut session, &text, images, &mut |ev| {
                let _ = tx.send(ev);
            }) {
                log::warn!("session {}: {e}", session.id);
            }
            drop(session);
            drop(tx);
        });
        Ok(rx)
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/session", post(create_session))
            .route("/session/{id}/message", post(post_message))
            .route("/session/{id}/view", get(get_view))
            .route("/session/{id}/transcript", get(get_transcript))
            .with_state(self)
    }
}

async fn create_session(
    State(g): State<Arc<Gateway>>,
    ApiJson(req): ApiJson<CreateSessionRequest>,
) -> Result<Json<CreateSessionResponse>, ApiError> {
    let session_id = g
        .create_session(&req)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    Ok(Json(CreateSessionResponse { session_id }))
}

async fn post_message(
    State(g): State<Arc<Gateway>>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<MessageRequest>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = g.start_message(&id, req)?;
    let events = stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|ev| (Ok(to_sse(&ev)), rx))
    });
    Ok(Sse::new(events))
}

#[derive(Debug, Deserialize)]
struct ViewQuery {
    #[serde(default)]
    debug: bool,
}

async fn get_view(
    State(g): State<Arc<Gateway>>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> Result<Json<UserView>, ApiError> {
    let slot = g.slot(&id)?;
    let session = slot
        .try_lock()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "session is busy"))?;
    Ok(Json(session.user_view(q.debug)))
}

async fn get_transcript(
    State(g): State<Arc<Gateway>>,
    Path(id): Path<String>,
) -> Result<Json<SequenceRecord>, ApiError> {
    let slot = g.slot(&id)?;
    let session = slot
        .try_lock()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, "session is busy"))?;
    session
        .export_record()
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))
}
