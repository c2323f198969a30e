//! Model workers. One binary hosts either a planner or any number of tools
//! behind the same two endpoints.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use skillplug_core::format::{SerializationProfile, ToolCall};
use skillplug_core::serving::protocol::{
    ExecuteToolRequest, ExecuteToolResponse, HeartbeatRequest, HeartbeatResponse,
    RegisterWorkerRequest, WorkerGenerateRequest, WorkerGenerateResponse,
};
use skillplug_core::serving::{
    execute_tool_or_error, ScriptedPlanner, ToolBackend, ToolResult, WorkerKind,
};
use skillplug_core::skills::SkillRepository;

use crate::{ApiError, ApiJson};

/// Produces the raw continuation of a serialized context.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, context: &str, stop_token: &str) -> Result<String, String>;
}

impl TextGenerator for ScriptedPlanner {
    fn generate(&self, context: &str, stop_token: &str) -> Result<String, String> {
        let profile = SerializationProfile {
            stop_token: stop_token.to_owned(),
            ..SerializationProfile::default()
        };
        Ok(ScriptedPlanner::generate(self, context, &profile))
    }
}

enum Payload {
    Tools {
        repo: Arc<SkillRepository>,
        backend: Arc<dyn ToolBackend>,
    },
    Planner(Arc<dyn TextGenerator>),
}

pub struct Worker {
    pub worker_id: String,
    pub address: String,
    pub served_names: Vec<String>,
    payload: Payload,
    in_flight: AtomicU32,
}

struct InFlight<'a>(&'a AtomicU32);

impl<'a> InFlight<'a> {
    fn enter(counter: &'a AtomicU32) -> Self {
        counter.fetch_add(1, Ordering::SeqCst);
        InFlight(counter)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Worker {
    /// A tool worker executing `served_names` (primitive or composed) on
    /// `backend`.
    pub fn tool(
        worker_id: impl Into<String>,
        address: impl Into<String>,
        served_names: Vec<String>,
        repo: Arc<SkillRepository>,
        backend: Arc<dyn ToolBackend>,
    ) -> Arc<Self> {
        Arc::new(Worker {
            worker_id: worker_id.into(),
            address: address.into(),
            served_names,
            payload: Payload::Tools { repo, backend },
            in_flight: AtomicU32::new(0),
        })
    }

    pub fn planner(
        worker_id: impl Into<String>,
        address: impl Into<String>,
        served_names: Vec<String>,
        generator: Arc<dyn TextGenerator>,
    ) -> Arc<Self> {
        Arc::new(Worker {
            worker_id: worker_id.into(),
            address: address.into(),
            served_names,
            payload: Payload::Planner(generator),
            in_flight: AtomicU32::new(0),
        })
    }

    pub fn kind(&self) -> WorkerKind {
        match self.payload {
            Payload::Tools { .. } => WorkerKind::Tool,
            Payload::Planner(_) => WorkerKind::Planner,
        }
    }

    pub fn queue_length(&self) -> u32 {
        self.in_flight.load(Ordering::SeqCst)
    }

    pub fn registration(&self) -> RegisterWorkerRequest {
        RegisterWorkerRequest {
            worker_id: self.worker_id.clone(),
            kind: self.kind(),
            served_names: self.served_names.clone(),
            address: self.address.clone(),
            queue_length: self.queue_length(),
        }
    }

    /// Runs one tool request to completion on the calling thread.
    pub fn execute(&self, req: ExecuteToolRequest) -> Result<ExecuteToolResponse, String> {
        let Payload::Tools { repo, backend } = &self.payload else {
            return Err("this worker hosts a planner, not tools".into());
        };
        let _guard = InFlight::enter(&self.in_flight);
        let result = if self.served_names.contains(&req.api_name) {
            let call = ToolCall {
                api_name: req.api_name,
                api_params: req.api_params,
            };
            execute_tool_or_error(repo, backend.as_ref(), &call, &req.image_refs)
        } else {
            ToolResult::error(
                req.api_name.clone(),
                format!("`{}` is not served here", req.api_name),
            )
        };
        Ok(ExecuteToolResponse::from_result(&result))
    }

    pub fn generate(&self, req: &WorkerGenerateRequest) -> Result<WorkerGenerateResponse, String> {
        let Payload::Planner(generator) = &self.payload else {
            return Err("this worker hosts tools, not a planner".into());
        };
        let _guard = InFlight::enter(&self.in_flight);
        let text = generator.generate(&req.context, &req.stop_token)?;
        Ok(WorkerGenerateResponse { text })
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/worker_generate", post(worker_generate))
            .route("/worker_execute_tool", post(worker_execute_tool))
            .with_state(self)
    }
}

async fn worker_generate(
    State(w): State<Arc<Worker>>,
    ApiJson(req): ApiJson<WorkerGenerateRequest>,
) -> Result<Json<WorkerGenerateResponse>, ApiError> {
    let out = tokio::task::spawn_blocking(move || w.generate(&req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    out.map(Json)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))
}

async fn worker_execute_tool(
    State(w): State<Arc<Worker>>,
    ApiJson(req): ApiJson<ExecuteToolRequest>,
) -> Result<Json<ExecuteToolResponse>, ApiError> {
    let out = tokio::task::spawn_blocking(move || w.execute(req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    out.map(Json)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))
}

/// Registers with the controller, then heartbeats every `interval`,
/// registering again whenever the controller has forgotten the worker.
pub async fn run_heartbeat(worker: Arc<Worker>, controller_url: String, interval: Duration) {
    let http = reqwest::Client::new();
    let base = controller_url.trim_end_matches('/').to_owned();
    let mut registered = false;
    loop {
        if registered {
            let body = HeartbeatRequest {
                worker_id: worker.worker_id.clone(),
                queue_length: worker.queue_length(),
            };
            let reply = http
                .post(format!("{base}/heartbeat"))
                .json(&body)
                .send()
                .await;
            match reply {
                Ok(r) => match r.json::<HeartbeatResponse>().await {
                    Ok(h) if h.exist => {}
                    Ok(_) => {
                        log::warn!("controller forgot {}; registering again", worker.worker_id);
                        registered = false;
                        continue;
                    }
                    Err(e) => log::warn!("heartbeat reply: {e}"),
                },
                Err(e) => log::warn!("heartbeat: {e}"),
            }
        } else {
            let reply = http
                .post(format!("{base}/register_worker"))
                .json(&worker.registration())
                .send()
                .await;
            match reply {
                Ok(r) if r.status().is_success() => {
                    log::info!("{} registered with {base}", worker.worker_id);
                    registered = true;
                }
                Ok(r) => log::warn!("register rejected: {}", r.status()),
                Err(e) => log::warn!("register: {e}"),
            }
        }
        tokio::time::sleep(interval).await;
    }
}
