//! Blocking HTTP clients for the controller and workers. They implement the
//! core planner and tool-backend traits, so a session can run against remote
//! workers unchanged.
//!
//! `reqwest`'s blocking client owns a runtime of its own; build and drop
//! these values outside async contexts.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use skillplug_core::format::{ImageRef, UnifiedPrediction, ValueMap};
use skillplug_core::serving::protocol::{
    ExecuteToolRequest, ExecuteToolResponse, GetWorkerAddressRequest, GetWorkerAddressResponse,
    HeartbeatRequest, HeartbeatResponse, ListModelsResponse, RegisterWorkerRequest,
    RegisterWorkerResponse, WireStatus, WorkerGenerateRequest, WorkerGenerateResponse,
};
use skillplug_core::serving::{
    parse_planner_text, BackendError, PlanError, Planner, PlannerRequest, RoutingPolicy,
    ToolBackend, DEFAULT_STEP_TIMEOUT,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {detail}")]
    Transport { url: String, detail: String },
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("{url} answered {status}: {body}")]
    Status {
        url: String,
        status: u16,
        body: String,
    },
    #[error("unreadable response from {url}: {detail}")]
    Decode { url: String, detail: String },
}

fn transport(url: &str, e: reqwest::Error) -> ClientError {
    if e.is_timeout() {
        ClientError::Timeout {
            url: url.to_owned(),
        }
    } else {
        ClientError::Transport {
            url: url.to_owned(),
            detail: e.to_string(),
        }
    }
}

fn finish<T: DeserializeOwned>(
    url: &str,
    reply: Result<reqwest::blocking::Response, reqwest::Error>,
) -> Result<T, ClientError> {
    let reply = reply.map_err(|e| transport(url, e))?;
    let status = reply.status();
    let body = reply.text().map_err(|e| transport(url, e))?;
    if !status.is_success() {
        return Err(ClientError::Status {
            url: url.to_owned(),
            status: status.as_u16(),
            body,
        });
    }
    serde_json::from_str(&body).map_err(|e| ClientError::Decode {
        url: url.to_owned(),
        detail: e.to_string(),
    })
}

pub(crate) fn post_json<Req: Serialize, Resp: DeserializeOwned>(
    http: &reqwest::blocking::Client,
    url: &str,
    body: &Req,
) -> Result<Resp, ClientError> {
    finish(url, http.post(url).json(body).send())
}

fn build_http(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client")
}

fn trim(base: &str) -> String {
    base.trim_end_matches('/').to_owned()
}

#[derive(Debug, Clone)]
pub struct ControllerClient {
    base: String,
    http: reqwest::blocking::Client,
}

impl ControllerClient {
    pub fn new(base: &str) -> Self {
        Self::with_timeout(base, Duration::from_secs(10))
    }

    pub fn with_timeout(base: &str, timeout: Duration) -> Self {
        ControllerClient {
            base: trim(base),
            http: build_http(timeout),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn register(&self, req: &RegisterWorkerRequest) -> Result<bool, ClientError> {
        let url = format!("{}/register_worker", self.base);
        post_json::<_, RegisterWorkerResponse>(&self.http, &url, req).map(|r| r.registered)
    }

    /// False when the controller does not know the worker.
    pub fn heartbeat(&self, worker_id: &str, queue_length: u32) -> Result<bool, ClientError> {
        let url = format!("{}/heartbeat", self.base);
        let body = HeartbeatRequest {
            worker_id: worker_id.to_owned(),
            queue_length,
        };
        post_json::<_, HeartbeatResponse>(&self.http, &url, &body).map(|r| r.exist)
    }

    pub fn list_models(&self) -> Result<Vec<String>, ClientError> {
        let url = format!("{}/list_models", self.base);
        finish::<ListModelsResponse>(&url, self.http.get(&url).send()).map(|r| r.names)
    }

    /// `None` when no live worker serves `name`.
    pub fn worker_address(
        &self,
        name: &str,
        policy: Option<RoutingPolicy>,
    ) -> Result<Option<String>, ClientError> {
        let url = format!("{}/get_worker_address", self.base);
        let body = GetWorkerAddressRequest {
            name: name.to_owned(),
            policy,
        };
        let r: GetWorkerAddressResponse = post_json(&self.http, &url, &body)?;
        Ok(Some(r.address).filter(|a| !a.is_empty()))
    }
}

/// Runs primitive skills on whichever tool worker the controller picks.
#[derive(Debug, Clone)]
pub struct RemoteToolBackend {
    controller: ControllerClient,
    http: reqwest::blocking::Client,
    pub policy: Option<RoutingPolicy>,
}

impl RemoteToolBackend {
    pub fn new(controller: ControllerClient) -> Self {
        Self::with_timeout(controller, DEFAULT_STEP_TIMEOUT)
    }

    /// `step_timeout` bounds each worker call.
    pub fn with_timeout(controller: ControllerClient, step_timeout: Duration) -> Self {
        RemoteToolBackend {
            controller,
            http: build_http(step_timeout),
            policy: None,
        }
    }
}

impl ToolBackend for RemoteToolBackend {
    fn invoke(
        &self,
        skill: &str,
        params: &ValueMap,
        images: &[ImageRef],
    ) -> Result<ValueMap, BackendError> {
        let address = self
            .controller
            .worker_address(skill, self.policy)
            .map_err(|e| BackendError::Failed(e.to_string()))?
            .ok_or_else(|| BackendError::Unavailable(skill.to_owned()))?;
        let url = format!("{}/worker_execute_tool", trim(&address));
        let body = ExecuteToolRequest {
            api_name: skill.to_owned(),
            api_params: params.clone(),
            image_refs: images.to_vec(),
        };
        let reply: ExecuteToolResponse =
            post_json(&self.http, &url, &body).map_err(|e| match e {
                ClientError::Timeout { .. } => BackendError::Timeout,
                other => BackendError::Failed(other.to_string()),
            })?;
        match reply.status {
            WireStatus::Ok => Ok(reply.output),
            WireStatus::Error => Err(BackendError::Failed(
                reply
                    .output
                    .get("error")
                    .and_then(|v| v.as_str())
                    .unwrap_or("tool failed")
                    .to_owned(),
            )),
        }
    }
}

/// Sends the session context to a planner worker serving `model` and
/// parses what it generates.
#[derive(Debug, Clone)]
pub struct RemotePlanner {
    controller: ControllerClient,
    http: reqwest::blocking::Client,
    pub model: String,
}

impl RemotePlanner {
    pub fn new(controller: ControllerClient, model: impl Into<String>) -> Self {
        RemotePlanner {
            controller,
            http: build_http(DEFAULT_STEP_TIMEOUT),
            model: model.into(),
        }
    }
}

impl Planner for RemotePlanner {
    fn plan(&self, request: &PlannerRequest) -> Result<UnifiedPrediction, PlanError> {
        let address = self
            .controller
            .worker_address(&self.model, None)
            .map_err(|e| PlanError::PlannerUnreachable(e.to_string()))?
            .ok_or_else(|| {
                PlanError::PlannerUnreachable(format!("no live worker serves `{}`", self.model))
            })?;
        let url = format!("{}/worker_generate", trim(&address));
        let body = WorkerGenerateRequest {
            context: request.context.clone(),
            stop_token: request.stop_token.clone(),
        };
        let reply: WorkerGenerateResponse = post_json(&self.http, &url, &body)
            .map_err(|e| PlanError::PlannerUnreachable(e.to_string()))?;
        let text = reply
            .text
            .split(request.stop_token.as_str())
            .next()
            .unwrap_or("");
        parse_planner_text(text)
    }
}
