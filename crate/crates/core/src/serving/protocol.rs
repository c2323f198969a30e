//! JSON bodies exchanged between controller, workers, gateway and clients.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::controller::{RoutingPolicy, WorkerKind};
use super::executor::{ToolResult, ToolStatus};
use crate::format::{ImageRef, ImageSource, ValueMap, VisualPrompt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterWorkerRequest {
    pub worker_id: String,
    pub kind: WorkerKind,
    pub served_names: Vec<String>,
    pub address: String,
    #[serde(default)]
    pub queue_length: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterWorkerResponse {
    pub registered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatRequest {
    pub worker_id: String,
    #[serde(default)]
    pub queue_length: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatResponse {
    /// False when the controller has forgotten the worker; it should
    /// register again.
    pub exist: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListModelsResponse {
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GetWorkerAddressRequest {
    pub name: String,
    #[serde(default)]
    pub policy: Option<RoutingPolicy>,
}

/// `address` is empty when no live worker serves the name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GetWorkerAddressResponse {
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerGenerateRequest {
    pub context: String,
    pub stop_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerGenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteToolRequest {
    pub api_name: String,
    #[serde(default)]
    pub api_params: ValueMap,
    #[serde(default)]
    pub image_refs: Vec<ImageRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteToolResponse {
    pub status: WireStatus,
    pub output: ValueMap,
    pub latency_ms: u64,
}

impl ExecuteToolResponse {
    pub fn from_result(result: &ToolResult) -> Self {
        ExecuteToolResponse {
            status: if result.status.is_ok() {
                WireStatus::Ok
            } else {
                WireStatus::Error
            },
            output: result.rendered_output(),
            latency_ms: result.latency_ms,
        }
    }

    pub fn into_result(self, skill: impl Into<String>) -> ToolResult {
        let status = match self.status {
            WireStatus::Ok => ToolStatus::Ok,
            WireStatus::Error => ToolStatus::Error(
                self.output
                    .get("error")
                    .and_then(|v| v.as_str())
                    .unwrap_or("tool failed")
                    .to_owned(),
            ),
        };
        ToolResult {
            skill: skill.into(),
            output: self.output,
            status,
            latency_ms: self.latency_ms,
        }
    }
}

/// Session mode as named on the wire and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ModeName {
    #[default]
    #[serde(rename = "fly", alias = "on_the_fly", alias = "on-the-fly")]
    Fly,
    #[serde(rename = "all-tools", alias = "all_tools")]
    AllTools,
}

impl std::str::FromStr for ModeName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fly" | "on_the_fly" | "on-the-fly" => Ok(ModeName::Fly),
            "all-tools" | "all_tools" => Ok(ModeName::AllTools),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub mode: ModeName,
    /// Overrides the default all-tools set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRequest {
    #[serde(default)]
    pub text: String,
    /// A URI, or a `data:` URL carrying base64 bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_prompt: Option<VisualPrompt>,
}

/// Turns the wire form of an image into a reference with the given id.
pub fn image_ref_from_wire(image: &str, id: impl Into<String>) -> ImageRef {
    let source = match image
        .strip_prefix("data:")
        .and_then(|rest| rest.split_once(";base64,"))
    {
        Some((_, data)) => ImageSource::Inline(data.to_owned()),
        None => ImageSource::Uri(image.to_owned()),
    };
    ImageRef {
        id: id.into(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Status,
    Answer,
    ToolResult,
    Error,
}

/// One chunk of a session's event stream. The payload is a string for
/// status, answer and error events and a tool result object otherwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionEvent {
    pub kind: EventKind,
    pub payload: Box<RawValue>,
    pub seq: u64,
}

impl PartialEq for SessionEvent {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.seq == other.seq
            && self.payload.get() == other.payload.get()
    }
}

impl SessionEvent {
    pub fn text(kind: EventKind, text: &str, seq: u64) -> Self {
        SessionEvent {
            kind,
            payload: serde_json::value::to_raw_value(text).expect("string serializes"),
            seq,
        }
    }

    pub fn tool_result(result: &ToolResult, seq: u64) -> Self {
        SessionEvent {
            kind: EventKind::ToolResult,
            payload: serde_json::value::to_raw_value(result).expect("tool result serializes"),
            seq,
        }
    }

    pub fn payload_text(&self) -> Option<String> {
        serde_json::from_str(self.payload.get()).ok()
    }

    pub fn payload_tool_result(&self) -> Option<ToolResult> {
        serde_json::from_str(self.payload.get()).ok()
    }
}
