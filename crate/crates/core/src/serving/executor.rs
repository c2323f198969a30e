//! Tool execution over a pluggable backend, including composed chains.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{ImageRef, ToolCall, Value, ValueMap};
use crate::skills::{coerce_for_kind, CallViolation, ExpansionError, SkillRepository};

pub const DEFAULT_STEP_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("no live worker serves `{0}`")]
    Unavailable(String),
    #[error("{0}")]
    Failed(String),
    #[error("timed out")]
    Timeout,
}

/// Runs one primitive skill somewhere: in-process, or on a routed worker.
pub trait ToolBackend: Send + Sync {
    fn invoke(
        &self,
        skill: &str,
        params: &ValueMap,
        images: &[ImageRef],
    ) -> Result<ValueMap, BackendError>;
}

impl<T: ToolBackend + ?Sized> ToolBackend for &T {
    fn invoke(
        &self,
        skill: &str,
        params: &ValueMap,
        images: &[ImageRef],
    ) -> Result<ValueMap, BackendError> {
        (**self).invoke(skill, params, images)
    }
}

impl<T: ToolBackend + ?Sized> ToolBackend for std::sync::Arc<T> {
    fn invoke(
        &self,
        skill: &str,
        params: &ValueMap,
        images: &[ImageRef],
    ) -> Result<ValueMap, BackendError> {
        (**self).invoke(skill, params, images)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error(String),
}

impl ToolStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ToolStatus::Ok)
    }

    pub fn label(&self) -> &'static str {
        match self {
            ToolStatus::Ok => "ok",
            ToolStatus::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub skill: String,
    pub output: ValueMap,
    pub status: ToolStatus,
    pub latency_ms: u64,
}

impl ToolResult {
    pub fn ok(skill: impl Into<String>, output: ValueMap) -> Self {
        ToolResult {
            skill: skill.into(),
            output,
            status: ToolStatus::Ok,
            latency_ms: 0,
        }
    }

    pub fn error(skill: impl Into<String>, detail: impl Into<String>) -> Self {
        let detail = detail.into();
        let mut output = ValueMap::new();
        output.insert("error".into(), Value::text(detail.clone()));
        ToolResult {
            skill: skill.into(),
            output,
            status: ToolStatus::Error(detail),
            latency_ms: 0,
        }
    }

    /// The map shown to the planner: the output on success, `{"error": ...}`
    /// otherwise.
    pub fn rendered_output(&self) -> ValueMap {
        match &self.status {
            ToolStatus::Ok => self.output.clone(),
            ToolStatus::Error(detail) => {
                let mut m = ValueMap::new();
                m.insert("error".into(), Value::text(detail.clone()));
                m
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("invalid call: {}", join(.0))]
    InvalidCall(Vec<CallViolation>),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error("no live worker serves `{0}`")]
    NoWorkerAvailable(String),
    #[error("step {step} failed: {detail}")]
    WorkerError { step: usize, detail: String },
    #[error("step {step} timed out")]
    Timeout { step: usize },
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Executes a validated call. Composed skills run their members in plan
/// order, feeding wired outputs forward, and stop at the first failing step.
/// Steps are numbered from 1 in errors.
pub fn execute_tool(
    repo: &SkillRepository,
    backend: &dyn ToolBackend,
    call: &ToolCall,
    images: &[ImageRef],
) -> Result<ToolResult, ExecError> {
    repo.validate_call(call).map_err(ExecError::InvalidCall)?;
    let started = Instant::now();
    let plan = repo.expansion_plan(call)?;
    let mut outputs: Vec<ValueMap> = Vec::with_capacity(plan.len());
    for (i, step) in plan.iter().enumerate() {
        let step_no = i + 1;
        let descriptor = repo
            .get(&step.call.api_name)
            .ok_or_else(|| ExpansionError::UnknownSkill(step.call.api_name.clone()))?;
        let mut params = step.call.api_params.clone();
        for input in &step.inputs {
            let value = outputs[input.from_step].get(&input.output).ok_or_else(|| {
                ExecError::WorkerError {
                    step: step_no,
                    detail: format!(
                        "step {} produced no `{}`",
                        input.from_step + 1,
                        input.output
                    ),
                }
            })?;
            let value = match descriptor.param(&input.param) {
                Some(spec) => coerce_for_kind(spec.kind, value),
                None => value.clone(),
            };
            params.insert(input.param.clone(), value);
        }
        let out = backend
            .invoke(&step.call.api_name, &params, images)
            .map_err(|e| match e {
                BackendError::Unavailable(name) => ExecError::NoWorkerAvailable(name),
                BackendError::Failed(detail) => ExecError::WorkerError {
                    step: step_no,
                    detail,
                },
                BackendError::Timeout => ExecError::Timeout { step: step_no },
            })?;
        outputs.push(out);
    }

    let descriptor = repo.get(&call.api_name).expect("validated");
    let output = if plan.len() == 1 && !descriptor.is_composed() {
        outputs.pop().unwrap_or_default()
    } else {
        let mut merged = ValueMap::new();
        for out in outputs {
            for (k, v) in out {
                merged.insert(k, v);
            }
        }
        if descriptor.output_sketch.is_empty() {
            merged
        } else {
            descriptor
                .output_sketch
                .iter()
                .filter_map(|k| merged.get(k).map(|v| (k.clone(), v.clone())))
                .collect()
        }
    };
    Ok(ToolResult {
        skill: call.api_name.clone(),
        output,
        status: ToolStatus::Ok,
        latency_ms: started.elapsed().as_millis() as u64,
    })
}

/// Like [`execute_tool`] but folds failures into an error-status result.
pub fn execute_tool_or_error(
    repo: &SkillRepository,
    backend: &dyn ToolBackend,
    call: &ToolCall,
    images: &[ImageRef],
) -> ToolResult {
    execute_tool(repo, backend, call, images)
        .unwrap_or_else(|e| ToolResult::error(call.api_name.clone(), e.to_string()))
}

/// Serves canned outputs keyed by skill name and records every invocation.
#[derive(Debug, Default)]
pub struct StaticBackend {
    outputs: BTreeMap<String, Result<ValueMap, BackendError>>,
    calls: Mutex<Vec<(String, ValueMap)>>,
}

impl StaticBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_output(mut self, skill: impl Into<String>, output: ValueMap) -> Self {
        self.outputs.insert(skill.into(), Ok(output));
        self
    }

    pub fn with_failure(mut self, skill: impl Into<String>, error: BackendError) -> Self {
        self.outputs.insert(skill.into(), Err(error));
        self
    }

    pub fn calls(&self) -> Vec<(String, ValueMap)> {
        self.calls.lock().expect("calls lock").clone()
    }
}

impl ToolBackend for StaticBackend {
    fn invoke(
        &self,
        skill: &str,
        params: &ValueMap,
        _images: &[ImageRef],
    ) -> Result<ValueMap, BackendError> {
        self.calls
            .lock()
            .expect("calls lock")
            .push((skill.to_owned(), params.clone()));
        match self.outputs.get(skill) {
            Some(out) => out.clone(),
            None => Err(BackendError::Unavailable(skill.to_owned())),
        }
    }
}
