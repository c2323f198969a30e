//! Planner clients and the rule-driven scripted planner.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{
    parse_unified_prediction, SerializationProfile, ToolCall, UnifiedPrediction, Value, ValueMap,
};

/// What a planner sees: the rendered session prefix ending in the assistant
/// literal, and the latest human-side text for convenience.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerRequest {
    pub context: String,
    pub latest: String,
    pub stop_token: String,
}

impl PlannerRequest {
    /// Rebuilds a request from a bare context, as a planner worker receives it.
    pub fn from_context(context: impl Into<String>, profile: &SerializationProfile) -> Self {
        let context = context.into();
        let latest = profile.latest_human_text(&context).unwrap_or("").to_owned();
        PlannerRequest {
            context,
            latest,
            stop_token: profile.stop_token.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("planner unreachable: {0}")]
    PlannerUnreachable(String),
    #[error("unparseable planner output: {0}")]
    UnparseablePlannerOutput(String),
}

pub trait Planner: Send + Sync {
    fn plan(&self, request: &PlannerRequest) -> Result<UnifiedPrediction, PlanError>;
}

impl<T: Planner + ?Sized> Planner for &T {
    fn plan(&self, request: &PlannerRequest) -> Result<UnifiedPrediction, PlanError> {
        (**self).plan(request)
    }
}

impl<T: Planner + ?Sized> Planner for std::sync::Arc<T> {
    fn plan(&self, request: &PlannerRequest) -> Result<UnifiedPrediction, PlanError> {
        (**self).plan(request)
    }
}

/// Parses raw generated text the way every planner client must.
pub fn parse_planner_text(text: &str) -> Result<UnifiedPrediction, PlanError> {
    let body = text.trim();
    parse_unified_prediction(body).map_err(|e| PlanError::UnparseablePlannerOutput(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPlannerRule {
    pub pattern: String,
    /// Treat `pattern` as a regex; named captures expand as `${name}` in the
    /// emitted prediction.
    #[serde(default)]
    pub regex: bool,
    pub emit: UnifiedPrediction,
}

impl ScriptedPlannerRule {
    pub fn substring(pattern: impl Into<String>, emit: UnifiedPrediction) -> Self {
        ScriptedPlannerRule {
            pattern: pattern.into(),
            regex: false,
            emit,
        }
    }

    pub fn regex(pattern: impl Into<String>, emit: UnifiedPrediction) -> Self {
        ScriptedPlannerRule {
            pattern: pattern.into(),
            regex: true,
            emit,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptFile {
    rules: Vec<ScriptedPlannerRule>,
    #[serde(default)]
    fallback: Option<UnifiedPrediction>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("rule {index}: {source}")]
    BadPattern { index: usize, source: regex::Error },
    #[error("script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("script: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered rules over the latest human-side text; first match wins, and a
/// direct-answer fallback covers everything else.
#[derive(Debug, Clone)]
pub struct ScriptedPlanner {
    rules: Vec<(ScriptedPlannerRule, Regex)>,
    fallback: UnifiedPrediction,
}

pub fn default_fallback() -> UnifiedPrediction {
    UnifiedPrediction::answer(
        "No tool is needed for this request.",
        "I can answer this directly without calling any tool.",
    )
}

impl ScriptedPlanner {
    pub fn new(rules: Vec<ScriptedPlannerRule>) -> Result<Self, ScriptError> {
        Self::with_fallback(rules, default_fallback())
    }

    pub fn with_fallback(
        rules: Vec<ScriptedPlannerRule>,
        fallback: UnifiedPrediction,
    ) -> Result<Self, ScriptError> {
        let rules = rules
            .into_iter()
            .enumerate()
            .map(|(index, rule)| {
                let source = if rule.regex {
                    rule.pattern.clone()
                } else {
                    regex::escape(&rule.pattern)
                };
                Regex::new(&source)
                    .map(|re| (rule, re))
                    .map_err(|source| ScriptError::BadPattern { index, source })
            })
            .collect::<Result<_, _>>()?;
        Ok(ScriptedPlanner { rules, fallback })
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let file: ScriptFile = serde_json::from_str(text)?;
        Self::with_fallback(file.rules, file.fallback.unwrap_or_else(default_fallback))
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ScriptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn rules(&self) -> impl Iterator<Item = &ScriptedPlannerRule> {
        self.rules.iter().map(|(r, _)| r)
    }

    /// A generic tool-use script: answer once a skill result arrives, else
    /// dispatch by keyword to detection, tagging, captioning or OCR.
    pub fn tool_use_defaults() -> Self {
        let call = |name: &str| ToolCall::new(name);
        let rules = vec![
            ScriptedPlannerRule::regex(
                r"(?m)^(?P<tool>[\w+]+) model outputs: (?P<out>.*)$",
                UnifiedPrediction::answer(
                    "The ${tool} results are back, so I can answer from them.",
                    "According to ${tool}: ${out}",
                ),
            ),
            ScriptedPlannerRule::regex(
                r"(?i)\b(?:detect|locate|find|ground)\b(?: all| the)? (?P<obj>[^?.]+?)(?: in (?:the|this) image)?[?.]*$",
                UnifiedPrediction::new(
                    "Grounding is needed to locate the objects.",
                    vec![call("grounding_dino").with_param("caption", "${obj}")],
                    "I will use grounding_dino to locate ${obj}.",
                ),
            ),
            ScriptedPlannerRule::regex(
                r"(?i)\b(?:tag|tags|tagging|what objects)\b",
                UnifiedPrediction::new(
                    "Tagging lists the objects present.",
                    vec![call("ram")],
                    "I will use ram to tag the image.",
                ),
            ),
            ScriptedPlannerRule::regex(
                r"(?i)\b(?:caption|describe|description)\b",
                UnifiedPrediction::new(
                    "A captioner summarizes the image.",
                    vec![call("blip2")],
                    "I will use blip2 to caption the image.",
                ),
            ),
            ScriptedPlannerRule::regex(
                r"(?i)\b(?:text|read|written|ocr)\b",
                UnifiedPrediction::new(
                    "OCR reads the text in the image.",
                    vec![call("easyocr")],
                    "I will use easyocr to read the text.",
                ),
            ),
        ];
        Self::new(rules).expect("default rules compile")
    }

    /// The prediction for a piece of latest-turn text.
    pub fn respond(&self, latest: &str) -> UnifiedPrediction {
        for (rule, re) in &self.rules {
            if let Some(caps) = re.captures(latest) {
                if !rule.regex {
                    return rule.emit.clone();
                }
                return expand_prediction(&rule.emit, &|t: &str| {
                    let mut out = String::new();
                    caps.expand(t, &mut out);
                    out
                });
            }
        }
        self.fallback.clone()
    }

    /// Generated text for a context, as a planner worker would return it.
    pub fn generate(&self, context: &str, profile: &SerializationProfile) -> String {
        let request = PlannerRequest::from_context(context, profile);
        crate::format::serialize_unified_prediction(&self.respond(&request.latest))
    }
}

impl Planner for ScriptedPlanner {
    fn plan(&self, request: &PlannerRequest) -> Result<UnifiedPrediction, PlanError> {
        Ok(self.respond(&request.latest))
    }
}

fn expand_prediction(p: &UnifiedPrediction, f: &dyn Fn(&str) -> String) -> UnifiedPrediction {
    UnifiedPrediction {
        thoughts: f(&p.thoughts),
        actions: p
            .actions
            .iter()
            .map(|a| ToolCall {
                api_name: f(&a.api_name),
                api_params: expand_map(&a.api_params, f),
            })
            .collect(),
        value: f(&p.value),
    }
}

fn expand_map(map: &ValueMap, f: &dyn Fn(&str) -> String) -> ValueMap {
    map.iter()
        .map(|(k, v)| (k.clone(), expand_value(v, f)))
        .collect()
}

fn expand_value(v: &Value, f: &dyn Fn(&str) -> String) -> Value {
    match v {
        Value::Text(s) => Value::Text(f(s)),
        Value::List(items) => Value::List(items.iter().map(|i| expand_value(i, f)).collect()),
        Value::Map(m) => Value::Map(expand_map(m, f)),
        other => other.clone(),
    }
}
