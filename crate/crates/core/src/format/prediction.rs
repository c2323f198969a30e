//! The three-field planner output: `thoughts`, `actions`, `value`.
//!
//! Two surface forms are accepted on input. The canonical one is a JSON
//! object:
//!
//! ```text
//! {"thoughts": "...", "actions": [{"API_name": "sam", "API_params": {"point": [0.45, 0.89]}}], "value": "..."}
//! ```
//!
//! The other is the labeled form found in transcripts, where each field is
//! introduced by a quoted label at the start of a line (`"thoughts" ...`,
//! `“actions” [...]`, `<value> ...`). Output is always the JSON form.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::value::{parse_value, parse_value_prefix, write_json_string, Value, ValueMap};

pub const THOUGHTS_KEY: &str = "thoughts";
pub const ACTIONS_KEY: &str = "actions";
pub const VALUE_KEY: &str = "value";
pub const API_NAME_KEY: &str = "API_name";
pub const API_PARAMS_KEY: &str = "API_params";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(rename = "API_name")]
    pub api_name: String,
    #[serde(rename = "API_params", default)]
    pub api_params: ValueMap,
}

impl ToolCall {
    pub fn new(api_name: impl Into<String>) -> Self {
        ToolCall {
            api_name: api_name.into(),
            api_params: ValueMap::new(),
        }
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.api_params.insert(key.into(), value.into());
        self
    }

    pub fn param(&self, key: &str) -> Option<&Value> {
        self.api_params.get(key)
    }

    /// Canonical JSON rendering of this call.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{");
        write_json_string(&mut out, API_NAME_KEY);
        out.push_str(": ");
        write_json_string(&mut out, &self.api_name);
        out.push_str(", ");
        write_json_string(&mut out, API_PARAMS_KEY);
        out.push_str(": ");
        out.push_str(&super::value::map_to_json(&self.api_params));
        out.push('}');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedPrediction {
    pub thoughts: String,
    pub actions: Vec<ToolCall>,
    pub value: String,
}

impl UnifiedPrediction {
    pub fn new(
        thoughts: impl Into<String>,
        actions: Vec<ToolCall>,
        value: impl Into<String>,
    ) -> Self {
        UnifiedPrediction {
            thoughts: thoughts.into(),
            actions,
            value: value.into(),
        }
    }

    /// A prediction that answers directly without any skill.
    pub fn answer(thoughts: impl Into<String>, value: impl Into<String>) -> Self {
        Self::new(thoughts, Vec::new(), value)
    }

    pub fn invokes_skills(&self) -> bool {
        !self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredictionParseError {
    #[error("planner output is empty")]
    EmptyInput,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` has the wrong type")]
    InvalidField(&'static str),
    #[error("malformed actions: {0}")]
    MalformedActions(String),
}

/// Parses planner output in either the JSON form or the labeled form.
pub fn parse_unified_prediction(raw: &str) -> Result<UnifiedPrediction, PredictionParseError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(PredictionParseError::EmptyInput);
    }
    if trimmed.starts_with('{') {
        if let Ok(Value::Map(map)) = parse_value(trimmed) {
            return from_object(&map);
        }
    }
    parse_labeled(trimmed)
}

/// Canonical JSON text; `parse_unified_prediction` inverts it exactly.
pub fn serialize_unified_prediction(p: &UnifiedPrediction) -> String {
    let mut out = String::from("{");
    write_json_string(&mut out, THOUGHTS_KEY);
    out.push_str(": ");
    write_json_string(&mut out, &p.thoughts);
    out.push_str(", ");
    write_json_string(&mut out, ACTIONS_KEY);
    out.push_str(": [");
    for (i, call) in p.actions.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&call.to_json());
    }
    out.push_str("], ");
    write_json_string(&mut out, VALUE_KEY);
    out.push_str(": ");
    write_json_string(&mut out, &p.value);
    out.push('}');
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Field {
    Thoughts,
    Actions,
    Value,
}

impl Field {
    fn from_label(label: &str) -> Option<Field> {
        match label.to_ascii_lowercase().as_str() {
            "thought" | "thoughts" => Some(Field::Thoughts),
            "action" | "actions" => Some(Field::Actions),
            "value" | "values" => Some(Field::Value),
            _ => None,
        }
    }
}

fn lookup<'m>(map: &'m ValueMap, names: &[&str]) -> Option<&'m Value> {
    map.iter()
        .find(|(k, _)| names.iter().any(|n| k.eq_ignore_ascii_case(n)))
        .map(|(_, v)| v)
}

fn from_object(map: &ValueMap) -> Result<UnifiedPrediction, PredictionParseError> {
    let thoughts = match lookup(map, &["thoughts", "thought"]) {
        None => return Err(PredictionParseError::MissingField(THOUGHTS_KEY)),
        Some(Value::Text(s)) => s.clone(),
        Some(_) => return Err(PredictionParseError::InvalidField(THOUGHTS_KEY)),
    };
    let actions = match lookup(map, &["actions", "action"]) {
        None => return Err(PredictionParseError::MissingField(ACTIONS_KEY)),
        Some(v) => actions_from_value(v)?,
    };
    let value = match lookup(map, &["value", "values"]) {
        None => return Err(PredictionParseError::MissingField(VALUE_KEY)),
        Some(Value::Text(s)) => s.clone(),
        Some(_) => return Err(PredictionParseError::InvalidField(VALUE_KEY)),
    };
    Ok(UnifiedPrediction {
        thoughts,
        actions,
        value,
    })
}

fn actions_from_value(value: &Value) -> Result<Vec<ToolCall>, PredictionParseError> {
    let items = match value {
        Value::Null => return Ok(Vec::new()),
        Value::List(items) => items,
        _ => {
            return Err(PredictionParseError::MalformedActions(
                "actions must be a list".into(),
            ))
        }
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let Value::Map(entry) = item else {
                return Err(PredictionParseError::MalformedActions(format!(
                    "item {i} is not an object"
                )));
            };
            let api_name = match lookup(entry, &[API_NAME_KEY]) {
                Some(Value::Text(name)) if !name.trim().is_empty() => name.clone(),
                Some(Value::Text(_)) => {
                    return Err(PredictionParseError::MalformedActions(format!(
                        "item {i} has an empty API_name"
                    )))
                }
                _ => {
                    return Err(PredictionParseError::MalformedActions(format!(
                        "item {i} lacks a string API_name"
                    )))
                }
            };
            let api_params = match lookup(entry, &[API_PARAMS_KEY]) {
                None | Some(Value::Null) => ValueMap::new(),
                Some(Value::Map(params)) => params.clone(),
                Some(_) => {
                    return Err(PredictionParseError::MalformedActions(format!(
                        "item {i} API_params is not an object"
                    )))
                }
            };
            Ok(ToolCall {
                api_name,
                api_params,
            })
        })
        .collect()
}

static LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?mi)^[ \t]*(?:[*]{0,2}["“”'<][ \t]*(thoughts?|actions?|values?)[ \t]*["“”'>][*]{0,2}[ \t]*:?|(thoughts?|actions?|values?)[ \t]*:)[ \t]*"#,
    )
    .expect("label pattern")
});

fn parse_labeled(text: &str) -> Result<UnifiedPrediction, PredictionParseError> {
    let mut marks: Vec<(Field, usize, usize)> = Vec::new();
    for caps in LABEL.captures_iter(text) {
        let whole = caps.get(0).expect("match");
        let label = caps.get(1).or_else(|| caps.get(2)).expect("label group");
        let Some(field) = Field::from_label(label.as_str()) else {
            continue;
        };
        // A field label may only appear once; later repeats belong to the
        // preceding field's text.
        if marks.iter().any(|(f, _, _)| *f == field) {
            continue;
        }
        marks.push((field, whole.start(), whole.end()));
    }

    let segment = |field: Field| -> Option<&str> {
        let idx = marks.iter().position(|(f, _, _)| *f == field)?;
        let start = marks[idx].2;
        let end = marks
            .iter()
            .map(|(_, s, _)| *s)
            .filter(|s| *s >= start)
            .min()
            .unwrap_or(text.len());
        Some(text[start..end].trim())
    };

    let thoughts =
        segment(Field::Thoughts).ok_or(PredictionParseError::MissingField(THOUGHTS_KEY))?;
    let actions_text =
        segment(Field::Actions).ok_or(PredictionParseError::MissingField(ACTIONS_KEY))?;
    let value = segment(Field::Value).ok_or(PredictionParseError::MissingField(VALUE_KEY))?;

    let actions = if actions_text.is_empty() {
        Vec::new()
    } else {
        let (parsed, used) = parse_value_prefix(actions_text)
            .map_err(|e| PredictionParseError::MalformedActions(e.to_string()))?;
        if !actions_text[used..].trim().is_empty() {
            return Err(PredictionParseError::MalformedActions(
                "unexpected text after the action list".into(),
            ));
        }
        actions_from_value(&parsed)?
    };

    Ok(UnifiedPrediction {
        thoughts: thoughts.to_owned(),
        actions,
        value: value.to_owned(),
    })
}
