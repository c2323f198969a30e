//! Text backends used while generating data, with offline defaults.

use serde::{Deserialize, Serialize};

use super::context::ImageContext;
use super::DatagenError;
use crate::format::value::map_to_json;
use crate::format::{ImageRef, Value, ValueMap};
use crate::serving::mock::{caption_terms, mock_primitive_output};
use crate::serving::{BackendError, ToolBackend};

/// Paraphrases a text. Implementations must be pure in `(text, seed)`.
pub trait Rewriter: Send + Sync {
    fn rewrite(&self, text: &str, seed: u64) -> Result<String, DatagenError>;
}

/// Picks one of a fixed set of surface variations by seed.
#[derive(Debug, Clone, Copy, Default)]
pub struct RotationRewriter;

const LEAD_INS: &[&str] = &[
    "",
    "Please tell me: ",
    "Quick question. ",
    "I need some help. ",
    "Hi! ",
];

impl Rewriter for RotationRewriter {
    fn rewrite(&self, text: &str, seed: u64) -> Result<String, DatagenError> {
        let lead = LEAD_INS[(seed % LEAD_INS.len() as u64) as usize];
        Ok(format!("{lead}{text}"))
    }
}

/// Leaves text untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn rewrite(&self, text: &str, _seed: u64) -> Result<String, DatagenError> {
        Ok(text.to_owned())
    }
}

/// Everything the answer writer may look at.
#[derive(Debug, Clone, Serialize)]
pub struct SynthesisRequest<'a> {
    pub questions: Vec<String>,
    pub tool_outputs: Vec<(String, ValueMap)>,
    pub context: &'a ImageContext,
}

pub trait AnswerSynthesizer: Send + Sync {
    fn synthesize(&self, request: &SynthesisRequest<'_>) -> Result<String, DatagenError>;
}

/// Builds the answer from fixed sentences per output field.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateSynthesizer;

fn list_texts(v: &Value) -> Vec<String> {
    v.as_list()
        .map(|items| {
            items
                .iter()
                .map(|i| i.as_str().map(str::to_owned).unwrap_or_else(|| i.to_json()))
                .collect()
        })
        .unwrap_or_default()
}

fn describe_output(name: &str, out: &ValueMap) -> String {
    let mut parts = Vec::new();
    if let Some(err) = out.get("error").and_then(Value::as_str) {
        return format!("{name} could not finish ({err}).");
    }
    if let Some(c) = out.get("caption").and_then(Value::as_str) {
        parts.push(format!("The image shows {c}."));
    }
    if let Some(tags) = out.get("tags") {
        parts.push(format!("Recognized tags: {}.", list_texts(tags).join(", ")));
    }
    if let (Some(boxes), Some(phrases)) = (
        out.get("boxes").and_then(Value::as_list),
        out.get("phrases"),
    ) {
        let phrases = list_texts(phrases);
        let located: Vec<String> = boxes
            .iter()
            .zip(&phrases)
            .map(|(b, p)| format!("{p} at {}", b.to_json()))
            .collect();
        parts.push(format!(
            "Located {} region(s): {}.",
            located.len(),
            located.join("; ")
        ));
    }
    if let Some(texts) = out.get("texts") {
        let quoted: Vec<String> = list_texts(texts)
            .iter()
            .map(|t| format!("\"{t}\""))
            .collect();
        parts.push(format!("The visible text reads {}.", quoted.join(", ")));
    }
    if let Some(labels) = out.get("labels") {
        parts.push(format!(
            "The scene is divided into {}.",
            list_texts(labels).join(", ")
        ));
    }
    if let Some(masks) = out.get("masks").and_then(Value::as_list) {
        parts.push(format!(
            "The segmentation returned {} mask(s).",
            masks.len()
        ));
    }
    if let Some(image) = out.get("image").and_then(Value::as_str) {
        parts.push(format!("The new image is ready: {image}."));
    }
    if let Some(items) = out.get("items") {
        if let Some(first) = list_texts(items).first() {
            parts.push(format!("The best matching knowledge entry is {first}."));
        }
    }
    if parts.is_empty() {
        parts.push(format!("{name} returned {}.", map_to_json(out)));
    }
    parts.join(" ")
}

impl AnswerSynthesizer for TemplateSynthesizer {
    fn synthesize(&self, request: &SynthesisRequest<'_>) -> Result<String, DatagenError> {
        let mut parts: Vec<String> = request
            .tool_outputs
            .iter()
            .map(|(name, out)| describe_output(name, out))
            .collect();
        if request.tool_outputs.is_empty() {
            if let Some(c) = request.context.captions.first() {
                parts.push(c.clone());
            }
        }
        Ok(parts.join(" "))
    }
}

/// Decides whether an answer follows from retrieved items.
pub trait KnowledgeChecker: Send + Sync {
    fn derivable(&self, answer: &str, retrieved: &[String]) -> Result<bool, DatagenError>;
}

/// Accepts when the answer occurs, case-insensitively, inside some item.
#[derive(Debug, Clone, Copy, Default)]
pub struct SubstringChecker;

impl KnowledgeChecker for SubstringChecker {
    fn derivable(&self, answer: &str, retrieved: &[String]) -> Result<bool, DatagenError> {
        let needle = answer.trim().to_lowercase();
        Ok(!needle.is_empty()
            && retrieved
                .iter()
                .any(|item| item.to_lowercase().contains(&needle)))
    }
}

/// The preset thoughts and values written into skill-use and answer turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetBank {
    pub use_thoughts: Vec<String>,
    pub use_values: Vec<String>,
    pub answer_thoughts: Vec<String>,
}

impl Default for PresetBank {
    fn default() -> Self {
        let v = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        PresetBank {
            use_thoughts: v(&[
                "This request needs {skill}; its output will ground the answer.",
                "Answering well depends on running {skill} on the image first.",
                "I should call {skill} before replying.",
            ]),
            use_values: v(&[
                "I will call {skill} to handle this. One moment please.",
                "Let me run {skill} first, then I will reply.",
                "Running {skill} now.",
            ]),
            answer_thoughts: v(&[
                "The {skill} output is available, so I can reply.",
                "With the results of {skill} in hand the question can be answered.",
            ]),
        }
    }
}

impl PresetBank {
    pub fn pick(items: &[String], index: u64, skill: &str) -> String {
        items[(index % items.len() as u64) as usize].replace("{skill}", skill)
    }
}

/// Serves ground-truth-backed outputs where the context has them and falls
/// back to the mocks elsewhere: captions from the annotations, tags from the
/// categories, and detector boxes from the matching instances.
pub struct ContextToolBackend<'a> {
    pub context: &'a ImageContext,
    pub seed: u64,
}

impl ToolBackend for ContextToolBackend<'_> {
    fn invoke(
        &self,
        skill: &str,
        params: &ValueMap,
        images: &[ImageRef],
    ) -> Result<ValueMap, BackendError> {
        let ctx = self.context;
        let mut out = ValueMap::new();
        match skill {
            "blip2" if !ctx.captions.is_empty() => {
                out.insert("caption".into(), Value::text(ctx.captions[0].clone()));
                return Ok(out);
            }
            "ram" if !ctx.objects.is_empty() => {
                let tags = ctx.categories().into_iter().map(Value::text).collect();
                out.insert("tags".into(), Value::List(tags));
                return Ok(out);
            }
            "grounding_dino" => {
                let caption = params.get("caption").and_then(Value::as_str).unwrap_or("");
                let terms: Vec<String> = caption_terms(caption)
                    .iter()
                    .map(|t| t.to_lowercase())
                    .collect();
                let hits: Vec<_> = ctx
                    .objects
                    .iter()
                    .filter(|o| terms.iter().any(|t| *t == o.category.to_lowercase()))
                    .collect();
                if !hits.is_empty() {
                    let boxes = hits.iter().map(|o| Value::numbers(&o.bbox, 2)).collect();
                    let logits: Vec<f64> = (0..hits.len())
                        .map(|i| 0.9 - 0.05 * (i % 8) as f64)
                        .collect();
                    let phrases = hits
                        .iter()
                        .map(|o| Value::text(o.category.clone()))
                        .collect();
                    out.insert("boxes".into(), Value::List(boxes));
                    out.insert("logits".into(), Value::numbers(&logits, 2));
                    out.insert("phrases".into(), Value::List(phrases));
                    return Ok(out);
                }
            }
            _ => {}
        }
        mock_primitive_output(skill, params, images, self.seed)
            .ok_or_else(|| BackendError::Failed(format!("no generator backend for `{skill}`")))
    }
}
