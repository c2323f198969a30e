//! Deterministic stand-ins for every builtin tool.
//!
//! Outputs depend only on the skill name, the call parameters, the image ids
//! and a seed, hashed with SHA-256 into a ChaCha stream.

use std::collections::BTreeSet;
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::executor::{BackendError, ToolBackend, ToolResult};
use crate::format::value::map_to_json;
use crate::format::{ImageRef, ToolCall, Value, ValueMap};

pub const DEFAULT_RETRIEVAL_K: usize = 5;

const VOCABULARY: &[&str] = &[
    "person", "dog", "cat", "car", "bicycle", "bench", "tree", "building", "sky", "grass", "table",
    "chair", "cup", "umbrella", "boat", "train", "horse", "bird", "road", "window",
];

const OCR_BANK: &[&str] = &[
    "STOP",
    "OPEN",
    "EXIT",
    "SALE 50%",
    "MAIN ST",
    "CAFE",
    "NO PARKING",
    "WELCOME",
];

const KNOWLEDGE_BANK: &[&str] = &[
    "encyclopedia entry on the pictured landmark",
    "species description and native habitat",
    "manufacturer and production years",
    "history of the depicted building",
    "typical size and weight",
    "first recorded use of the object",
    "regional name variants",
];

const GRANULARITY: &[&str] = &["whole", "part", "subpart"];

fn seed_for(skill: &str, params: &ValueMap, images: &[ImageRef], seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(skill.as_bytes());
    h.update([0]);
    h.update(map_to_json(params).as_bytes());
    h.update([0]);
    for img in images {
        h.update(img.id.as_bytes());
        h.update([0]);
    }
    h.update(seed.to_le_bytes());
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn round2(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..=hi);
    (v * 100.0).round() / 100.0
}

/// Splits a grounding caption into object terms on `.`, `,` and ` and `.
pub fn caption_terms(caption: &str) -> Vec<String> {
    caption
        .split(['.', ','])
        .flat_map(|chunk| chunk.split(" and "))
        .map(|t| t.trim().to_owned())
        .filter(|t| !t.is_empty())
        .collect()
}

fn random_box(rng: &mut ChaCha8Rng) -> Value {
    let x1 = round2(rng, 0.0, 0.7);
    let y1 = round2(rng, 0.0, 0.7);
    let x2 = round2(rng, x1 + 0.05, 1.0).min(1.0);
    let y2 = round2(rng, y1 + 0.05, 1.0).min(1.0);
    Value::numbers(&[x1, y1, x2, y2], 2)
}

fn texts<I: IntoIterator<Item = S>, S: Into<String>>(items: I) -> Value {
    Value::List(items.into_iter().map(|s| Value::text(s)).collect())
}

fn pick_distinct(rng: &mut ChaCha8Rng, bank: &[&str], n: usize) -> Vec<String> {
    bank.choose_multiple(rng, n.min(bank.len()))
        .map(|s| s.to_string())
        .collect()
}

fn detector(rng: &mut ChaCha8Rng, caption: &str) -> ValueMap {
    let terms = caption_terms(caption);
    let k = if terms.is_empty() {
        rng.random_range(1..=3)
    } else {
        terms.len().min(3)
    };
    let mut boxes = Vec::with_capacity(k);
    let mut logits = Vec::with_capacity(k);
    let mut phrases = Vec::with_capacity(k);
    for i in 0..k {
        boxes.push(random_box(rng));
        logits.push(round2(rng, 0.25, 1.0));
        phrases.push(terms.get(i).cloned().unwrap_or_else(|| "object".into()));
    }
    let mut out = ValueMap::new();
    out.insert("boxes".into(), Value::List(boxes));
    out.insert("logits".into(), Value::numbers(&logits, 2));
    out.insert("phrases".into(), texts(phrases));
    out
}

fn masks(rng: &mut ChaCha8Rng, skill: &str, tag: &str, n: usize) -> (Value, Value) {
    let refs = (0..n).map(|i| format!("mask://{skill}/{tag}-{i}"));
    let scores: Vec<f64> = (0..n).map(|_| round2(rng, 0.5, 1.0)).collect();
    (texts(refs), Value::numbers(&scores, 2))
}

/// Deterministic output for one primitive invocation. `None` for skills the
/// mock does not know.
pub fn mock_primitive_output(
    skill: &str,
    params: &ValueMap,
    images: &[ImageRef],
    seed: u64,
) -> Option<ValueMap> {
    let digest = seed_for(skill, params, images, seed);
    let tag = hex(&digest[..6]);
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut out = ValueMap::new();
    match skill {
        "grounding_dino" => {
            let caption = params.get("caption").and_then(Value::as_str).unwrap_or("");
            out = detector(&mut rng, caption);
        }
        "openseed" => {
            let n = rng.random_range(2..=4);
            out.insert("mask".into(), Value::text(format!("mask://openseed/{tag}")));
            out.insert(
                "labels".into(),
                texts(pick_distinct(&mut rng, VOCABULARY, n)),
            );
        }
        "blip2" => {
            let subject = pick_distinct(&mut rng, VOCABULARY, 2);
            out.insert(
                "caption".into(),
                Value::text(format!("a photo of a {} near a {}", subject[0], subject[1])),
            );
        }
        "ram" => {
            let n = rng.random_range(3..=5);
            let tags = pick_distinct(&mut rng, VOCABULARY, n);
            out.insert("tags".into(), texts(tags));
        }
        "easyocr" => {
            let n = rng.random_range(1..=3);
            let words = pick_distinct(&mut rng, OCR_BANK, n);
            let boxes = (0..words.len()).map(|_| random_box(&mut rng)).collect();
            out.insert("texts".into(), texts(words));
            out.insert("boxes".into(), Value::List(boxes));
        }
        "clip_retrieval" => {
            let k = params
                .get("k")
                .and_then(Value::as_f64)
                .map(|k| k.max(1.0) as usize)
                .unwrap_or(DEFAULT_RETRIEVAL_K);
            let mut scores: Vec<f64> = (0..k).map(|_| round2(&mut rng, 0.1, 1.0)).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let items = (0..k).map(|i| {
                let entry = KNOWLEDGE_BANK[(i + digest[6] as usize) % KNOWLEDGE_BANK.len()];
                format!("top-{}: {entry}", i + 1)
            });
            out.insert("items".into(), texts(items));
            out.insert("scores".into(), Value::numbers(&scores, 2));
        }
        "stable_diffusion" | "instruct_pix2pix" | "controlnet" => {
            out.insert(
                "image".into(),
                Value::text(format!("image://{skill}/{}", hex(&digest[..8]))),
            );
        }
        "sam" => {
            let n = params
                .get("boxes")
                .and_then(Value::as_list)
                .filter(|b| !b.is_empty() && b[0].as_list().is_some())
                .map(|b| b.len())
                .unwrap_or(1);
            let (m, s) = masks(&mut rng, skill, &tag, n);
            out.insert("masks".into(), m);
            out.insert("scores".into(), s);
        }
        "semantic_sam" => {
            let (m, s) = masks(&mut rng, skill, &tag, GRANULARITY.len());
            out.insert("masks".into(), m);
            out.insert("scores".into(), s);
            out.insert("levels".into(), texts(GRANULARITY.iter().copied()));
        }
        "seem" => {
            let (m, s) = masks(&mut rng, skill, &tag, 1);
            out.insert("masks".into(), m);
            out.insert("scores".into(), s);
        }
        _ => return None,
    }
    Some(out)
}

/// Mock result for a primitive call. Unknown skills give an error result.
pub fn mock_tool_output(call: &ToolCall, images: &[ImageRef], seed: u64) -> ToolResult {
    match mock_primitive_output(&call.api_name, &call.api_params, images, seed) {
        Some(out) => ToolResult::ok(call.api_name.clone(), out),
        None => ToolResult::error(
            call.api_name.clone(),
            format!("mock has no skill `{}`", call.api_name),
        ),
    }
}

/// In-process backend over the mocks, with switchable failures per skill.
#[derive(Debug, Default)]
pub struct MockToolBackend {
    pub seed: u64,
    down: Mutex<BTreeSet<String>>,
}

impl MockToolBackend {
    pub fn new(seed: u64) -> Self {
        MockToolBackend {
            seed,
            down: Mutex::default(),
        }
    }

    pub fn take_down(&self, skill: &str) {
        self.down
            .lock()
            .expect("down lock")
            .insert(skill.to_owned());
    }

    pub fn bring_up(&self, skill: &str) {
        self.down.lock().expect("down lock").remove(skill);
    }
}

impl ToolBackend for MockToolBackend {
    fn invoke(
        &self,
        skill: &str,
        params: &ValueMap,
        images: &[ImageRef],
    ) -> Result<ValueMap, BackendError> {
        if self.down.lock().expect("down lock").contains(skill) {
            return Err(BackendError::Failed(format!("{skill} worker is down")));
        }
        mock_primitive_output(skill, params, images, self.seed)
            .ok_or_else(|| BackendError::Failed(format!("mock has no skill `{skill}`")))
    }
}
