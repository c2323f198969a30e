//! Client for OpenAI-compatible chat completion endpoints, and adapters
//! that put it behind the planner, judge and data-generation interfaces.
//!
//! Configuration comes from `LLM_API_BASE`, `LLM_API_KEY` and `LLM_MODEL`.

use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use skillplug_core::datagen::{
    AnswerSynthesizer, DatagenError, KnowledgeChecker, Rewriter, SynthesisRequest,
};
use skillplug_core::eval::{Judge, JudgeVerdict};

use crate::client::post_json;
use crate::worker::TextGenerator;

pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChatMessage {
    role: String,
    content: String,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    base: String,
    key: Option<String>,
    pub model: String,
    pub temperature: f64,
    http: reqwest::blocking::Client,
}

impl LlmClient {
    pub fn new(base: &str, key: Option<String>, model: impl Into<String>) -> Self {
        let mut headers = reqwest::header::HeaderMap::new();
        if let Some(k) = &key {
            if let Ok(v) = reqwest::header::HeaderValue::from_str(&format!("Bearer {k}")) {
                headers.insert(reqwest::header::AUTHORIZATION, v);
            }
        }
        LlmClient {
            base: base.trim_end_matches('/').to_owned(),
            key,
            model: model.into(),
            temperature: 0.0,
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .default_headers(headers)
                .build()
                .expect("http client"),
        }
    }

    pub fn from_env() -> Self {
        let base = std::env::var("LLM_API_BASE").unwrap_or_else(|_| DEFAULT_API_BASE.into());
        let key = std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        let model = std::env::var("LLM_MODEL").unwrap_or_else(|_| DEFAULT_MODEL.into());
        Self::new(&base, key, model)
    }

    pub fn has_key(&self) -> bool {
        self.key.is_some()
    }

    /// One system prompt, one user message; returns the first choice.
    pub fn chat(&self, system: &str, user: &str, stop: Option<&str>) -> Result<String, String> {
        let url = format!("{}/chat/completions", self.base);
        let body = ChatRequest {
            model: &self.model,
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: system.into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: user.into(),
                },
            ],
            temperature: self.temperature,
            stop: stop.map(|s| vec![s.to_owned()]),
        };
        let reply: ChatResponse = post_json(&self.http, &url, &body).map_err(|e| e.to_string())?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "completion has no choices".to_owned())
    }
}

const PLANNER_SYSTEM: &str = "You are a multimodal assistant that can call vision tools. \
Continue the conversation as the Assistant. Reply with one JSON object with the keys \
\"thoughts\", \"actions\" (a list of {\"API_name\", \"API_params\"}) and \"value\".";

/// Hosts a chat model as a planner worker.
#[derive(Debug, Clone)]
pub struct LlmGenerator(pub LlmClient);

impl TextGenerator for LlmGenerator {
    fn generate(&self, context: &str, stop_token: &str) -> Result<String, String> {
        self.0.chat(PLANNER_SYSTEM, context, Some(stop_token))
    }
}

const JUDGE_SYSTEM: &str = "You are a careful reviewer of answers about images.";

static SCORE_PAIR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(\d+(?:\.\d+)?)\s*[,\s]\s*(\d+(?:\.\d+)?)").expect("score pattern")
});

/// Reads "<reference> <model>" from the first nonblank line.
pub fn parse_score_pair(text: &str) -> Option<(f64, f64)> {
    let line = text.lines().find(|l| !l.trim().is_empty())?;
    let caps = SCORE_PAIR.captures(line)?;
    Some((caps[1].parse().ok()?, caps[2].parse().ok()?))
}

/// Scores the model answer against the gold answer with a chat model.
/// The gold answer is shown as Assistant 1.
#[derive(Debug, Clone)]
pub struct LlmJudge(pub LlmClient);

impl Judge for LlmJudge {
    fn judge(&self, question: &str, answer: &str, gold: &str) -> Result<JudgeVerdict, String> {
        let prompt = format!(
            "[Question]\n{question}\n\n[Assistant 1]\n{gold}\n[End of Assistant 1]\n\n\
             [Assistant 2]\n{answer}\n[End of Assistant 2]\n\n\
             Rate the helpfulness, relevance, accuracy and level of detail of both answers \
             on a scale of 1 to 10. On the first line write only the two scores, Assistant 1 \
             first, separated by a space. Then explain your rating."
        );
        let reply = self.0.chat(JUDGE_SYSTEM, &prompt, None)?;
        let (reference, model) = parse_score_pair(&reply)
            .ok_or_else(|| format!("no score pair in judge reply: {reply:?}"))?;
        JudgeVerdict::new(model, reference, reply.clone()).map_err(|e| e.to_string())
    }
}

fn backend_err(e: String) -> DatagenError {
    DatagenError::Backend(e)
}

#[derive(Debug, Clone)]
pub struct LlmRewriter(pub LlmClient);

impl Rewriter for LlmRewriter {
    fn rewrite(&self, text: &str, seed: u64) -> Result<String, DatagenError> {
        let prompt = format!(
            "Rewrite the request below with different wording and the same meaning. \
             Keep anything inside brackets unchanged. Reply with the rewritten request only. \
             (variant {seed})\n\n{text}"
        );
        let out = self
            .0
            .chat("You paraphrase user requests.", &prompt, None)
            .map_err(backend_err)?;
        let out = out.trim();
        if out.is_empty() {
            Err(DatagenError::Backend("empty rewrite".into()))
        } else {
            Ok(out.to_owned())
        }
    }
}

#[derive(Debug, Clone)]
pub struct LlmSynthesizer(pub LlmClient);

impl AnswerSynthesizer for LlmSynthesizer {
    fn synthesize(&self, request: &SynthesisRequest<'_>) -> Result<String, DatagenError> {
        let payload = serde_json::to_string_pretty(request)
            .map_err(|e| DatagenError::Backend(e.to_string()))?;
        let prompt = format!(
            "Using the previous questions, the tool outputs and the image context below, \
             write the assistant's final answer to the last question. Reply with the answer \
             only.\n\n{payload}"
        );
        self.0
            .chat("You answer questions about images.", &prompt, None)
            .map(|s| s.trim().to_owned())
            .map_err(backend_err)
    }
}

#[derive(Debug, Clone)]
pub struct LlmKnowledgeChecker(pub LlmClient);

impl KnowledgeChecker for LlmKnowledgeChecker {
    fn derivable(&self, answer: &str, retrieved: &[String]) -> Result<bool, DatagenError> {
        let items: Vec<String> = retrieved.iter().map(|r| format!("- {r}")).collect();
        let prompt = format!(
            "Retrieved items:\n{}\n\nAnswer: {answer}\n\n\
             Can the answer be derived from the retrieved items? Reply yes or no.",
            items.join("\n")
        );
        let reply = self
            .0
            .chat("You check answers against evidence.", &prompt, None)
            .map_err(backend_err)?;
        Ok(reply.trim_start().to_lowercase().starts_with("yes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_pairs() {
        assert_eq!(parse_score_pair("8 9\nbecause"), Some((8.0, 9.0)));
        assert_eq!(parse_score_pair("\n 7.5, 6\n"), Some((7.5, 6.0)));
        assert_eq!(parse_score_pair("eight nine"), None);
    }
}
