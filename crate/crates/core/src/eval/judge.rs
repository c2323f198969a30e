use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub score_model: f64,
    pub score_reference: f64,
    pub rationale: String,
}

impl JudgeVerdict {
    pub fn new(
        score_model: f64,
        score_reference: f64,
        rationale: impl Into<String>,
    ) -> Result<Self, EvalError> {
        for (name, v) in [("model", score_model), ("reference", score_reference)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EvalError::InvalidVerdict(format!(
                    "{name} score {v} is not positive"
                )));
            }
        }
        Ok(JudgeVerdict {
            score_model,
            score_reference,
            rationale: rationale.into(),
        })
    }

    /// `100 * model / reference`.
    pub fn relative(&self) -> f64 {
        100.0 * self.score_model / self.score_reference
    }
}

/// Scores a model answer and the gold answer to the same question.
pub trait Judge: Send + Sync {
    fn judge(&self, question: &str, answer: &str, gold: &str) -> Result<JudgeVerdict, String>;
}

impl<T: Judge + ?Sized> Judge for &T {
    fn judge(&self, question: &str, answer: &str, gold: &str) -> Result<JudgeVerdict, String> {
        (**self).judge(question, answer, gold)
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bag-of-words F1 between lowercased alphanumeric tokens.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    if ta.is_empty() || tb.is_empty() {
        return if ta.is_empty() && tb.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &tb {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &ta {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / ta.len() as f64;
    let r = common as f64 / tb.len() as f64;
    2.0 * p * r / (p + r)
}

/// Deterministic offline judge: the reference always gets 10 and the
/// model gets `10 * token_f1`, floored at `floor`. An answer identical to
/// the gold gets exactly 10.
#[derive(Debug, Clone, Copy)]
pub struct StubJudge {
    pub floor: f64,
}

impl Default for StubJudge {
    fn default() -> Self {
        StubJudge { floor: 0.1 }
    }
}

impl Judge for StubJudge {
    fn judge(&self, _question: &str, answer: &str, gold: &str) -> Result<JudgeVerdict, String> {
        let model = if answer == gold {
            10.0
        } else {
            (10.0 * token_f1(answer, gold)).max(self.floor)
        };
        JudgeVerdict::new(model, 10.0, "token overlap with the gold answer")
            .map_err(|e| e.to_string())
    }
}
