//! Dialogue turns, the turn grammar, and linearization with a loss mask.
//!
//! A training sample is a list of rounds. Each round opens with a user
//! instruction and closes with an assistant prediction. If that prediction
//! requests skills, the round continues with a human-role skill-result turn
//! and a second assistant prediction that must not request skills again:
//!
//! ```text
//! Human: <image>\n question <STOP> Assistant: skill_use <STOP>
//! Human: skill_result <STOP> Assistant: answer <STOP>
//! ```
//!
//! Only the assistant contents (with their stop tokens) are trained on.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prediction::{serialize_unified_prediction, UnifiedPrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Human,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Human => "Human",
            Role::Assistant => "Assistant",
        })
    }
}

/// Where the image content lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Uri(String),
    /// Base64-encoded bytes.
    Inline(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub source: ImageSource,
}

impl ImageRef {
    pub fn uri(id: impl Into<String>, uri: impl Into<String>) -> Self {
        ImageRef {
            id: id.into(),
            source: ImageSource::Uri(uri.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DialogueTurn {
    UserInstruction {
        text: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        images: Vec<ImageRef>,
    },
    Prediction {
        prediction: UnifiedPrediction,
    },
    SkillResult {
        text: String,
    },
}

impl DialogueTurn {
    pub fn user(text: impl Into<String>, images: Vec<ImageRef>) -> Self {
        DialogueTurn::UserInstruction {
            text: text.into(),
            images,
        }
    }

    pub fn prediction(prediction: UnifiedPrediction) -> Self {
        DialogueTurn::Prediction { prediction }
    }

    pub fn skill_result(text: impl Into<String>) -> Self {
        DialogueTurn::SkillResult { text: text.into() }
    }

    pub fn role(&self) -> Role {
        match self {
            DialogueTurn::Prediction { .. } => Role::Assistant,
            DialogueTurn::UserInstruction { .. } | DialogueTurn::SkillResult { .. } => Role::Human,
        }
    }

    /// Assistant turns, and only those, contribute to the training loss.
    pub fn is_loss_bearing(&self) -> bool {
        self.role() == Role::Assistant
    }

    pub fn as_prediction(&self) -> Option<&UnifiedPrediction> {
        match self {
            DialogueTurn::Prediction { prediction } => Some(prediction),
            _ => None,
        }
    }
}

/// Literals used when a turn list is linearized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializationProfile {
    pub stop_token: String,
    pub newline_token: String,
    pub image_token: String,
    /// Placed between consecutive turns.
    pub separator: String,
    pub human_literal: String,
    pub assistant_literal: String,
}

impl Default for SerializationProfile {
    fn default() -> Self {
        SerializationProfile {
            stop_token: "<STOP>".into(),
            newline_token: "\n".into(),
            image_token: "<image>".into(),
            separator: " ".into(),
            human_literal: "Human: ".into(),
            assistant_literal: "Assistant: ".into(),
        }
    }
}

impl SerializationProfile {
    pub fn role_literal(&self, role: Role) -> &str {
        match role {
            Role::Human => &self.human_literal,
            Role::Assistant => &self.assistant_literal,
        }
    }

    /// Turn body without role literal or stop token.
    pub fn turn_content(&self, turn: &DialogueTurn) -> String {
        match turn {
            DialogueTurn::UserInstruction { text, images } => {
                let mut out = String::new();
                for _ in images {
                    out.push_str(&self.image_token);
                    out.push_str(&self.newline_token);
                }
                out.push_str(text);
                out
            }
            DialogueTurn::Prediction { prediction } => serialize_unified_prediction(prediction),
            DialogueTurn::SkillResult { text } => text.clone(),
        }
    }

    /// Renders a (possibly incomplete) turn prefix followed by the assistant
    /// literal, the prompt a planner completes.
    pub fn render_prompt(&self, turns: &[DialogueTurn]) -> String {
        let mut out = String::new();
        for turn in turns {
            out.push_str(self.role_literal(turn.role()));
            out.push_str(&self.turn_content(turn));
            out.push_str(&self.stop_token);
            out.push_str(&self.separator);
        }
        out.push_str(&self.assistant_literal);
        out
    }

    /// Extracts the text of the last human turn from a rendered prompt.
    pub fn latest_human_text<'a>(&self, context: &'a str) -> Option<&'a str> {
        let start = context.rfind(&self.human_literal)? + self.human_literal.len();
        let rest = &context[start..];
        let end = rest.find(&self.stop_token).unwrap_or(rest.len());
        let mut body = &rest[..end];
        let image_line = format!("{}{}", self.image_token, self.newline_token);
        while let Some(stripped) = body.strip_prefix(image_line.as_str()) {
            body = stripped;
        }
        Some(body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSequence {
    pub turns: Vec<DialogueTurn>,
    #[serde(default)]
    pub profile: SerializationProfile,
}

impl TrainingSequence {
    pub fn new(turns: Vec<DialogueTurn>) -> Self {
        TrainingSequence {
            turns,
            profile: SerializationProfile::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    /// A skill-requesting prediction is not followed by a skill result.
    DanglingDispatch,
    /// A skill result appears without a preceding skill request.
    SkillResultWithoutDispatch,
    /// Turn order breaks the human/assistant alternation.
    RoleAlternationBroken,
    /// The prediction after a skill result requests skills again.
    ChainedDispatch,
    /// The list is empty or ends before the assistant has answered.
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub turn: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at turn {}", self.kind, self.turn)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Expect {
    Instruction,
    Planner,
    SkillResult,
    Aggregation,
}

fn walk(turns: &[DialogueTurn]) -> (Vec<Violation>, Expect) {
    let mut violations = Vec::new();
    let mut state = Expect::Instruction;
    for (i, turn) in turns.iter().enumerate() {
        let mut flag = |kind| violations.push(Violation { turn: i, kind });
        state = match (state, turn) {
            (Expect::Instruction, DialogueTurn::UserInstruction { .. }) => Expect::Planner,
            (Expect::Instruction, DialogueTurn::SkillResult { .. }) => {
                flag(ViolationKind::SkillResultWithoutDispatch);
                Expect::Aggregation
            }
            (Expect::Instruction, DialogueTurn::Prediction { prediction }) => {
                flag(ViolationKind::RoleAlternationBroken);
                after_prediction(prediction)
            }
            (Expect::Planner, DialogueTurn::Prediction { prediction }) => {
                after_prediction(prediction)
            }
            (Expect::Planner, DialogueTurn::UserInstruction { .. }) => {
                flag(ViolationKind::RoleAlternationBroken);
                Expect::Planner
            }
            (Expect::Planner, DialogueTurn::SkillResult { .. }) => {
                flag(ViolationKind::SkillResultWithoutDispatch);
                Expect::Aggregation
            }
            (Expect::SkillResult, DialogueTurn::SkillResult { .. }) => Expect::Aggregation,
            (Expect::SkillResult, DialogueTurn::UserInstruction { .. }) => {
                flag(ViolationKind::DanglingDispatch);
                Expect::Planner
            }
            (Expect::SkillResult, DialogueTurn::Prediction { prediction }) => {
                flag(ViolationKind::DanglingDispatch);
                after_prediction(prediction)
            }
            (Expect::Aggregation, DialogueTurn::Prediction { prediction }) => {
                if prediction.invokes_skills() {
                    flag(ViolationKind::ChainedDispatch);
                }
                Expect::Instruction
            }
            (Expect::Aggregation, DialogueTurn::UserInstruction { .. }) => {
                flag(ViolationKind::RoleAlternationBroken);
                Expect::Planner
            }
            (Expect::Aggregation, DialogueTurn::SkillResult { .. }) => {
                flag(ViolationKind::SkillResultWithoutDispatch);
                Expect::Aggregation
            }
        };
    }
    (violations, state)
}

fn after_prediction(p: &UnifiedPrediction) -> Expect {
    if p.invokes_skills() {
        Expect::SkillResult
    } else {
        Expect::Instruction
    }
}

/// Checks a complete training sample against the turn grammar.
pub fn validate_sequence_grammar(turns: &[DialogueTurn]) -> Result<(), Vec<Violation>> {
    let (mut violations, end) = walk(turns);
    match end {
        Expect::Instruction if !turns.is_empty() => {}
        Expect::SkillResult => violations.push(Violation {
            turn: turns.len() - 1,
            kind: ViolationKind::DanglingDispatch,
        }),
        _ => violations.push(Violation {
            turn: turns.len(),
            kind: ViolationKind::Incomplete,
        }),
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Checks that `turns` can still be extended into a valid sample.
pub fn validate_prefix(turns: &[DialogueTurn]) -> Result<(), Vec<Violation>> {
    let (violations, _) = walk(turns);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// One run of characters in the rendered text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpan {
    pub start: usize,
    pub end: usize,
    pub trained: bool,
}

/// Character-offset spans (Unicode scalar values) covering the whole text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LossMask {
    pub spans: Vec<MaskSpan>,
}

impl LossMask {
    fn push(&mut self, len: usize, trained: bool) {
        if len == 0 {
            return;
        }
        match self.spans.last_mut() {
            Some(last) if last.trained == trained => last.end += len,
            last => {
                let start = last.map_or(0, |s| s.end);
                self.spans.push(MaskSpan {
                    start,
                    end: start + len,
                    trained,
                });
            }
        }
    }

    pub fn trained_spans(&self) -> impl Iterator<Item = &MaskSpan> {
        self.spans.iter().filter(|s| s.trained)
    }

    /// Total length covered, in characters.
    pub fn len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Slices `text` by a span's character offsets.
    pub fn slice<'a>(text: &'a str, span: &MaskSpan) -> &'a str {
        let mut indices = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()));
        let start = indices.nth(span.start).unwrap_or(text.len());
        let end = if span.end == span.start {
            start
        } else {
            indices.nth(span.end - span.start - 1).unwrap_or(text.len())
        };
        &text[start..end]
    }

    /// `[[start, end, trained], ...]` export form.
    pub fn to_triples(&self) -> Vec<(usize, usize, bool)> {
        self.spans
            .iter()
            .map(|s| (s.start, s.end, s.trained))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("invalid sequence: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    InvalidSequence(Vec<Violation>),
}

/// Linearizes a valid sequence and computes which characters are trained on.
pub fn render_training_sequence(seq: &TrainingSequence) -> Result<(String, LossMask), RenderError> {
    validate_sequence_grammar(&seq.turns).map_err(RenderError::InvalidSequence)?;
    let profile = &seq.profile;
    let mut text = String::new();
    let mut mask = LossMask::default();
    let mut emit = |piece: &str, trained: bool, text: &mut String| {
        text.push_str(piece);
        mask.push(piece.chars().count(), trained);
    };
    for (i, turn) in seq.turns.iter().enumerate() {
        if i > 0 {
            emit(&profile.separator, false, &mut text);
        }
        let trained = turn.is_loss_bearing();
        emit(profile.role_literal(turn.role()), false, &mut text);
        emit(&profile.turn_content(turn), trained, &mut text);
        emit(&profile.stop_token, trained, &mut text);
    }
    Ok((text, mask))
}

/// One line of the training JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub turns: Vec<TurnRecord>,
    pub text: String,
    pub mask: Vec<(usize, usize, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub role: Role,
    pub loss: bool,
    #[serde(flatten)]
    pub turn: DialogueTurn,
}

impl SequenceRecord {
    pub fn from_sequence(seq: &TrainingSequence) -> Result<Self, RenderError> {
        let (text, mask) = render_training_sequence(seq)?;
        Ok(SequenceRecord {
            turns: seq
                .turns
                .iter()
                .map(|t| TurnRecord {
                    role: t.role(),
                    loss: t.is_loss_bearing(),
                    turn: t.clone(),
                })
                .collect(),
            text,
            mask: mask.to_triples(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::prediction::ToolCall;

    fn dispatch() -> UnifiedPrediction {
        UnifiedPrediction::new("t", vec![ToolCall::new("blip2")], "wait")
    }

    fn answer() -> UnifiedPrediction {
        UnifiedPrediction::answer("t", "done")
    }

    #[test]
    fn single_round_accepted() {
        let turns = vec![
            DialogueTurn::user("q", vec![]),
            DialogueTurn::prediction(answer()),
        ];
        assert!(validate_sequence_grammar(&turns).is_ok());
    }

    #[test]
    fn dispatch_followed_by_assistant_dangles() {
        let turns = vec![
            DialogueTurn::user("q", vec![]),
            DialogueTurn::prediction(dispatch()),
            DialogueTurn::prediction(answer()),
        ];
        let v = validate_sequence_grammar(&turns).unwrap_err();
        assert_eq!(v[0].kind, ViolationKind::DanglingDispatch);
    }

    #[test]
    fn skill_result_without_dispatch() {
        let turns = vec![
            DialogueTurn::user("q", vec![]),
            DialogueTurn::prediction(answer()),
            DialogueTurn::skill_result("r"),
            DialogueTurn::prediction(answer()),
        ];
        let v = validate_sequence_grammar(&turns).unwrap_err();
        assert_eq!(v[0].kind, ViolationKind::SkillResultWithoutDispatch);
    }

    #[test]
    fn chained_dispatch_and_incomplete() {
        let turns = vec![
            DialogueTurn::user("q", vec![]),
            DialogueTurn::prediction(dispatch()),
            DialogueTurn::skill_result("r"),
            DialogueTurn::prediction(dispatch()),
        ];
        let v = validate_sequence_grammar(&turns).unwrap_err();
        assert_eq!(v[0].kind, ViolationKind::ChainedDispatch);
        assert_eq!(
            validate_sequence_grammar(&[]).unwrap_err()[0].kind,
            ViolationKind::Incomplete
        );
        let open = vec![DialogueTurn::user("q", vec![])];
        assert_eq!(
            validate_sequence_grammar(&open).unwrap_err()[0].kind,
            ViolationKind::Incomplete
        );
        assert!(validate_prefix(&open).is_ok());
    }

    #[test]
    fn alternation_broken() {
        let turns = vec![DialogueTurn::prediction(answer())];
        let v = validate_sequence_grammar(&turns).unwrap_err();
        assert_eq!(v[0].kind, ViolationKind::RoleAlternationBroken);
        let turns = vec![
            DialogueTurn::user("a", vec![]),
            DialogueTurn::user("b", vec![]),
        ];
        assert!(validate_sequence_grammar(&turns).is_err());
    }

    #[test]
    fn single_round_mask_is_one_span() {
        let seq = TrainingSequence::new(vec![
            DialogueTurn::user("q", vec![ImageRef::uri("img", "file://x.jpg")]),
            DialogueTurn::prediction(answer()),
        ]);
        let (text, mask) = render_training_sequence(&seq).unwrap();
        assert!(text.starts_with("Human: <image>\nq<STOP> Assistant: {"));
        let trained: Vec<_> = mask.trained_spans().collect();
        assert_eq!(trained.len(), 1);
        assert_eq!(trained[0].end, text.chars().count());
        let body = LossMask::slice(&text, trained[0]);
        assert!(body.ends_with("\"value\": \"done\"}<STOP>"));
    }

    #[test]
    fn invalid_sequence_refuses_to_render() {
        let seq = TrainingSequence::new(vec![DialogueTurn::user("q", vec![])]);
        assert!(matches!(
            render_training_sequence(&seq),
            Err(RenderError::InvalidSequence(_))
        ));
    }

    #[test]
    fn latest_human_text_strips_images() {
        let p = SerializationProfile::default();
        let turns = vec![DialogueTurn::user("hello?", vec![ImageRef::uri("a", "b")])];
        let prompt = p.render_prompt(&turns);
        assert_eq!(p.latest_human_text(&prompt), Some("hello?"));
    }

    #[test]
    fn export_record_shape() {
        let seq = TrainingSequence::new(vec![
            DialogueTurn::user("q", vec![]),
            DialogueTurn::prediction(answer()),
        ]);
        let rec = SequenceRecord::from_sequence(&seq).unwrap();
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.starts_with(
            r#"{"turns":[{"role":"Human","loss":false,"kind":"user_instruction","text":"q"}"#
        ));
        assert!(line.contains(r#""mask":[[0,"#));
    }
}
