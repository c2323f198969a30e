use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::value::{map_to_json, map_to_repr};
use crate::format::{
    validate_prefix, DialogueTurn, ImageRef, RenderError, Role, SequenceRecord,
    SerializationProfile, ToolCall, TrainingSequence, UnifiedPrediction, ValueMap,
};
use crate::serving::{execute_tool, PlannerRequest, ToolBackend, ToolResult};
use crate::skills::{CallViolation, SkillRepository, DEFAULT_ALL_TOOLS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SessionMode {
    AllTools { tools: Vec<String> },
    OnTheFly,
}

impl SessionMode {
    /// All-tools mode over the default understanding set.
    pub fn all_tools() -> Self {
        SessionMode::AllTools {
            tools: DEFAULT_ALL_TOOLS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SessionPhase {
    AwaitingUser,
    AwaitingPlanner,
    AwaitingTools { pending: Vec<ToolCall> },
    AwaitingAggregation,
}

impl SessionPhase {
    pub fn name(&self) -> &'static str {
        match self {
            SessionPhase::AwaitingUser => "awaiting_user",
            SessionPhase::AwaitingPlanner => "awaiting_planner",
            SessionPhase::AwaitingTools { .. } => "awaiting_tools",
            SessionPhase::AwaitingAggregation => "awaiting_aggregation",
        }
    }
}

/// How tool output maps are written into skill-result turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputRenderer {
    #[default]
    Json,
    /// Single-quoted, Python-literal style.
    Repr,
}

impl OutputRenderer {
    pub fn render(self, map: &ValueMap) -> String {
        match self {
            OutputRenderer::Json => map_to_json(map),
            OutputRenderer::Repr => map_to_repr(map),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Dispatch {
        calls: Vec<ToolCall>,
        interim: String,
    },
    Respond(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("`{op}` is not allowed while {phase}")]
    WrongPhase {
        op: &'static str,
        phase: &'static str,
    },
    #[error("image `{0}` is already attached")]
    DuplicateImage(String),
    #[error("invalid prediction: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidPrediction(Vec<CallViolation>),
    #[error("the aggregation turn requested tools again")]
    DispatchDuringAggregation,
    #[error("no result for pending call `{0}`")]
    MissingResult(String),
    #[error("result for `{0}` matches no pending call")]
    UnexpectedResult(String),
    #[error("session is not in all-tools mode")]
    NotAllTools,
    #[error("bad snapshot: {0}")]
    CorruptSnapshot(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ViewContent {
    Text { text: String },
    Image { image: ImageRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub role: Role,
    #[serde(flatten)]
    pub content: ViewContent,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UserView {
    pub entries: Vec<ViewEntry>,
}

impl UserView {
    pub fn texts(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter_map(|e| match &e.content {
                ViewContent::Text { text } => Some(text.as_str()),
                ViewContent::Image { .. } => None,
            })
            .collect()
    }
}

impl fmt::Display for UserView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            match &e.content {
                ViewContent::Text { text } => writeln!(f, "{}: {text}", e.role)?,
                ViewContent::Image { image } => writeln!(f, "{}: [image {}]", e.role, image.id)?,
            }
        }
        Ok(())
    }
}

/// The skill-result turn: one `<name> model outputs: <map>` line per tool,
/// then the original question.
pub fn build_skill_result_turn(
    outputs: &[(String, ValueMap)],
    original_question: &str,
    renderer: OutputRenderer,
) -> DialogueTurn {
    let mut text = String::new();
    for (name, map) in outputs {
        text.push_str(name);
        text.push_str(" model outputs: ");
        text.push_str(&renderer.render(map));
        text.push('\n');
    }
    text.push_str(original_question);
    DialogueTurn::skill_result(text)
}

/// One conversation. Mutating operations follow the turn grammar, so the
/// transcript is always a valid prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub mode: SessionMode,
    images: Vec<ImageRef>,
    turns: Vec<DialogueTurn>,
    phase: SessionPhase,
    symbolic_context: String,
    #[serde(default)]
    enriched: BTreeSet<String>,
    #[serde(default)]
    pub profile: SerializationProfile,
    #[serde(default)]
    pub renderer: OutputRenderer,
    #[serde(default)]
    question: String,
    #[serde(default)]
    event_seq: u64,
}

impl Session {
    pub fn new(id: impl Into<String>, mode: SessionMode) -> Self {
        Session {
            id: id.into(),
            mode,
            images: Vec::new(),
            turns: Vec::new(),
            phase: SessionPhase::AwaitingUser,
            symbolic_context: String::new(),
            enriched: BTreeSet::new(),
            profile: SerializationProfile::default(),
            renderer: OutputRenderer::default(),
            question: String::new(),
            event_seq: 0,
        }
    }

    pub fn with_renderer(mut self, renderer: OutputRenderer) -> Self {
        self.renderer = renderer;
        self
    }

    pub fn with_profile(mut self, profile: SerializationProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn turns(&self) -> &[DialogueTurn] {
        &self.turns
    }

    pub fn phase(&self) -> &SessionPhase {
        &self.phase
    }

    pub fn images(&self) -> &[ImageRef] {
        &self.images
    }

    pub fn symbolic_context(&self) -> &str {
        &self.symbolic_context
    }

    /// The most recently attached image, which tools run against.
    pub fn active_images(&self) -> Vec<ImageRef> {
        self.images.last().cloned().into_iter().collect()
    }

    pub(crate) fn next_seq(&mut self) -> u64 {
        let s = self.event_seq;
        self.event_seq += 1;
        s
    }

    fn wrong_phase(&self, op: &'static str) -> SessionError {
        SessionError::WrongPhase {
            op,
            phase: self.phase.name(),
        }
    }

    /// The planner prompt for the current prefix, with the all-tools context
    /// in front when there is one.
    pub fn planner_request(&self) -> PlannerRequest {
        let mut context = String::new();
        if !self.symbolic_context.is_empty() {
            context.push_str(&self.symbolic_context);
            context.push_str(&self.profile.newline_token);
        }
        context.push_str(&self.profile.render_prompt(&self.turns));
        let latest =
            self.turns
                .iter()
                .rev()
                .find_map(|t| match t {
                    DialogueTurn::UserInstruction { text, .. }
                    | DialogueTurn::SkillResult { text } => Some(text.clone()),
                    DialogueTurn::Prediction { .. } => None,
                })
                .unwrap_or_default();
        PlannerRequest {
            context,
            latest,
            stop_token: self.profile.stop_token.clone(),
        }
    }

    /// Appends the user's turn. In all-tools mode, call
    /// [`Session::enrich_context_all_tools`] afterwards and take the request
    /// from [`Session::planner_request`].
    pub fn submit_user_turn(
        &mut self,
        text: &str,
        images: Vec<ImageRef>,
    ) -> Result<PlannerRequest, SessionError> {
        if self.phase != SessionPhase::AwaitingUser {
            return Err(self.wrong_phase("submit_user_turn"));
        }
        let mut seen: BTreeSet<&str> = self.images.iter().map(|i| i.id.as_str()).collect();
        for img in &images {
            if !seen.insert(img.id.as_str()) {
                return Err(SessionError::DuplicateImage(img.id.clone()));
            }
        }
        self.images.extend(images.iter().cloned());
        self.turns.push(DialogueTurn::user(text, images));
        self.question = text.to_owned();
        self.phase = SessionPhase::AwaitingPlanner;
        Ok(self.planner_request())
    }

    pub fn apply_planner_output(
        &mut self,
        p: UnifiedPrediction,
        repo: &SkillRepository,
    ) -> Result<Decision, SessionError> {
        let aggregating = match self.phase {
            SessionPhase::AwaitingPlanner => false,
            SessionPhase::AwaitingAggregation => true,
            _ => return Err(self.wrong_phase("apply_planner_output")),
        };
        if p.invokes_skills() {
            if aggregating {
                return Err(SessionError::DispatchDuringAggregation);
            }
            let violations: Vec<CallViolation> = p
                .actions
                .iter()
                .filter_map(|c| repo.validate_call(c).err())
                .flatten()
                .collect();
            if !violations.is_empty() {
                return Err(SessionError::InvalidPrediction(violations));
            }
            let calls = p.actions.clone();
            let interim = p.value.clone();
            self.turns.push(DialogueTurn::prediction(p));
            self.phase = SessionPhase::AwaitingTools {
                pending: calls.clone(),
            };
            Ok(Decision::Dispatch { calls, interim })
        } else {
            let value = p.value.clone();
            self.turns.push(DialogueTurn::prediction(p));
            self.phase = SessionPhase::AwaitingUser;
            Ok(Decision::Respond(value))
        }
    }

    /// Matches results to pending calls by skill name, in pending order.
    pub fn ingest_tool_results(
        &mut self,
        results: Vec<ToolResult>,
    ) -> Result<PlannerRequest, SessionError> {
        let SessionPhase::AwaitingTools { pending } = &self.phase else {
            return Err(self.wrong_phase("ingest_tool_results"));
        };
        let mut used = vec![false; results.len()];
        let mut outputs = Vec::with_capacity(pending.len());
        for call in pending {
            let idx = results
                .iter()
                .enumerate()
                .position(|(i, r)| !used[i] && r.skill == call.api_name)
                .ok_or_else(|| SessionError::MissingResult(call.api_name.clone()))?;
            used[idx] = true;
            outputs.push((call.api_name.clone(), results[idx].rendered_output()));
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(SessionError::UnexpectedResult(results[i].skill.clone()));
        }
        let turn = build_skill_result_turn(&outputs, &self.question, self.renderer);
        self.turns.push(turn);
        self.phase = SessionPhase::AwaitingAggregation;
        Ok(self.planner_request())
    }

    /// Runs the all-tools set on every image not yet enriched and appends
    /// the labeled stanzas to the symbolic context. Failing tools leave an
    /// error stanza. Returns the results in execution order.
    pub fn enrich_context_all_tools(
        &mut self,
        repo: &SkillRepository,
        backend: &dyn ToolBackend,
    ) -> Result<Vec<ToolResult>, SessionError> {
        let SessionMode::AllTools { tools } = &self.mode else {
            return Err(SessionError::NotAllTools);
        };
        let tools = tools.clone();
        let fresh: Vec<ImageRef> = self
            .images
            .iter()
            .filter(|i| !self.enriched.contains(&i.id))
            .cloned()
            .collect();
        let mut results = Vec::new();
        for image in fresh {
            for tool in &tools {
                let call = ToolCall::new(tool.clone());
                let stanza = match execute_tool(repo, backend, &call, std::slice::from_ref(&image))
                {
                    Ok(r) => {
                        let s =
                            format!("{tool} model outputs: {}", self.renderer.render(&r.output));
                        results.push(r);
                        s
                    }
                    Err(e) => {
                        results.push(ToolResult::error(tool.clone(), e.to_string()));
                        format!("{tool} model error: {e}")
                    }
                };
                if !self.symbolic_context.is_empty() {
                    self.symbolic_context.push_str(&self.profile.newline_token);
                }
                self.symbolic_context.push_str(&stanza);
            }
            self.enriched.insert(image.id.clone());
        }
        Ok(results)
    }

    /// Drops the unfinished query so the session accepts a new user turn.
    pub fn rollback_query(&mut self) {
        if self.phase == SessionPhase::AwaitingUser {
            return;
        }
        if let Some(idx) = self
            .turns
            .iter()
            .rposition(|t| matches!(t, DialogueTurn::UserInstruction { .. }))
        {
            self.turns.truncate(idx);
        }
        self.phase = SessionPhase::AwaitingUser;
    }

    /// The user-facing transcript: instructions and final answers only,
    /// unless `debug` asks for every turn.
    pub fn user_view(&self, debug: bool) -> UserView {
        let mut entries = Vec::new();
        let text = |role, text: String| ViewEntry {
            role,
            content: ViewContent::Text { text },
        };
        for turn in &self.turns {
            match turn {
                DialogueTurn::UserInstruction { text: t, images } => {
                    for image in images {
                        entries.push(ViewEntry {
                            role: Role::Human,
                            content: ViewContent::Image {
                                image: image.clone(),
                            },
                        });
                    }
                    if !t.is_empty() {
                        entries.push(text(Role::Human, t.clone()));
                    }
                }
                DialogueTurn::Prediction { prediction } if debug => {
                    entries.push(text(
                        Role::Assistant,
                        crate::format::serialize_unified_prediction(prediction),
                    ));
                }
                DialogueTurn::Prediction { prediction } if !prediction.invokes_skills() => {
                    entries.push(text(Role::Assistant, prediction.value.clone()));
                }
                DialogueTurn::SkillResult { text: t } if debug => {
                    entries.push(text(Role::Human, t.clone()))
                }
                _ => {}
            }
        }
        UserView { entries }
    }

    pub fn to_training_sequence(&self) -> TrainingSequence {
        TrainingSequence {
            turns: self.turns.clone(),
            profile: self.profile.clone(),
        }
    }

    /// The transcript as one JSONL training record; fails unless the
    /// session is at a turn boundary.
    pub fn export_record(&self) -> Result<SequenceRecord, RenderError> {
        SequenceRecord::from_sequence(&self.to_training_sequence())
    }

    pub fn snapshot(&self) -> String {
        serde_json::to_string(self).expect("session serializes")
    }

    pub fn restore(snapshot: &str) -> Result<Self, SessionError> {
        let s: Session = serde_json::from_str(snapshot)
            .map_err(|e| SessionError::CorruptSnapshot(e.to_string()))?;
        validate_prefix(&s.turns).map_err(|v| SessionError::CorruptSnapshot(format!("{v:?}")))?;
        if !s.phase_matches_turns() {
            return Err(SessionError::CorruptSnapshot(format!(
                "phase {} does not follow the last turn",
                s.phase.name()
            )));
        }
        Ok(s)
    }

    pub fn phase_matches_turns(&self) -> bool {
        match (&self.phase, self.turns.last()) {
            (SessionPhase::AwaitingUser, None) => true,
            (SessionPhase::AwaitingUser, Some(DialogueTurn::Prediction { prediction })) => {
                !prediction.invokes_skills()
            }
            (SessionPhase::AwaitingPlanner, Some(DialogueTurn::UserInstruction { .. })) => true,
            (
                SessionPhase::AwaitingTools { pending },
                Some(DialogueTurn::Prediction { prediction }),
            ) => &prediction.actions == pending,
            (SessionPhase::AwaitingAggregation, Some(DialogueTurn::SkillResult { .. })) => true,
            _ => false,
        }
    }
}
