use thiserror::Error;

use super::state::{Decision, Session, SessionError, SessionMode};
use crate::format::ImageRef;
use crate::serving::protocol::{EventKind, SessionEvent};
use crate::serving::{execute_tool, PlanError, Planner, ToolBackend, ToolResult};
use crate::skills::SkillRepository;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Runs one user message through planner, tools and aggregation.
pub struct Agent<'a> {
    pub repo: &'a SkillRepository,
    pub planner: &'a dyn Planner,
    pub backend: &'a dyn ToolBackend,
}

impl<'a> Agent<'a> {
    pub fn new(
        repo: &'a SkillRepository,
        planner: &'a dyn Planner,
        backend: &'a dyn ToolBackend,
    ) -> Self {
        Agent {
            repo,
            planner,
            backend,
        }
    }

    /// Drives the session from the user turn to the final answer, emitting
    /// a status event for the interim value, one event per tool result, and
    /// the answer. On failure the query is rolled back, an error event is
    /// emitted and the session is ready for the next message.
    pub fn handle_message(
        &self,
        session: &mut Session,
        text: &str,
        images: Vec<ImageRef>,
        sink: &mut dyn FnMut(SessionEvent),
    ) -> Result<String, AgentError> {
        match self.run(session, text, images, sink) {
            Ok(answer) => Ok(answer),
            Err(e) => {
                if !matches!(e, AgentError::Session(SessionError::WrongPhase { .. })) {
                    session.rollback_query();
                }
                let seq = session.next_seq();
                sink(SessionEvent::text(EventKind::Error, &e.to_string(), seq));
                Err(e)
            }
        }
    }

    fn run(
        &self,
        session: &mut Session,
        text: &str,
        images: Vec<ImageRef>,
        sink: &mut dyn FnMut(SessionEvent),
    ) -> Result<String, AgentError> {
        let mut request = session.submit_user_turn(text, images)?;
        if matches!(session.mode, SessionMode::AllTools { .. }) {
            session.enrich_context_all_tools(self.repo, self.backend)?;
            request = session.planner_request();
        }
        let first = self.planner.plan(&request)?;
        let calls = match session.apply_planner_output(first, self.repo)? {
            Decision::Respond(value) => {
                let seq = session.next_seq();
                sink(SessionEvent::text(EventKind::Answer, &value, seq));
                return Ok(value);
            }
            Decision::Dispatch { calls, interim } => {
                let seq = session.next_seq();
                sink(SessionEvent::text(EventKind::Status, &interim, seq));
                calls
            }
        };
        let images = session.active_images();
        let mut results: Vec<ToolResult> = Vec::with_capacity(calls.len());
        for call in &calls {
            let result = execute_tool(self.repo, self.backend, call, &images)
                .unwrap_or_else(|e| ToolResult::error(call.api_name.clone(), e.to_string()));
            let seq = session.next_seq();
            sink(SessionEvent::tool_result(&result, seq));
            results.push(result);
        }
        let request = session.ingest_tool_results(results)?;
        let second = self.planner.plan(&request)?;
        match session.apply_planner_output(second, self.repo)? {
            Decision::Respond(value) => {
                let seq = session.next_seq();
                sink(SessionEvent::text(EventKind::Answer, &value, seq));
                Ok(value)
            }
            Decision::Dispatch { .. } => {
                unreachable!("aggregation dispatch is rejected by the session")
            }
        }
    }
}
