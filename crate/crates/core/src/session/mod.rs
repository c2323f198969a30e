//! Per-conversation state machine: user turn, planner, optional tool
//! dispatch, skill result, aggregation, answer.

mod agent;
mod state;

pub use agent::{Agent, AgentError};
pub use state::{
    build_skill_result_turn, Decision, OutputRenderer, Session, SessionError, SessionMode,
    SessionPhase, UserView, ViewContent, ViewEntry,
};


#[cfg(test)]
mod snapshot_numbers {
    use super::*;
    use crate::format::{ToolCall, UnifiedPrediction};
    use crate::skills::builtin_repository;

    #[test]
    fn numeric_params_survive_snapshot() {
        let repo = builtin_repository();
        let mut s = Session::new("s", SessionMode::OnTheFly);
        s.submit_user_turn("seg", vec![]).unwrap();
        let p = UnifiedPrediction::new(
            "t",
            vec![ToolCall::new("sam")
                .with_param("point", crate::format::Value::numbers(&[0.45, 0.89], 2))],
            "wait",
        );
        s.apply_planner_output(p, &repo).unwrap();
        let back = Session::restore(&s.snapshot()).unwrap();
        assert_eq!(back, s);
    }
}
