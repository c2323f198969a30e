//! Judge-based relative scoring, capability suites, Elo ratings and win
//! rates against a reference.

mod elo;
mod judge;
mod report;
mod suite;

use thiserror::Error;

pub use elo::{
    elo_compute, elo_compute_from, elo_update, expected_score, format_leaderboard,
    parse_matches_jsonl, win_rate, EloParams, EloTable, MatchOutcome, MatchRecord, WinRate,
};
pub use judge::{token_f1, Judge, JudgeVerdict, StubJudge};
pub use report::{
    relative_score, AllMode, AnswerRecord, CategoryReport, CategoryScore, GoldRecord,
    SampleFailure, SampleScore, LLAVA_BENCH_LAYOUT, TOOLS_LAYOUT,
};
pub use suite::{run_capability_suite, AgentSessionFactory, SessionFactory, SuiteItem, SuiteSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("answers and golds are not aligned: {0}")]
    MisalignedSets(String),
    #[error("judge failed on sample `{sample}`: {detail}")]
    JudgeFailure { sample: String, detail: String },
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    #[error("match {order_index} pits `{name}` against itself")]
    SelfMatch { order_index: i64, name: String },
    #[error("order index {0} appears more than once")]
    DuplicateOrderIndex(i64),
    #[error("reference `{0}` does not appear in any match")]
    UnknownReference(String),
    #[error("invalid Elo parameters: {0}")]
    InvalidParams(String),
    #[error("bad input: {0}")]
    Input(String),
}
