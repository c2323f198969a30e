//! Runtime pieces for a planner that learns to call vision tools.
//!
//! * [`format`]: the three-field prediction format, the turn grammar and
//!   loss-masked training-sequence rendering.
//! * [`skills`]: the skill repository and composition plans.
//! * [`session`]: the per-conversation state machine and the driver that
//!   runs planner and tools through it.
//! * [`serving`]: controller bookkeeping, tool execution, the wire protocol,
//!   mock tools and the scripted planner.
//! * [`datagen`]: instruction-data generators.
//! * [`eval`]: judge-based relative scoring and Elo ratings.

pub mod datagen;
pub mod eval;
pub mod format;
pub mod serving;
pub mod session;
pub mod skills;
