//! Controller state, tool execution, planners, mocks and the wire protocol.
//!
//! Everything here is transport-agnostic; the HTTP layer lives in the
//! `skillplug-serving` crate.

pub mod controller;
pub mod executor;
pub mod mock;
pub mod planner;
pub mod protocol;

pub use controller::{
    Clock, ControllerError, ControllerState, ManualClock, RoutingPolicy, SystemClock, WorkerKind,
    WorkerRecord, DEFAULT_HEARTBEAT_INTERVAL, DEFAULT_HEARTBEAT_TIMEOUT,
};
pub use executor::{
    execute_tool, execute_tool_or_error, BackendError, ExecError, StaticBackend, ToolBackend,
    ToolResult, ToolStatus, DEFAULT_STEP_TIMEOUT,
};
pub use mock::{mock_primitive_output, mock_tool_output, MockToolBackend};
pub use planner::{
    parse_planner_text, PlanError, Planner, PlannerRequest, ScriptedPlanner, ScriptedPlannerRule,
};
