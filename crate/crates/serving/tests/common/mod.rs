#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use skillplug_core::serving::protocol::{EventKind, SessionEvent};
use skillplug_core::serving::{ManualClock, RoutingPolicy};
use skillplug_serving::{BackgroundServer, Controller};

pub const TIMEOUT: Duration = Duration::from_secs(45);

pub struct ControllerFixture {
    pub controller: Arc<Controller>,
    pub clock: Arc<ManualClock>,
    pub server: BackgroundServer,
}

pub fn controller(policy: RoutingPolicy) -> ControllerFixture {
    let clock = Arc::new(ManualClock::new(Duration::from_secs(1_000)));
    let controller = Controller::new(TIMEOUT, policy, clock.clone(), 7);
    let server = BackgroundServer::start(controller.clone().router()).unwrap();
    ControllerFixture {
        controller,
        clock,
        server,
    }
}

/// Splits an SSE body into (event name, id, decoded event).
pub fn parse_sse(body: &str) -> Vec<(String, String, SessionEvent)> {
    let mut out = Vec::new();
    for block in body.split("\n\n").filter(|b| !b.trim().is_empty()) {
        let mut name = String::new();
        let mut id = String::new();
        let mut data = String::new();
        for line in block.lines() {
            if let Some(v) = line.strip_prefix("event:") {
                name = v.trim().to_owned();
            } else if let Some(v) = line.strip_prefix("id:") {
                id = v.trim().to_owned();
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push_str(v.trim_start());
            }
        }
        let event: SessionEvent = serde_json::from_str(&data).unwrap();
        out.push((name, id, event));
    }
    out
}

pub fn kinds(events: &[(String, String, SessionEvent)]) -> Vec<EventKind> {
    events.iter().map(|e| e.2.kind).collect()
}
