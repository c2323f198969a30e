//! Worker registry kept by the controller.
//!
//! All operations take the current time explicitly so expiry can be driven by
//! a simulated clock in tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HEARTBEAT_TIMEOUT: Duration = Duration::from_secs(45);
pub const DEFAULT_HEARTBEAT_INTERVAL: Duration = Duration::from_secs(15);

pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(Mutex<Duration>);

impl ManualClock {
    pub fn new(start: Duration) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock().expect("clock lock") += by;
    }

    pub fn set(&self, to: Duration) {
        *self.0.lock().expect("clock lock") = to;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.0.lock().expect("clock lock")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerKind {
    Planner,
    Tool,
}

impl FromStr for WorkerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planner" => Ok(WorkerKind::Planner),
            "tool" => Ok(WorkerKind::Tool),
            other => Err(format!("unknown worker kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingPolicy {
    #[default]
    Lottery,
    ShortestQueue,
}

impl FromStr for RoutingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lottery" => Ok(RoutingPolicy::Lottery),
            "shortest_queue" | "shortest-queue" => Ok(RoutingPolicy::ShortestQueue),
            other => Err(format!("unknown routing policy `{other}`")),
        }
    }
}

impl fmt::Display for RoutingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoutingPolicy::Lottery => "lottery",
            RoutingPolicy::ShortestQueue => "shortest_queue",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub worker_id: String,
    pub kind: WorkerKind,
    pub served_names: Vec<String>,
    pub address: String,
    pub last_heartbeat: Duration,
    pub queue_length: u32,
}

impl WorkerRecord {
    pub fn serves(&self, name: &str) -> bool {
        self.served_names.iter().any(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControllerError {
    #[error("no live worker serves `{0}`")]
    NoWorkerAvailable(String),
    #[error("worker `{0}` serves no names")]
    EmptyServedNames(String),
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    workers: BTreeMap<String, WorkerRecord>,
    pub heartbeat_timeout: Duration,
    pub policy: RoutingPolicy,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self::new(DEFAULT_HEARTBEAT_TIMEOUT, RoutingPolicy::default())
    }
}

impl ControllerState {
    pub fn new(heartbeat_timeout: Duration, policy: RoutingPolicy) -> Self {
        ControllerState {
            workers: BTreeMap::new(),
            heartbeat_timeout,
            policy,
        }
    }

    /// Inserts or replaces the record with the same worker id.
    pub fn register_worker(&mut self, record: WorkerRecord) -> Result<(), ControllerError> {
        if record.served_names.is_empty() {
            return Err(ControllerError::EmptyServedNames(record.worker_id));
        }
        self.workers.insert(record.worker_id.clone(), record);
        Ok(())
    }

    /// Refreshes liveness. Returns false for unknown workers, which are
    /// expected to re-register.
    pub fn heartbeat(&mut self, worker_id: &str, queue_length: u32, now: Duration) -> bool {
        match self.workers.get_mut(worker_id) {
            Some(record) => {
                record.last_heartbeat = now;
                record.queue_length = queue_length;
                true
            }
            None => false,
        }
    }

    /// Drops every worker silent for longer than the heartbeat timeout and
    /// returns their ids.
    pub fn expire_workers(&mut self, now: Duration) -> Vec<String> {
        let timeout = self.heartbeat_timeout;
        let expired: Vec<String> = self
            .workers
            .values()
            .filter(|r| now.saturating_sub(r.last_heartbeat) > timeout)
            .map(|r| r.worker_id.clone())
            .collect();
        for id in &expired {
            self.workers.remove(id);
        }
        expired
    }

    pub fn remove_worker(&mut self, worker_id: &str) -> Option<WorkerRecord> {
        self.workers.remove(worker_id)
    }

    pub fn worker(&self, worker_id: &str) -> Option<&WorkerRecord> {
        self.workers.get(worker_id)
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerRecord> {
        self.workers.values()
    }

    pub fn list_models(&self) -> Vec<String> {
        self.workers
            .values()
            .flat_map(|r| r.served_names.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Picks a worker address for `name`. Lottery is uniform over the
    /// servers; shortest-queue takes the minimal queue and breaks ties by
    /// lowest worker id.
    pub fn route<R: Rng + ?Sized>(
        &self,
        name: &str,
        policy: RoutingPolicy,
        rng: &mut R,
    ) -> Result<&str, ControllerError> {
        let candidates: Vec<&WorkerRecord> =
            self.workers.values().filter(|r| r.serves(name)).collect();
        if candidates.is_empty() {
            return Err(ControllerError::NoWorkerAvailable(name.to_owned()));
        }
        let chosen = match policy {
            RoutingPolicy::Lottery => candidates[rng.random_range(0..candidates.len())],
            // BTreeMap iteration is ordered by id, and min_by_key keeps the
            // first minimum.
            RoutingPolicy::ShortestQueue => candidates
                .iter()
                .copied()
                .min_by_key(|r| r.queue_length)
                .expect("non-empty"),
        };
        Ok(&chosen.address)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(id: &str, names: &[&str], addr: &str, at: u64) -> WorkerRecord {
        WorkerRecord {
            worker_id: id.into(),
            kind: WorkerKind::Tool,
            served_names: names.iter().map(|s| s.to_string()).collect(),
            address: addr.into(),
            last_heartbeat: Duration::from_secs(at),
            queue_length: 0,
        }
    }

    #[test]
    fn register_lists_and_replaces() {
        let mut state = ControllerState::default();
        state
            .register_worker(WorkerRecord {
                kind: WorkerKind::Planner,
                ..record("p", &["llava-plus-7b"], "http://p", 0)
            })
            .unwrap();
        state
            .register_worker(record(
                "t",
                &["grounding_dino", "sam", "grounding_dino+sam"],
                "http://t",
                0,
            ))
            .unwrap();
        assert_eq!(
            state.list_models(),
            vec![
                "grounding_dino",
                "grounding_dino+sam",
                "llava-plus-7b",
                "sam"
            ]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for name in ["grounding_dino", "sam", "grounding_dino+sam"] {
            assert_eq!(
                state.route(name, RoutingPolicy::Lottery, &mut rng).unwrap(),
                "http://t"
            );
        }
        state
            .register_worker(record("t", &["sam"], "http://t2", 0))
            .unwrap();
        assert_eq!(
            state
                .route("sam", RoutingPolicy::Lottery, &mut rng)
                .unwrap(),
            "http://t2"
        );
        assert!(state.register_worker(record("e", &[], "x", 0)).is_err());
    }

    #[test]
    fn no_worker() {
        let state = ControllerState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            state.route("sam", RoutingPolicy::ShortestQueue, &mut rng),
            Err(ControllerError::NoWorkerAvailable("sam".into()))
        );
    }

    #[test]
    fn silent_worker_expires() {
        let mut state = ControllerState::new(Duration::from_secs(45), RoutingPolicy::Lottery);
        state
            .register_worker(record("a", &["sam"], "http://a", 0))
            .unwrap();
        assert!(state.expire_workers(Duration::from_secs(45)).is_empty());
        assert_eq!(
            state.expire_workers(Duration::from_secs(90)),
            vec!["a".to_string()]
        );
        assert!(state.expire_workers(Duration::from_secs(1000)).is_empty());
    }

    #[test]
    fn shortest_queue_prefers_short_then_low_id() {
        let mut state = ControllerState::default();
        for (id, q) in [("w3", 0), ("w1", 2), ("w2", 0)] {
            state.register_worker(record(id, &["sam"], id, 0)).unwrap();
            state.heartbeat(id, q, Duration::ZERO);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            state
                .route("sam", RoutingPolicy::ShortestQueue, &mut rng)
                .unwrap(),
            "w2"
        );
        assert!(!state.heartbeat("ghost", 0, Duration::ZERO));
    }
}
