//! The controller service: worker registry over HTTP.

use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillplug_core::serving::protocol::{
    GetWorkerAddressRequest, GetWorkerAddressResponse, HeartbeatRequest, HeartbeatResponse,
    ListModelsResponse, RegisterWorkerRequest, RegisterWorkerResponse,
};
use skillplug_core::serving::{
    Clock, ControllerError, ControllerState, RoutingPolicy, SystemClock, WorkerRecord,
};

use crate::{ApiError, ApiJson};

pub struct Controller {
    state: RwLock<ControllerState>,
    clock: Arc<dyn Clock>,
    rng: Mutex<ChaCha8Rng>,
}

impl Controller {
    pub fn new(
        heartbeat_timeout: Duration,
        policy: RoutingPolicy,
        clock: Arc<dyn Clock>,
        seed: u64,
    ) -> Arc<Self> {
        Arc::new(Controller {
            state: RwLock::new(ControllerState::new(heartbeat_timeout, policy)),
            clock,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn with_system_clock(heartbeat_timeout: Duration, policy: RoutingPolicy) -> Arc<Self> {
        Self::new(
            heartbeat_timeout,
            policy,
            Arc::new(SystemClock),
            rand::random(),
        )
    }

    /// Expires silent workers and returns their ids.
    pub fn sweep(&self) -> Vec<String> {
        let now = self.clock.now();
        let expired = self
            .state
            .write()
            .expect("controller lock")
            .expire_workers(now);
        for id in &expired {
            log::info!("worker {id} expired");
        }
        expired
    }

    /// A copy of the current registry.
    pub fn snapshot(&self) -> ControllerState {
        self.state.read().expect("controller lock").clone()
    }

    pub fn register(&self, req: RegisterWorkerRequest) -> Result<(), ControllerError> {
        let record = WorkerRecord {
            worker_id: req.worker_id,
            kind: req.kind,
            served_names: req.served_names,
            address: req.address,
            last_heartbeat: self.clock.now(),
            queue_length: req.queue_length,
        };
        log::info!(
            "register {} at {} serving {:?}",
            record.worker_id,
            record.address,
            record.served_names
        );
        self.state
            .write()
            .expect("controller lock")
            .register_worker(record)
    }

    pub fn heartbeat(&self, req: &HeartbeatRequest) -> bool {
        let now = self.clock.now();
        self.state.write().expect("controller lock").heartbeat(
            &req.worker_id,
            req.queue_length,
            now,
        )
    }

    /// Drops a worker immediately; its next heartbeat is told to register.
    pub fn forget(&self, worker_id: &str) -> bool {
        self.state
            .write()
            .expect("controller lock")
            .remove_worker(worker_id)
            .is_some()
    }

    pub fn list_models(&self) -> Vec<String> {
        self.sweep();
        self.state.read().expect("controller lock").list_models()
    }

    /// Address of a live worker for `name`, or `None`.
    pub fn address_for(&self, name: &str, policy: Option<RoutingPolicy>) -> Option<String> {
        self.sweep();
        let state = self.state.read().expect("controller lock");
        let policy = policy.unwrap_or(state.policy);
        let mut rng = self.rng.lock().expect("rng lock");
        state.route(name, policy, &mut *rng).ok().map(str::to_owned)
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/register_worker", post(register_worker))
            .route("/heartbeat", post(heartbeat))
            .route("/list_models", get(list_models))
            .route("/get_worker_address", post(get_worker_address))
            .with_state(self)
    }

    /// Sweeps on a fixed cadence until the runtime shuts down.
    pub async fn sweep_forever(self: Arc<Self>, every: Duration) {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            self.sweep();
        }
    }
}

async fn register_worker(
    State(c): State<Arc<Controller>>,
    ApiJson(req): ApiJson<RegisterWorkerRequest>,
) -> Result<Json<RegisterWorkerResponse>, ApiError> {
    c.register(req)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(Json(RegisterWorkerResponse { registered: true }))
}

async fn heartbeat(
    State(c): State<Arc<Controller>>,
    ApiJson(req): ApiJson<HeartbeatRequest>,
) -> Json<HeartbeatResponse> {
    Json(HeartbeatResponse {
        exist: c.heartbeat(&req),
    })
}

async fn list_models(State(c): State<Arc<Controller>>) -> Json<ListModelsResponse> {
    Json(ListModelsResponse {
        names: c.list_models(),
    })
}

async fn get_worker_address(
    State(c): State<Arc<Controller>>,
    ApiJson(req): ApiJson<GetWorkerAddressRequest>,
) -> Json<GetWorkerAddressResponse> {
    let address = c.address_for(&req.name, req.policy).unwrap_or_default();
    if address.is_empty() {
        log::warn!("no live worker for {}", req.name);
    }
    Json(GetWorkerAddressResponse { address })
}
