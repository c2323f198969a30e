mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use common::{controller, TIMEOUT};
use serde_json::{json, Value};
use skillplug_core::serving::protocol::RegisterWorkerRequest;
use skillplug_core::serving::{RoutingPolicy, WorkerKind};
use skillplug_serving::{ClientError, ControllerClient};

fn tool(id: &str, names: &[&str], addr: &str) -> RegisterWorkerRequest {
    RegisterWorkerRequest {
        worker_id: id.into(),
        kind: WorkerKind::Tool,
        served_names: names.iter().map(|s| s.to_string()).collect(),
        address: addr.into(),
        queue_length: 0,
    }
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn register_list_and_route() {
    let f = controller(RoutingPolicy::Lottery);
    let c = ControllerClient::new(&f.server.url());
    let planner = RegisterWorkerRequest {
        kind: WorkerKind::Planner,
        ..tool("p0", &["llava-plus-7b"], "http://planner:1")
    };
    assert!(c.register(&planner).unwrap());
    assert!(c
        .register(&tool(
            "t0",
            &["grounding_dino", "sam", "grounding_dino+sam"],
            "http://tools:1"
        ))
        .unwrap());
    assert!(c
        .list_models()
        .unwrap()
        .contains(&"llava-plus-7b".to_string()));
    for name in ["grounding_dino", "sam", "grounding_dino+sam"] {
        assert_eq!(
            c.worker_address(name, None).unwrap().as_deref(),
            Some("http://tools:1")
        );
    }
    c.register(&tool("t0", &["sam"], "http://tools:2")).unwrap();
    assert_eq!(
        c.worker_address("sam", None).unwrap().as_deref(),
        Some("http://tools:2")
    );
    assert_eq!(c.worker_address("grounding_dino", None).unwrap(), None);
}

#[test]
fn errors_and_unknown_workers() {
    let f = controller(RoutingPolicy::Lottery);
    let c = ControllerClient::new(&f.server.url());
    let err = c.register(&tool("e", &[], "http://e")).unwrap_err();
    assert!(
        matches!(err, ClientError::Status { status: 400, .. }),
        "{err}"
    );
    assert!(!c.heartbeat("ghost", 0).unwrap());
    assert_eq!(c.worker_address("sam", None).unwrap(), None);
    assert!(c.list_models().unwrap().is_empty());
}

#[test]
fn responses_have_exact_fields() {
    let f = controller(RoutingPolicy::Lottery);
    let base = f.server.url();
    let http = reqwest::blocking::Client::new();
    let post = |path: &str, body: Value| -> Value {
        http.post(format!("{base}{path}"))
            .json(&body)
            .send()
            .unwrap()
            .json()
            .unwrap()
    };
    let r = post(
        "/register_worker",
        json!({"worker_id": "w", "kind": "tool", "served_names": ["sam"],
               "address": "http://w", "queue_length": 0}),
    );
    assert_eq!(keys(&r), BTreeSet::from(["registered".to_string()]));
    let r = post("/heartbeat", json!({"worker_id": "w", "queue_length": 3}));
    assert_eq!(r, json!({"exist": true}));
    let r: Value = http
        .get(format!("{base}/list_models"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(r, json!({"names": ["sam"]}));
    let r = post(
        "/get_worker_address",
        json!({"name": "sam", "policy": "lottery"}),
    );
    assert_eq!(r, json!({"address": "http://w"}));
    let r = post(
        "/get_worker_address",
        json!({"name": "blip2", "policy": "shortest_queue"}),
    );
    assert_eq!(r, json!({"address": ""}));
    assert_eq!(f.controller.snapshot().worker("w").unwrap().queue_length, 3);
}

#[test]
fn silent_worker_expires_and_heartbeats_keep_alive() {
    let f = controller(RoutingPolicy::Lottery);
    let c = ControllerClient::new(&f.server.url());
    c.register(&tool("live", &["sam"], "http://live")).unwrap();
    c.register(&tool("quiet", &["blip2"], "http://quiet"))
        .unwrap();
    for _ in 0..100 {
        f.clock.advance(TIMEOUT / 2);
        assert!(c.heartbeat("live", 0).unwrap());
        assert!(f.controller.sweep().len() <= 1);
    }
    assert_eq!(
        c.worker_address("sam", None).unwrap().as_deref(),
        Some("http://live")
    );
    assert_eq!(c.worker_address("blip2", None).unwrap(), None);
    assert!(!c.heartbeat("quiet", 0).unwrap());
}

#[test]
fn killed_worker_is_never_routed() {
    let f = controller(RoutingPolicy::Lottery);
    let c = ControllerClient::new(&f.server.url());
    for i in 0..3 {
        c.register(&tool(&format!("w{i}"), &["sam"], &format!("http://w{i}")))
            .unwrap();
    }
    let mut seen = BTreeSet::new();
    for _ in 0..200 {
        seen.insert(c.worker_address("sam", None).unwrap().unwrap());
    }
    assert_eq!(seen.len(), 3);
    let step = Duration::from_secs(15);
    for _ in 0..4 {
        f.clock.advance(step);
        c.heartbeat("w0", 0).unwrap();
        c.heartbeat("w1", 0).unwrap();
    }
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for _ in 0..1_000 {
        let a = c.worker_address("sam", None).unwrap().unwrap();
        *counts.entry(a).or_default() += 1;
    }
    assert_eq!(
        counts.keys().collect::<Vec<_>>(),
        vec!["http://w0", "http://w1"]
    );
}

#[test]
fn shortest_queue_uses_heartbeat_lengths() {
    let f = controller(RoutingPolicy::ShortestQueue);
    let c = ControllerClient::new(&f.server.url());
    for (id, q) in [("b", 0), ("a", 4), ("c", 0)] {
        c.register(&tool(id, &["sam"], &format!("http://{id}")))
            .unwrap();
        c.heartbeat(id, q).unwrap();
    }
    for _ in 0..50 {
        assert_eq!(
            c.worker_address("sam", None).unwrap().as_deref(),
            Some("http://b")
        );
    }
    c.heartbeat("b", 9).unwrap();
    assert_eq!(
        c.worker_address("sam", None).unwrap().as_deref(),
        Some("http://c")
    );
    let lottery: BTreeSet<String> = (0..100)
        .map(|_| {
            c.worker_address("sam", Some(RoutingPolicy::Lottery))
                .unwrap()
                .unwrap()
        })
        .collect();
    assert_eq!(lottery.len(), 3);
}
