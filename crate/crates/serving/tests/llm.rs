use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::HeaderMap;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use skillplug_core::datagen::{
    AnswerSynthesizer, ImageContext, KnowledgeChecker, Rewriter, SynthesisRequest,
};
use skillplug_core::eval::{relative_score, AllMode, AnswerRecord, GoldRecord, Judge};
use skillplug_core::serving::protocol::RegisterWorkerRequest;
use skillplug_core::serving::{Planner, PlannerRequest, RoutingPolicy, WorkerKind};
use skillplug_serving::{
    BackgroundServer, Controller, ControllerClient, LlmClient, LlmGenerator, LlmJudge,
    LlmKnowledgeChecker, LlmRewriter, LlmSynthesizer, RemotePlanner, Worker,
};

type Log = Arc<Mutex<Vec<(Option<String>, Value)>>>;

fn reply_for(prompt: &str) -> String {
    if prompt.contains("[Assistant 1]") {
        if prompt.contains("a red bus") {
            "8 6\nAssistant 2 misses the color.".into()
        } else {
            "9 9\nBoth are fine.".into()
        }
    } else if prompt.contains("Rewrite the request") {
        "  Could you find every dog here?  ".into()
    } else if prompt.contains("Retrieved items") {
        if prompt.contains("Answer: Paris") {
            "Yes, the second item says so.".into()
        } else {
            "No.".into()
        }
    } else if prompt.contains("tool outputs") {
        " There are two dogs on the grass. ".into()
    } else {
        r#"{"thoughts": "Caption first.", "actions": [{"API_name": "blip2", "API_params": {}}], "value": "I will use blip2."}<STOP> Human: extra"#.into()
    }
}

async fn completions(
    State(log): State<Log>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Json<Value> {
    let auth = headers
        .get("authorization")
        .map(|v| v.to_str().unwrap().to_owned());
    let prompt = body["messages"][1]["content"].as_str().unwrap().to_owned();
    log.lock().unwrap().push((auth, body));
    Json(json!({
        "id": "x",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": reply_for(&prompt)}}]
    }))
}

fn fake_llm() -> (BackgroundServer, Log, LlmClient) {
    let log: Log = Arc::default();
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(log.clone());
    let server = BackgroundServer::start(app).unwrap();
    let client = LlmClient::new(&format!("{}/v1/", server.url()), Some("k".into()), "gpt-4");
    (server, log, client)
}

#[test]
fn judge_reads_score_pair() {
    let (_s, log, client) = fake_llm();
    let judge = LlmJudge(client);
    let v = judge
        .judge("What is in the image?", "a bus", "a red bus")
        .unwrap();
    assert_eq!((v.score_reference, v.score_model), (8.0, 6.0));
    assert_eq!(v.relative(), 75.0);
    let (auth, body) = log.lock().unwrap()[0].clone();
    assert_eq!(auth.as_deref(), Some("Bearer k"));
    assert_eq!(body["model"], "gpt-4");
    assert_eq!(body["temperature"], 0.0);
    let prompt = body["messages"][1]["content"].as_str().unwrap();
    assert!(prompt.find("a red bus").unwrap() < prompt.find("[Assistant 2]").unwrap());

    let golds = vec![
        GoldRecord {
            id: "1".into(),
            category: "conv".into(),
            question: "q".into(),
            gold: "a red bus".into(),
        },
        GoldRecord {
            id: "2".into(),
            category: "detail".into(),
            question: "q".into(),
            gold: "two cats".into(),
        },
    ];
    let answers = vec![
        AnswerRecord {
            id: "1".into(),
            answer: "a bus".into(),
        },
        AnswerRecord {
            id: "2".into(),
            answer: "two cats".into(),
        },
    ];
    let report = relative_score(
        &answers,
        &golds,
        &judge,
        &["conv", "detail", "reasoning"],
        AllMode::SampleWeighted,
    )
    .unwrap();
    assert_eq!(report.categories["conv"].mean, 75.0);
    assert_eq!(report.categories["detail"].mean, 100.0);
    assert_eq!(report.all, 87.5);
}

#[test]
fn datagen_adapters() {
    let (_s, _log, client) = fake_llm();
    assert_eq!(
        LlmRewriter(client.clone())
            .rewrite("Can you help to detect all dogs in the image?", 3)
            .unwrap(),
        "Could you find every dog here?"
    );
    let checker = LlmKnowledgeChecker(client.clone());
    let items = vec![
        "Berlin is in Germany".to_string(),
        "Paris is in France".to_string(),
    ];
    assert!(checker.derivable("Paris", &items).unwrap());
    assert!(!checker.derivable("Rome", &items).unwrap());
    let ctx = ImageContext::new("42");
    let req = SynthesisRequest {
        questions: vec!["How many dogs?".into()],
        tool_outputs: vec![],
        context: &ctx,
    };
    assert_eq!(
        LlmSynthesizer(client).synthesize(&req).unwrap(),
        "There are two dogs on the grass."
    );
}

#[test]
fn chat_model_as_planner_worker() {
    let (_s, log, client) = fake_llm();
    let controller =
        Controller::with_system_clock(std::time::Duration::from_secs(45), RoutingPolicy::Lottery);
    let cserver = BackgroundServer::start(controller.router()).unwrap();
    let worker = Worker::planner(
        "llm",
        "unused",
        vec!["gpt-planner".into()],
        Arc::new(LlmGenerator(client)),
    );
    let wserver = BackgroundServer::start(worker.router()).unwrap();
    let c = ControllerClient::new(&cserver.url());
    c.register(&RegisterWorkerRequest {
        worker_id: "llm".into(),
        kind: WorkerKind::Planner,
        served_names: vec!["gpt-planner".into()],
        address: wserver.url(),
        queue_length: 0,
    })
    .unwrap();
    let planner = RemotePlanner::new(c, "gpt-planner");
    let request = PlannerRequest {
        context: "Human: <image>\nWhat is this?<STOP> Assistant: ".into(),
        latest: "What is this?".into(),
        stop_token: "<STOP>".into(),
    };
    let p = planner.plan(&request).unwrap();
    assert_eq!(p.actions[0].api_name, "blip2");
    assert_eq!(log.lock().unwrap()[0].1["stop"], json!(["<STOP>"]));
}

#[test]
fn unreachable_endpoint_is_an_error() {
    let client = LlmClient::new("http://127.0.0.1:9/v1", None, "m");
    assert!(!client.has_key());
    assert!(LlmJudge(client).judge("q", "a", "g").is_err());
}
