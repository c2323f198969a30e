mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skillplug_core::datagen::{
    default_arg_templates, DataGenerator, ImageContext, RotationRewriter, Scenario,
    TemplateSynthesizer, COCO_CATEGORIES, IMAGE_ONLY_SKILLS,
};
use skillplug_core::eval::{elo_compute, EloParams, MatchOutcome, MatchRecord};
use skillplug_core::format::{
    parse_unified_prediction, render_training_sequence, serialize_unified_prediction,
    validate_prefix, validate_sequence_grammar, DialogueTurn, ToolCall, UnifiedPrediction,
    ValueMap,
};
use skillplug_core::serving::{
    Clock, ControllerState, ManualClock, RoutingPolicy, ToolResult, WorkerKind, WorkerRecord,
};
use skillplug_core::session::{Session, SessionError, SessionMode};
use skillplug_core::skills::builtin_repository;
use std::time::Duration;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn prediction_round_trip(p in arb_prediction()) {
        let text = serialize_unified_prediction(&p);
        let back = parse_unified_prediction(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(serialize_unified_prediction(&back), text);
    }

    #[test]
    fn mask_matches_oracle(seq in arb_sequence()) {
        validate_sequence_grammar(&seq.turns).unwrap();
        let (text, mask) = render_training_sequence(&seq).unwrap();
        let triples = mask.to_triples();
        prop_assert_eq!(expand_mask(&triples), mask_oracle(&seq, &text));
        for w in triples.windows(2) {
            prop_assert_ne!(w[0].2, w[1].2);
        }
    }

    #[test]
    fn rejected_lists_name_a_violation(seq in arb_sequence(), cut in 0usize..20, drop in 0usize..20) {
        let mut turns = seq.turns.clone();
        let n = turns.len();
        turns.remove(drop % n);
        turns.truncate(cut.max(1).min(turns.len()));
        match validate_sequence_grammar(&turns) {
            Ok(()) => prop_assert!(render_training_sequence(&skillplug_core::format::TrainingSequence::new(turns)).is_ok()),
            Err(v) => prop_assert!(!v.is_empty()),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Submit { text: String, image: Option<u8> },
    Answer(String),
    Dispatch(Vec<&'static str>),
    BadCall,
    Results { drop_one: bool, extra: bool },
    Rollback,
    Restore,
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => ("[a-z ]{0,12}", prop::option::of(0u8..4)).prop_map(|(text, image)| Op::Submit { text, image }),
        2 => "[a-z ]{1,10}".prop_map(Op::Answer),
        2 => prop::sample::subsequence(vec!["blip2", "ram", "easyocr", "openseed"], 1..3).prop_map(Op::Dispatch),
        1 => Just(Op::BadCall),
        2 => (any::<bool>(), any::<bool>()).prop_map(|(drop_one, extra)| Op::Results { drop_one, extra }),
        1 => Just(Op::Rollback),
        1 => Just(Op::Restore),
    ]
}

fn check_session(s: &Session) {
    validate_prefix(s.turns()).unwrap();
    let view = s.user_view(false);
    for text in view.texts() {
        assert!(!text.contains("API_name"), "{text}");
    }
    let dispatches_since_user = s
        .turns()
        .iter()
        .rev()
        .take_while(|t| !matches!(t, DialogueTurn::UserInstruction { .. }))
        .filter(|t| {
            t.as_prediction()
                .is_some_and(UnifiedPrediction::invokes_skills)
        })
        .count();
    assert!(dispatches_since_user <= 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn session_operations_keep_grammar(ops in prop::collection::vec(arb_op(), 1..24)) {
        let repo = builtin_repository();
        let mut s = Session::new("fuzz", SessionMode::OnTheFly);
        for op in ops {
            let before = s.clone();
            let result: Result<(), SessionError> = match op {
                Op::Submit { text, image } => {
                    let images = image
                        .map(|i| vec![skillplug_core::format::ImageRef::uri(format!("img{i}"), "file:///x.jpg")])
                        .unwrap_or_default();
                    s.submit_user_turn(&text, images).map(|_| ())
                }
                Op::Answer(v) => s.apply_planner_output(UnifiedPrediction::answer("t", v), &repo).map(|_| ()),
                Op::Dispatch(names) => {
                    let calls = names.iter().map(|n| ToolCall::new(*n)).collect();
                    s.apply_planner_output(UnifiedPrediction::new("t", calls, "wait"), &repo).map(|_| ())
                }
                Op::BadCall => s
                    .apply_planner_output(UnifiedPrediction::new("t", vec![ToolCall::new("nope")], "v"), &repo)
                    .map(|_| ()),
                Op::Results { drop_one, extra } => {
                    let mut results: Vec<ToolResult> = match s.phase() {
                        skillplug_core::session::SessionPhase::AwaitingTools { pending } => {
                            pending.iter().map(|c| ToolResult::ok(c.api_name.clone(), ValueMap::new())).collect()
                        }
                        _ => vec![ToolResult::ok("blip2", ValueMap::new())],
                    };
                    if drop_one {
                        results.pop();
                    }
                    if extra {
                        results.push(ToolResult::ok("seem", ValueMap::new()));
                    }
                    s.ingest_tool_results(results).map(|_| ())
                }
                Op::Rollback => {
                    s.rollback_query();
                    Ok(())
                }
                Op::Restore => Session::restore(&s.snapshot()).map(|r| {
                    assert_eq!(r, s);
                }),
            };
            if result.is_err() {
                prop_assert_eq!(&s, &before);
            }
            check_session(&s);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn elo_conserves_total_and_is_monotone(
        stream in prop::collection::vec((0usize..5, 1usize..5, 0u8..3), 1..200),
        k in 1.0f64..64.0,
    ) {
        let names = ["a", "b", "c", "d", "e"];
        let matches: Vec<MatchRecord> = stream
            .iter()
            .enumerate()
            .map(|(i, (x, off, o))| {
                let outcome = [MatchOutcome::AWins, MatchOutcome::BWins, MatchOutcome::Tie][*o as usize];
                MatchRecord::new(names[*x], names[(x + off) % 5], outcome, i as i64)
            })
            .collect();
        let params = EloParams { k, ..EloParams::default() };
        let table = elo_compute(&matches, params).unwrap();
        let initial = params.initial * table.ratings.len() as f64;
        prop_assert!((table.total() - initial).abs() < 1e-9);
        for m in &matches {
            prop_assert!(table.ratings.contains_key(&m.a) && table.ratings.contains_key(&m.b));
        }
        let played: u64 = table.matches_played.values().sum();
        prop_assert_eq!(played, 2 * matches.len() as u64);
        for i in 0..matches.len() {
            let before = elo_compute(&matches[..i], params).unwrap();
            let after = elo_compute(&matches[..=i], params).unwrap();
            let m = &matches[i];
            let get = |t: &skillplug_core::eval::EloTable, n: &str| t.ratings.get(n).copied().unwrap_or(params.initial);
            match m.outcome {
                MatchOutcome::AWins => {
                    prop_assert!(get(&after, &m.a) >= get(&before, &m.a));
                    prop_assert!(get(&after, &m.b) <= get(&before, &m.b));
                }
                MatchOutcome::BWins => {
                    prop_assert!(get(&after, &m.b) >= get(&before, &m.b));
                    prop_assert!(get(&after, &m.a) <= get(&before, &m.a));
                }
                MatchOutcome::Tie => {}
            }
            if i > 20 { break; }
        }
    }
}

fn random_context(rng: &mut ChaCha8Rng, id: usize) -> ImageContext {
    let mut ctx = ImageContext::new(id.to_string());
    if rng.random_bool(0.7) {
        ctx = ctx.with_caption(format!("A scene number {id} with things in it."));
    }
    for _ in 0..rng.random_range(0..4) {
        let cat = COCO_CATEGORIES[rng.random_range(0..COCO_CATEGORIES.len())];
        let x = rng.random_range(0..50) as f64 / 100.0;
        let y = rng.random_range(0..50) as f64 / 100.0;
        ctx = ctx.with_object(cat, [x, y, x + 0.3, y + 0.4]);
    }
    ctx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn generators_emit_valid_records(seed in any::<u64>()) {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &RotationRewriter, &TemplateSynthesizer);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctx = random_context(&mut rng, (seed % 1000) as usize);
        let mut records = Vec::new();
        for skill in IMAGE_ONLY_SKILLS {
            records.extend(g.gen_image_only_sample(&ctx, skill, seed).ok());
        }
        for t in default_arg_templates() {
            if let Ok(r) = g.gen_arg_skill_sample(&ctx, &t, seed) {
                let caption = r.calls().next().unwrap().param("caption").unwrap().as_str().unwrap().to_owned();
                for term in caption.split(" . ") {
                    prop_assert!(ctx.has_category(term));
                }
                records.push(r);
            } else {
                prop_assert!(ctx.objects.is_empty());
            }
        }
        records.push(g.gen_visual_prompt_sample(&ctx, seed).unwrap());
        for sc in Scenario::ALL {
            records.push(g.gen_composed_sample(&ctx, sc, seed).unwrap());
        }
        let negatives: Vec<String> = COCO_CATEGORIES.iter().filter(|c| !ctx.has_category(c)).map(|c| c.to_string()).collect();
        let neg = g.gen_negative_prompt_sample(&ctx, &negatives, seed).unwrap();
        let asked = neg.calls().next().unwrap().param("caption").unwrap().as_str().unwrap().to_owned();
        prop_assert!(!ctx.has_category(&asked));
        records.push(neg);
        for r in &records {
            validate_sequence_grammar(&r.sequence.turns).unwrap();
            for call in r.calls() {
                prop_assert!(repo.validate_call(call).is_ok(), "{:?}", call);
            }
            let (text, mask) = render_training_sequence(&r.sequence).unwrap();
            prop_assert_eq!(expand_mask(&mask.to_triples()), mask_oracle(&r.sequence, &text));
        }
        let again = g.gen_composed_sample(&ctx, Scenario::SemSegGeneration, seed).unwrap();
        prop_assert_eq!(again.to_jsonl(), g.gen_composed_sample(&ctx, Scenario::SemSegGeneration, seed).unwrap().to_jsonl());
    }

    #[test]
    fn routes_avoid_expired_workers(silent in prop::collection::btree_set(0usize..6, 0..6), seed in any::<u64>()) {
        let clock = ManualClock::new(Duration::ZERO);
        let mut state = ControllerState::new(Duration::from_secs(45), RoutingPolicy::Lottery);
        for i in 0..6 {
            state.register_worker(WorkerRecord {
                worker_id: format!("w{i}"),
                kind: WorkerKind::Tool,
                served_names: vec!["blip2".into()],
                address: format!("http://w{i}"),
                last_heartbeat: clock.now(),
                queue_length: 0,
            }).unwrap();
        }
        clock.advance(Duration::from_secs(30));
        for i in (0..6).filter(|i| !silent.contains(i)) {
            state.heartbeat(&format!("w{i}"), 0, clock.now());
        }
        clock.advance(Duration::from_secs(30));
        let removed = state.expire_workers(clock.now());
        prop_assert_eq!(removed.len(), silent.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for policy in [RoutingPolicy::Lottery, RoutingPolicy::ShortestQueue] {
            for _ in 0..50 {
                match state.route("blip2", policy, &mut rng) {
                    Ok(addr) => {
                        let i: usize = addr.trim_start_matches("http://w").parse().unwrap();
                        prop_assert!(!silent.contains(&i));
                    }
                    Err(_) => prop_assert_eq!(silent.len(), 6),
                }
            }
        }
    }
}
