#![allow(dead_code)]

use proptest::prelude::*;
use skillplug_core::format::{
    parse_value, DialogueTurn, ImageRef, SerializationProfile, ToolCall, TrainingSequence,
    UnifiedPrediction, Value, ValueMap,
};
use skillplug_core::serving::{ScriptedPlanner, ScriptedPlannerRule, StaticBackend};

pub const GOLDEN_QUESTION: &str =
    "Can you segment the girl and the cart in the image and describe their relationship?";

pub const GOLDEN_SKILL_USE: &str = "\"thoughts\" To accurately segment and identify the girl and the cart in the image, we can leverage the grounding_dino model for open-set detection and the segmentation model SAM. Integrating these models will enable us to generate a comprehensive summary of the segmented subjects.\n\"actions\" [{\"API_name\": \"grounding_dino+sam\", \"API_params\": {\"caption\": \"little girl and cart .\"}}]\n\"value\" I will use grounding_dino+sam to help to answer the question. Please wait for a moment.";

pub const GOLDEN_OUTPUT: &str = "{'boxes': [[0.35, 0.37, 0.66, 0.97], [0.0, 0.57, 0.69, 1.0]], 'logits': [0.58, 0.41], 'phrases': ['little girl', 'cart']}";

pub const GOLDEN_ANSWER: &str = "\"thoughts\" Thanks to the output of grounding_dino+sam. I can answer the question better.\n\"actions\" []\n\"value\" Sure! I segment and identify the little girl and the cart in the image.";

pub const TABLE7_AUGMENTED: &str = "\"thoughts\" The questions can be answered by the information in the context, without need any external tools.\n\"actions\" []\n\"value\" The bus in the image is white and red.";

pub fn golden_image() -> ImageRef {
    ImageRef::uri("coco-569536", "coco://569536")
}

pub fn golden_output() -> ValueMap {
    parse_value(GOLDEN_OUTPUT)
        .unwrap()
        .as_map()
        .unwrap()
        .clone()
}

pub fn golden_planner() -> ScriptedPlanner {
    let skill_use = skillplug_core::format::parse_unified_prediction(GOLDEN_SKILL_USE).unwrap();
    let answer = skillplug_core::format::parse_unified_prediction(GOLDEN_ANSWER).unwrap();
    ScriptedPlanner::new(vec![
        ScriptedPlannerRule::substring("grounding_dino+sam model outputs:", answer),
        ScriptedPlannerRule::substring("segment the girl and the cart", skill_use),
    ])
    .unwrap()
}

/// The detector returns the canned boxes; the segmenter adds nothing the
/// projection keeps.
pub fn golden_backend() -> StaticBackend {
    StaticBackend::new()
        .with_output("grounding_dino", golden_output())
        .with_output("sam", ValueMap::new())
}

/// Trained flag of every character, found by locating each turn's pieces
/// in the rendered text one after another.
pub fn mask_oracle(seq: &TrainingSequence, text: &str) -> Vec<bool> {
    let p = &seq.profile;
    let chars: Vec<char> = text.chars().collect();
    let mut flags = vec![false; chars.len()];
    let mut pos = 0usize;
    let mut expect = |piece: &str, trained: bool, pos: &mut usize| {
        let piece: Vec<char> = piece.chars().collect();
        assert_eq!(
            &chars[*pos..*pos + piece.len()],
            piece.as_slice(),
            "rendered text diverges at char {pos}"
        );
        for f in &mut flags[*pos..*pos + piece.len()] {
            *f = trained;
        }
        *pos += piece.len();
    };
    for (i, turn) in seq.turns.iter().enumerate() {
        if i > 0 {
            expect(&p.separator, false, &mut pos);
        }
        let assistant = matches!(turn, DialogueTurn::Prediction { .. });
        let (literal, body) = match turn {
            DialogueTurn::UserInstruction { text, images } => {
                let mut body = String::new();
                for _ in images {
                    body += &p.image_token;
                    body += &p.newline_token;
                }
                body += text;
                (&p.human_literal, body)
            }
            DialogueTurn::SkillResult { text } => (&p.human_literal, text.clone()),
            DialogueTurn::Prediction { prediction } => (
                &p.assistant_literal,
                skillplug_core::format::serialize_unified_prediction(prediction),
            ),
        };
        expect(literal, false, &mut pos);
        expect(&body, assistant, &mut pos);
        expect(&p.stop_token, assistant, &mut pos);
    }
    assert_eq!(pos, chars.len(), "rendered text has trailing characters");
    flags
}

pub fn expand_mask(spans: &[(usize, usize, bool)]) -> Vec<bool> {
    let mut out = Vec::new();
    for (s, e, t) in spans {
        assert_eq!(*s, out.len(), "gap or overlap at {s}");
        out.extend(std::iter::repeat_n(*t, e - s));
    }
    out
}

pub fn arb_text() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => "[ -~]{0,30}",
        1 => any::<String>(),
        1 => "[\"\\\\{}\\[\\]:, \n\tA-Za-zé漢🙂]{0,20}",
    ]
}

pub fn arb_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        arb_text().prop_map(Value::text),
        (0u64..100_000).prop_map(Value::int),
        (-1000.0f64..1000.0, 0usize..4).prop_map(|(v, d)| Value::fixed(v, d)),
        any::<bool>().prop_map(Value::Bool),
        Just(Value::Null),
    ];
    leaf.prop_recursive(3, 16, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
            prop::collection::vec(("[a-z_]{1,8}", inner), 0..3)
                .prop_map(|kv| Value::Map(kv.into_iter().collect())),
        ]
    })
}

pub fn arb_call() -> impl Strategy<Value = ToolCall> {
    (
        "[a-z_]{1,12}(\\+[a-z_]{1,8})?",
        prop::collection::vec(("[A-Za-z_]{1,10}", arb_value()), 0..3),
    )
        .prop_map(|(name, params)| {
            params
                .into_iter()
                .fold(ToolCall::new(name), |c, (k, v)| c.with_param(k, v))
        })
}

pub fn arb_prediction() -> impl Strategy<Value = UnifiedPrediction> {
    (
        arb_text(),
        prop::collection::vec(arb_call(), 0..3),
        arb_text(),
    )
        .prop_map(|(t, a, v)| UnifiedPrediction::new(t, a, v))
}

pub fn arb_profile() -> impl Strategy<Value = SerializationProfile> {
    prop_oneof![
        Just(SerializationProfile::default()),
        (
            "<[a-z]{1,5}>",
            "[ \n]{0,2}",
            "[A-Z][a-z]{0,6}: ",
            "[A-Z]{2,4}é: "
        )
            .prop_map(|(stop, sep, h, a)| {
                SerializationProfile {
                    stop_token: stop,
                    separator: sep,
                    human_literal: h,
                    assistant_literal: a,
                    ..SerializationProfile::default()
                }
            }),
    ]
}

fn arb_image() -> impl Strategy<Value = ImageRef> {
    "[a-z0-9]{1,6}".prop_map(|id| ImageRef::uri(id.clone(), format!("file:///{id}.jpg")))
}

#[derive(Debug, Clone)]
pub enum Round {
    Direct(String, Vec<ImageRef>, UnifiedPrediction),
    Tool(
        String,
        Vec<ImageRef>,
        UnifiedPrediction,
        String,
        UnifiedPrediction,
    ),
}

fn arb_round() -> impl Strategy<Value = Round> {
    let answer = (arb_text(), arb_text())
        .prop_map(|(t, v)| UnifiedPrediction::answer(t, v))
        .boxed();
    let dispatch = (
        arb_text(),
        prop::collection::vec(arb_call(), 1..3),
        arb_text(),
    )
        .prop_map(|(t, a, v)| UnifiedPrediction::new(t, a, v));
    let images = || prop::collection::vec(arb_image(), 0..2);
    prop_oneof![
        (arb_text(), images(), answer.clone()).prop_map(|(q, i, a)| Round::Direct(q, i, a)),
        (arb_text(), images(), dispatch, arb_text(), answer)
            .prop_map(|(q, i, d, r, a)| Round::Tool(q, i, d, r, a)),
    ]
}

pub fn arb_sequence() -> impl Strategy<Value = TrainingSequence> {
    (prop::collection::vec(arb_round(), 1..5), arb_profile()).prop_map(|(rounds, profile)| {
        let mut turns = Vec::new();
        for r in rounds {
            match r {
                Round::Direct(q, i, a) => {
                    turns.push(DialogueTurn::user(q, i));
                    turns.push(DialogueTurn::prediction(a));
                }
                Round::Tool(q, i, d, r, a) => {
                    turns.push(DialogueTurn::user(q, i));
                    turns.push(DialogueTurn::prediction(d));
                    turns.push(DialogueTurn::skill_result(r));
                    turns.push(DialogueTurn::prediction(a));
                }
            }
        }
        TrainingSequence { turns, profile }
    })
}

/// Elo update written directly from the closed form.
pub fn elo_oracle(ra: f64, rb: f64, score_a: f64, k: f64) -> (f64, f64) {
    let ea = 1.0 / (1.0 + 10f64.powf((rb - ra) / 400.0));
    let eb = 1.0 / (1.0 + 10f64.powf((ra - rb) / 400.0));
    (ra + k * (score_a - ea), rb + k * ((1.0 - score_a) - eb))
}
