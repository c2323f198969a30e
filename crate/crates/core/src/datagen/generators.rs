//! Record generators: single skills, placeholder templates, visual prompts,
//! LLaVA augmentation, composed scenarios, negative prompts and retrieval.

use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backends::{
    AnswerSynthesizer, ContextToolBackend, KnowledgeChecker, PresetBank, Rewriter, SynthesisRequest,
};
use super::context::ImageContext;
use super::DatagenError;
use crate::format::{
    validate_sequence_grammar, DialogueTurn, ImageRef, SequenceRecord, ToolCall, TrainingSequence,
    UnifiedPrediction, Value, ValueMap, VisualPrompt,
};
use crate::serving::{execute_tool, MockToolBackend, ToolBackend};
use crate::session::{build_skill_result_turn, OutputRenderer};
use crate::skills::SkillRepository;

pub const PLACEHOLDER: &str = "{{classname}}";

/// Skills whose calls carry no content argument.
pub const IMAGE_ONLY_SKILLS: &[&str] = &[
    "blip2",
    "ram",
    "openseed",
    "easyocr",
    "blip2+grounding_dino",
    "ram+grounding_dino",
];

const CAPTION_DEPENDENT: &[&str] = &["blip2", "blip2+grounding_dino"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub image_id: Option<String>,
    pub skills: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub sequence: TrainingSequence,
    pub provenance: Provenance,
    pub stats_keys: Vec<(String, u32)>,
}

impl CurationRecord {
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn training_record(&self) -> SequenceRecord {
        SequenceRecord::from_sequence(&self.sequence).expect("records are grammar-valid")
    }

    pub fn calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.sequence
            .turns
            .iter()
            .filter_map(DialogueTurn::as_prediction)
            .flat_map(|p| p.actions.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub text: String,
    pub skill: String,
    pub requires_placeholder: bool,
}

impl QuestionTemplate {
    pub fn new(text: impl Into<String>, skill: impl Into<String>) -> Self {
        let text = text.into();
        QuestionTemplate {
            requires_placeholder: text.contains(PLACEHOLDER),
            text,
            skill: skill.into(),
        }
    }
}

pub fn default_arg_templates() -> Vec<QuestionTemplate> {
    vec![
        QuestionTemplate::new(
            "Can you help to detect all {{classname}} in the image?",
            "grounding_dino",
        ),
        QuestionTemplate::new(
            "Where are the {{classname}} in this picture?",
            "grounding_dino",
        ),
        QuestionTemplate::new(
            "Please segment the {{classname}} in this photo.",
            "grounding_dino+sam",
        ),
        QuestionTemplate::new(
            "Give me masks for the {{classname}} here.",
            "grounding_dino+sam",
        ),
    ]
}

const PLURAL_EXCEPTIONS: &[(&str, &str)] = &[
    ("bus", "buses"),
    ("glass", "glasses"),
    ("bench", "benches"),
    ("couch", "couches"),
    ("sandwich", "sandwiches"),
    ("knife", "knives"),
    ("mouse", "mice"),
    ("sheep", "sheep"),
    ("skis", "skis"),
    ("scissors", "scissors"),
    ("broccoli", "broccoli"),
    ("person", "persons"),
];

/// Appends `s` to the last word unless it has an irregular plural.
pub fn pluralize(noun: &str) -> String {
    let (head, last) = match noun.rsplit_once(' ') {
        Some((h, l)) => (Some(h), l),
        None => (None, noun),
    };
    let plural = PLURAL_EXCEPTIONS
        .iter()
        .find(|(s, _)| *s == last)
        .map(|(_, p)| p.to_string())
        .unwrap_or_else(|| format!("{last}s"));
    match head {
        Some(h) => format!("{h} {plural}"),
        None => plural,
    }
}

/// Fills the placeholder: one category stays singular, several are
/// pluralized and comma-joined.
pub fn fill_template(text: &str, categories: &[String]) -> String {
    let fill = match categories {
        [one] => one.clone(),
        many => many
            .iter()
            .map(|c| pluralize(c))
            .collect::<Vec<_>>()
            .join(", "),
    };
    text.replace(PLACEHOLDER, &fill)
}

fn question_bank(skill: &str) -> &'static [&'static str] {
    match skill {
        "blip2" => &[
            "Describe this image briefly.",
            "What is shown in this picture?",
            "Give me a short caption for this photo.",
        ],
        "ram" => &[
            "What objects can you spot in this image?",
            "List the things visible in this photo.",
            "Tag the contents of this picture.",
        ],
        "openseed" => &[
            "Segment everything in this image.",
            "Give me a semantic segmentation of this scene.",
        ],
        "easyocr" => &[
            "What text is written in this image?",
            "Read out any words in the picture.",
            "Is there any writing here? What does it say?",
        ],
        "blip2+grounding_dino" => &[
            "Describe the image and show where the described things are.",
            "Caption this photo and locate what the caption mentions.",
        ],
        "ram+grounding_dino" => &[
            "Find all objects in the image and give their locations.",
            "Which objects are here, and where is each one?",
        ],
        _ => &["What can you tell me about this image?"],
    }
}

const POINT_QUESTIONS: &[(&str, &str)] = &[
    ("sam", "Perform segmentation based on the point."),
    ("sam", "Segment the object under the point."),
    (
        "semantic_sam",
        "Segment the region around the point at every granularity.",
    ),
    (
        "semantic_sam",
        "Show the whole, part and subpart masks at the point.",
    ),
];

const NO_TOOL_THOUGHTS: &str =
    "The image and the conversation are enough to reply; no external tool is called.";

const INPAINT_PROMPTS: &[&str] = &[
    "a red sports car",
    "a bouquet of sunflowers",
    "a wooden rowing boat",
    "a sleeping cat",
];
const SCENE_PHRASES: &[&str] = &[
    "under the sea",
    "in a snowy forest",
    "on the surface of the moon",
    "in a watercolor style",
];
const EDIT_INSTRUCTIONS: &[&str] = &[
    "make it look like winter",
    "turn the sky into a sunset",
    "add fireworks in the background",
    "make it a pencil sketch",
];
const POST_OPENERS: &[&str] = &[
    "Fresh from the studio:",
    "New post!",
    "Sharing something fun today:",
];
const POST_TAGS: &[&str] = &["#art #creative", "#photooftheday", "#weekendvibes #design"];

/// Categories used to draw negative prompts.
pub const COCO_CATEGORIES: &[&str] = &[
    "person",
    "bicycle",
    "car",
    "motorcycle",
    "airplane",
    "bus",
    "train",
    "truck",
    "boat",
    "traffic light",
    "bench",
    "bird",
    "cat",
    "dog",
    "horse",
    "sheep",
    "cow",
    "elephant",
    "bear",
    "zebra",
    "giraffe",
    "backpack",
    "umbrella",
    "handbag",
    "suitcase",
    "frisbee",
    "kite",
    "skateboard",
    "surfboard",
    "bottle",
    "wine glass",
    "cup",
    "fork",
    "knife",
    "bowl",
    "banana",
    "apple",
    "sandwich",
    "pizza",
    "chair",
    "couch",
    "bed",
    "dining table",
    "tv",
    "laptop",
    "clock",
    "vase",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    UnderstandingMix { rounds: Option<usize> },
    InteractiveSegInpaint,
    SemSegGeneration,
    GenerationPost,
    EditingPost,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::UnderstandingMix { rounds: None },
        Scenario::InteractiveSegInpaint,
        Scenario::SemSegGeneration,
        Scenario::GenerationPost,
        Scenario::EditingPost,
    ];

    /// The composed skill a scenario's records are counted under.
    pub fn skill(&self) -> &'static str {
        match self {
            Scenario::UnderstandingMix { .. } => "grounding_dino+sam+ram+blip2",
            Scenario::InteractiveSegInpaint => "sam+stable_diffusion",
            Scenario::SemSegGeneration => "openseed+controlnet",
            Scenario::GenerationPost => "stable_diffusion+blip2",
            Scenario::EditingPost => "instruct_pix2pix+blip2",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::UnderstandingMix { .. } => "understanding-mix",
            Scenario::InteractiveSegInpaint => "interactive-seg+inpaint",
            Scenario::SemSegGeneration => "semantic-seg+generation",
            Scenario::GenerationPost => "generation+post",
            Scenario::EditingPost => "editing+post",
        }
    }
}

impl FromStr for Scenario {
    type Err = DatagenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .iter()
            .find(|sc| sc.name() == s)
            .copied()
            .ok_or_else(|| DatagenError::UnsupportedScenario(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeInput {
    pub question: String,
    pub answer: String,
    pub retrieved: Vec<String>,
    #[serde(default)]
    pub image: Option<ImageRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KnowledgeOutcome {
    Accepted(Box<CurationRecord>),
    Rejected { question: String },
}

/// Collects turns for one record.
struct Draft {
    turns: Vec<DialogueTurn>,
    questions: Vec<String>,
    skills: Vec<String>,
    stats_skill: Option<String>,
}

impl Draft {
    fn new() -> Self {
        Draft {
            turns: Vec::new(),
            questions: Vec::new(),
            skills: Vec::new(),
            stats_skill: None,
        }
    }
}

/// Shared configuration for every generator.
pub struct DataGenerator<'a> {
    pub repo: &'a SkillRepository,
    pub rewriter: &'a dyn Rewriter,
    pub synthesizer: &'a dyn AnswerSynthesizer,
    pub presets: PresetBank,
    pub renderer: OutputRenderer,
}

impl<'a> DataGenerator<'a> {
    pub fn new(
        repo: &'a SkillRepository,
        rewriter: &'a dyn Rewriter,
        synthesizer: &'a dyn AnswerSynthesizer,
    ) -> Self {
        DataGenerator {
            repo,
            rewriter,
            synthesizer,
            presets: PresetBank::default(),
            renderer: OutputRenderer::Json,
        }
    }

    fn rewrite(&self, text: &str, rng: &mut ChaCha8Rng) -> Result<String, DatagenError> {
        self.rewriter.rewrite(text, rng.next_u64())
    }

    /// Appends question, skill use, skill result and answer.
    #[allow(clippy::too_many_arguments)]
    fn tool_round(
        &self,
        draft: &mut Draft,
        question: String,
        images: Vec<ImageRef>,
        calls: Vec<ToolCall>,
        ctx: &ImageContext,
        backend: &dyn ToolBackend,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(String, ValueMap)>, DatagenError> {
        let label = calls
            .iter()
            .map(|c| c.api_name.as_str())
            .collect::<Vec<_>>()
            .join(", ");
        let thoughts = PresetBank::pick(&self.presets.use_thoughts, rng.next_u64(), &label);
        let thoughts = self.rewrite(&thoughts, rng)?;
        let value = PresetBank::pick(&self.presets.use_values, rng.next_u64(), &label);
        let tool_images = if images.is_empty() {
            vec![ctx.image_ref()]
        } else {
            images.clone()
        };
        draft
            .turns
            .push(DialogueTurn::user(question.clone(), images));
        draft.questions.push(question.clone());
        draft
            .turns
            .push(DialogueTurn::prediction(UnifiedPrediction::new(
                thoughts,
                calls.clone(),
                value,
            )));
        let mut outputs = Vec::with_capacity(calls.len());
        for call in &calls {
            let result = execute_tool(self.repo, backend, call, &tool_images)
                .map_err(|e| DatagenError::Tool(format!("{}: {e}", call.api_name)))?;
            outputs.push((call.api_name.clone(), result.output));
            draft.skills.push(call.api_name.clone());
        }
        draft
            .turns
            .push(build_skill_result_turn(&outputs, &question, self.renderer));
        let answer = self.synthesizer.synthesize(&SynthesisRequest {
            questions: draft.questions.clone(),
            tool_outputs: outputs.clone(),
            context: ctx,
        })?;
        let answer_thoughts =
            PresetBank::pick(&self.presets.answer_thoughts, rng.next_u64(), &label);
        draft
            .turns
            .push(DialogueTurn::prediction(UnifiedPrediction::answer(
                answer_thoughts,
                answer,
            )));
        Ok(outputs)
    }

    fn direct_round(
        &self,
        draft: &mut Draft,
        question: String,
        images: Vec<ImageRef>,
        answer: String,
    ) {
        draft.questions.push(question.clone());
        draft.turns.push(DialogueTurn::user(question, images));
        draft
            .turns
            .push(DialogueTurn::prediction(UnifiedPrediction::answer(
                NO_TOOL_THOUGHTS,
                answer,
            )));
    }

    fn finish(
        &self,
        draft: Draft,
        generator: &str,
        seed: u64,
        image_id: Option<String>,
    ) -> Result<CurationRecord, DatagenError> {
        validate_sequence_grammar(&draft.turns)
            .map_err(|v| DatagenError::Invalid(format!("{generator}: {v:?}")))?;
        for p in draft.turns.iter().filter_map(DialogueTurn::as_prediction) {
            for call in &p.actions {
                self.repo
                    .validate_call(call)
                    .map_err(|v| DatagenError::Invalid(format!("{generator}: {v:?}")))?;
            }
        }
        let stats_keys = match &draft.stats_skill {
            Some(s) => vec![(s.clone(), 1)],
            None => draft.skills.iter().map(|s| (s.clone(), 1)).collect(),
        };
        let mut skills = draft.skills;
        skills.dedup();
        Ok(CurationRecord {
            sequence: TrainingSequence::new(draft.turns),
            provenance: Provenance {
                generator: generator.to_owned(),
                seed,
                image_id,
                skills,
            },
            stats_keys,
        })
    }

    pub fn gen_image_only_sample(
        &self,
        ctx: &ImageContext,
        skill: &str,
        seed: u64,
    ) -> Result<CurationRecord, DatagenError> {
        if !IMAGE_ONLY_SKILLS.contains(&skill) {
            return Err(DatagenError::UnsupportedSkill(skill.to_owned()));
        }
        if CAPTION_DEPENDENT.contains(&skill) && ctx.captions.is_empty() {
            return Err(DatagenError::MissingContext("captions"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = question_bank(skill)
            .choose(&mut rng)
            .expect("bank nonempty");
        let question = self.rewrite(base, &mut rng)?;
        let backend = ContextToolBackend { context: ctx, seed };
        let mut draft = Draft::new();
        self.tool_round(
            &mut draft,
            question,
            vec![ctx.image_ref()],
            vec![ToolCall::new(skill)],
            ctx,
            &backend,
            &mut rng,
        )?;
        self.finish(draft, "image-only", seed, Some(ctx.image_id.clone()))
    }

    pub fn gen_arg_skill_sample(
        &self,
        ctx: &ImageContext,
        template: &QuestionTemplate,
        seed: u64,
    ) -> Result<CurationRecord, DatagenError> {
        if !template.requires_placeholder {
            return Err(DatagenError::TemplateWithoutPlaceholder(
                template.text.clone(),
            ));
        }
        let categories = ctx.categories();
        if categories.is_empty() {
            return Err(DatagenError::NoObjects);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=categories.len().min(3));
        let mut chosen: Vec<String> = categories.choose_multiple(&mut rng, n).cloned().collect();
        chosen.shuffle(&mut rng);
        let question = self.rewrite(&fill_template(&template.text, &chosen), &mut rng)?;
        let call = ToolCall::new(template.skill.clone()).with_param("caption", chosen.join(" . "));
        let backend = ContextToolBackend { context: ctx, seed };
        let mut draft = Draft::new();
        self.tool_round(
            &mut draft,
            question,
            vec![ctx.image_ref()],
            vec![call],
            ctx,
            &backend,
            &mut rng,
        )?;
        self.finish(draft, "arg-skill", seed, Some(ctx.image_id.clone()))
    }

    /// Draws a point on the 0.01 grid, so the rendered text parses back to
    /// the same coordinates.
    pub fn gen_visual_prompt_sample(
        &self,
        ctx: &ImageContext,
        seed: u64,
    ) -> Result<CurationRecord, DatagenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rng.random_range(0..=100) as f64 / 100.0;
        let y = rng.random_range(0..=100) as f64 / 100.0;
        let (skill, base) = *POINT_QUESTIONS.choose(&mut rng).expect("bank nonempty");
        self.visual_prompt_record(ctx, skill, base, x, y, seed, &mut rng)
    }

    /// The visual-prompt record for a given point and skill.
    pub fn gen_visual_prompt_at(
        &self,
        ctx: &ImageContext,
        skill: &str,
        x: f64,
        y: f64,
        seed: u64,
    ) -> Result<CurationRecord, DatagenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = POINT_QUESTIONS
            .iter()
            .find(|(s, _)| *s == skill)
            .map(|(_, q)| *q)
            .ok_or_else(|| DatagenError::UnsupportedSkill(skill.to_owned()))?;
        self.visual_prompt_record(ctx, skill, base, x, y, seed, &mut rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn visual_prompt_record(
        &self,
        ctx: &ImageContext,
        skill: &str,
        base: &str,
        x: f64,
        y: f64,
        seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CurationRecord, DatagenError> {
        let point = VisualPrompt::point(x, y).map_err(|e| DatagenError::Invalid(e.to_string()))?;
        let question = point.append_to(base);
        let call = ToolCall::new(skill).with_param("point", point.to_param());
        let backend = ContextToolBackend { context: ctx, seed };
        let mut draft = Draft::new();
        self.tool_round(
            &mut draft,
            question,
            vec![ctx.image_ref()],
            vec![call],
            ctx,
            &backend,
            rng,
        )?;
        self.finish(draft, "visual-prompt", seed, Some(ctx.image_id.clone()))
    }

    pub fn augment_llava_record(
        &self,
        question: &str,
        answer: &str,
        image: Option<ImageRef>,
    ) -> Result<CurationRecord, DatagenError> {
        if question.trim().is_empty() {
            return Err(DatagenError::EmptyField("question"));
        }
        if answer.trim().is_empty() {
            return Err(DatagenError::EmptyField("answer"));
        }
        let image_id = image.as_ref().map(|i| i.id.clone());
        let mut draft = Draft::new();
        self.direct_round(
            &mut draft,
            question.to_owned(),
            image.into_iter().collect(),
            answer.to_owned(),
        );
        self.finish(draft, "llava", 0, image_id)
    }

    pub fn gen_composed_sample(
        &self,
        ctx: &ImageContext,
        scenario: Scenario,
        seed: u64,
    ) -> Result<CurationRecord, DatagenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backend = ContextToolBackend { context: ctx, seed };
        let image = vec![ctx.image_ref()];
        let mut draft = Draft::new();
        draft.stats_skill = Some(scenario.skill().to_owned());
        match scenario {
            Scenario::UnderstandingMix { rounds } => {
                let k = match rounds {
                    Some(0) => {
                        return Err(DatagenError::Invalid(
                            "understanding mix needs at least one round".into(),
                        ))
                    }
                    Some(k) => k,
                    None => rng.random_range(2..=4),
                };
                let categories = ctx.categories();
                let mut pool = vec!["blip2", "ram"];
                if !categories.is_empty() {
                    pool.extend(["grounding_dino", "grounding_dino+sam"]);
                }
                for round in 0..k {
                    let skill = *pool.choose(&mut rng).expect("pool nonempty");
                    let (base, call) = if skill.starts_with("grounding_dino") {
                        let category = categories
                            .choose(&mut rng)
                            .expect("objects present")
                            .clone();
                        let template = default_arg_templates()
                            .into_iter()
                            .filter(|t| t.skill == skill)
                            .collect::<Vec<_>>()
                            .choose(&mut rng)
                            .expect("template for skill")
                            .clone();
                        (
                            fill_template(&template.text, std::slice::from_ref(&category)),
                            ToolCall::new(skill).with_param("caption", category),
                        )
                    } else {
                        let base = question_bank(skill)
                            .choose(&mut rng)
                            .expect("bank nonempty")
                            .to_string();
                        (base, ToolCall::new(skill))
                    };
                    let question = self.rewrite(&base, &mut rng)?;
                    let imgs = if round == 0 { image.clone() } else { vec![] };
                    self.tool_round(
                        &mut draft,
                        question,
                        imgs,
                        vec![call],
                        ctx,
                        &backend,
                        &mut rng,
                    )?;
                }
            }
            Scenario::InteractiveSegInpaint => {
                let x = rng.random_range(0..=100) as f64 / 100.0;
                let y = rng.random_range(0..=100) as f64 / 100.0;
                let point =
                    VisualPrompt::point(x, y).map_err(|e| DatagenError::Invalid(e.to_string()))?;
                let q1 = point.append_to("Segment the object at this point.");
                let call = ToolCall::new("sam").with_param("point", point.to_param());
                let outputs = self.tool_round(
                    &mut draft,
                    q1,
                    image.clone(),
                    vec![call],
                    ctx,
                    &backend,
                    &mut rng,
                )?;
                let mask = first_text(&outputs[0].1, "masks")?;
                let prompt = *INPAINT_PROMPTS.choose(&mut rng).expect("bank nonempty");
                let q2 = self.rewrite(
                    &format!("Replace the segmented region with {prompt}."),
                    &mut rng,
                )?;
                let call = ToolCall::new("stable_diffusion")
                    .with_param("prompt", prompt)
                    .with_param("mask", mask);
                self.tool_round(&mut draft, q2, vec![], vec![call], ctx, &backend, &mut rng)?;
            }
            Scenario::SemSegGeneration => {
                let q1 =
                    self.rewrite("Give me a semantic segmentation of this image.", &mut rng)?;
                let outputs = self.tool_round(
                    &mut draft,
                    q1,
                    image.clone(),
                    vec![ToolCall::new("openseed")],
                    ctx,
                    &backend,
                    &mut rng,
                )?;
                let mask = outputs[0]
                    .1
                    .get("mask")
                    .and_then(Value::as_str)
                    .ok_or_else(|| DatagenError::Tool("openseed returned no mask".into()))?
                    .to_owned();
                let scene = *SCENE_PHRASES.choose(&mut rng).expect("bank nonempty");
                let target = format!("{} {scene}", base_caption(ctx));
                let q2 = self.rewrite(
                    &format!("Generate a new image with this layout: {target}."),
                    &mut rng,
                )?;
                let call = ToolCall::new("controlnet")
                    .with_param("caption", target)
                    .with_param("condition", mask);
                self.tool_round(&mut draft, q2, vec![], vec![call], ctx, &backend, &mut rng)?;
            }
            Scenario::GenerationPost => {
                let prompt = base_caption(ctx);
                let q1 = self.rewrite(
                    &format!("Draw a picture of {}.", lower_first(&prompt)),
                    &mut rng,
                )?;
                let call =
                    ToolCall::new("stable_diffusion+blip2").with_param("prompt", prompt.clone());
                self.tool_round(&mut draft, q1, vec![], vec![call], ctx, &backend, &mut rng)?;
                let post = social_post(&prompt, &mut rng);
                self.direct_round(
                    &mut draft,
                    "Write a social media post for this picture.".into(),
                    vec![],
                    post,
                );
            }
            Scenario::EditingPost => {
                let instruction = *EDIT_INSTRUCTIONS.choose(&mut rng).expect("bank nonempty");
                let q1 = self.rewrite(&format!("Edit this photo: {instruction}."), &mut rng)?;
                let call =
                    ToolCall::new("instruct_pix2pix+blip2").with_param("instruction", instruction);
                self.tool_round(
                    &mut draft,
                    q1,
                    image.clone(),
                    vec![call],
                    ctx,
                    &backend,
                    &mut rng,
                )?;
                let post = social_post(
                    &format!("{}, edited to {instruction}", base_caption(ctx)),
                    &mut rng,
                );
                self.direct_round(
                    &mut draft,
                    "Now write a short post to share the edited photo.".into(),
                    vec![],
                    post,
                );
            }
        }
        self.finish(draft, scenario.name(), seed, Some(ctx.image_id.clone()))
    }

    /// Asks for a category absent from the image; the detector's boxes are
    /// false positives and the answer says so.
    pub fn gen_negative_prompt_sample(
        &self,
        ctx: &ImageContext,
        negatives: &[String],
        seed: u64,
    ) -> Result<CurationRecord, DatagenError> {
        if let Some(present) = negatives.iter().find(|n| ctx.has_category(n)) {
            return Err(DatagenError::NegativeActuallyPresent(present.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let negative = negatives
            .choose(&mut rng)
            .ok_or(DatagenError::MissingContext("negatives"))?
            .clone();
        let template = &default_arg_templates()[0];
        let question = self.rewrite(
            &fill_template(&template.text, std::slice::from_ref(&negative)),
            &mut rng,
        )?;
        let call = ToolCall::new("grounding_dino").with_param("caption", negative.clone());
        let backend = MockToolBackend::new(seed);
        let mut draft = Draft::new();
        draft
            .turns
            .push(DialogueTurn::user(question.clone(), vec![ctx.image_ref()]));
        draft.questions.push(question.clone());
        let label = "grounding_dino";
        draft
            .turns
            .push(DialogueTurn::prediction(UnifiedPrediction::new(
                PresetBank::pick(&self.presets.use_thoughts, rng.next_u64(), label),
                vec![call.clone()],
                PresetBank::pick(&self.presets.use_values, rng.next_u64(), label),
            )));
        let result = execute_tool(self.repo, &backend, &call, &[ctx.image_ref()])
            .map_err(|e| DatagenError::Tool(e.to_string()))?;
        draft.skills.push(label.to_owned());
        draft.turns.push(build_skill_result_turn(
            &[(label.to_owned(), result.output)],
            &question,
            self.renderer,
        ));
        draft.turns.push(DialogueTurn::prediction(UnifiedPrediction::answer(
            "Checking the detections against the image shows they do not match the request.",
            format!("There is no {negative} in this image. The detected boxes are false positives and can be ignored."),
        )));
        self.finish(draft, "negative-prompt", seed, Some(ctx.image_id.clone()))
    }

    pub fn gen_knowledge_sample(
        &self,
        input: &KnowledgeInput,
        checker: &dyn KnowledgeChecker,
        seed: u64,
    ) -> Result<KnowledgeOutcome, DatagenError> {
        if !checker.derivable(&input.answer, &input.retrieved)? {
            return Ok(KnowledgeOutcome::Rejected {
                question: input.question.clone(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = input.retrieved.len();
        let call = ToolCall::new("clip_retrieval").with_param("k", Value::int(k as u64));
        let scores: Vec<f64> = (0..k).map(|i| (1.0 - 0.1 * i as f64).max(0.05)).collect();
        let mut output = ValueMap::new();
        output.insert(
            "items".into(),
            Value::List(input.retrieved.iter().cloned().map(Value::text).collect()),
        );
        output.insert("scores".into(), Value::numbers(&scores, 2));
        let label = "clip_retrieval";
        let mut draft = Draft::new();
        draft.turns.push(DialogueTurn::user(
            input.question.clone(),
            input.image.clone().into_iter().collect(),
        ));
        draft
            .turns
            .push(DialogueTurn::prediction(UnifiedPrediction::new(
                PresetBank::pick(&self.presets.use_thoughts, rng.next_u64(), label),
                vec![call],
                PresetBank::pick(&self.presets.use_values, rng.next_u64(), label),
            )));
        draft.skills.push(label.to_owned());
        draft.turns.push(build_skill_result_turn(
            &[(label.to_owned(), output)],
            &input.question,
            self.renderer,
        ));
        draft
            .turns
            .push(DialogueTurn::prediction(UnifiedPrediction::answer(
                PresetBank::pick(&self.presets.answer_thoughts, rng.next_u64(), label),
                input.answer.clone(),
            )));
        let image_id = input.image.as_ref().map(|i| i.id.clone());
        Ok(KnowledgeOutcome::Accepted(Box::new(self.finish(
            draft,
            "knowledge",
            seed,
            image_id,
        )?)))
    }
}

fn first_text(out: &ValueMap, key: &str) -> Result<String, DatagenError> {
    out.get(key)
        .and_then(Value::as_list)
        .and_then(|l| l.first())
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| DatagenError::Tool(format!("tool output lacks `{key}`")))
}

fn base_caption(ctx: &ImageContext) -> String {
    match ctx.captions.first() {
        Some(c) => c.trim().trim_end_matches('.').to_owned(),
        None => {
            let cats = ctx.categories();
            if cats.is_empty() {
                "A quiet street scene".to_owned()
            } else {
                format!("A scene with {}", cats.join(" and "))
            }
        }
    }
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn social_post(subject: &str, rng: &mut ChaCha8Rng) -> String {
    let opener = POST_OPENERS.choose(rng).expect("bank nonempty");
    let tags = POST_TAGS.choose(rng).expect("bank nonempty");
    format!("{opener} {subject}. {tags}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        IdentityRewriter, RotationRewriter, SubstringChecker, TemplateSynthesizer,
    };
    use crate::format::{extract_visual_prompt, render_training_sequence, Role};
    use crate::skills::builtin_repository;

    fn ctx() -> ImageContext {
        ImageContext::new("42")
            .with_caption("A bicycle parked next to a bench.")
            .with_object("bicycle", [0.1, 0.2, 0.4, 0.9])
            .with_object("bench", [0.5, 0.5, 0.9, 0.9])
            .with_object("person", [0.0, 0.0, 0.2, 0.6])
    }

    fn check(record: &CurationRecord, repo: &SkillRepository) {
        validate_sequence_grammar(&record.sequence.turns).unwrap();
        for call in record.calls() {
            repo.validate_call(call).unwrap();
        }
        let (_, mask) = render_training_sequence(&record.sequence).unwrap();
        let assistant = record
            .sequence
            .turns
            .iter()
            .filter(|t| t.role() == Role::Assistant)
            .count();
        assert_eq!(mask.trained_spans().count(), assistant);
    }

    #[test]
    fn image_only_caption() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &RotationRewriter, &TemplateSynthesizer);
        let r = g.gen_image_only_sample(&ctx(), "blip2", 5).unwrap();
        assert_eq!(r.sequence.turns.len(), 4);
        assert_eq!(r.calls().next().unwrap(), &ToolCall::new("blip2"));
        check(&r, &repo);
        assert_eq!(
            r.to_jsonl(),
            g.gen_image_only_sample(&ctx(), "blip2", 5)
                .unwrap()
                .to_jsonl()
        );
        assert_eq!(
            g.gen_image_only_sample(&ImageContext::new("x"), "blip2", 0),
            Err(DatagenError::MissingContext("captions"))
        );
    }

    #[test]
    fn fig7_fill() {
        let cats: Vec<String> = ["person", "car", "dog"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(
            fill_template(&default_arg_templates()[0].text, &cats),
            "Can you help to detect all persons, cars, dogs in the image?"
        );
        assert_eq!(
            fill_template("all {{classname}}", &["bus".into()]),
            "all bus"
        );
        assert_eq!(pluralize("wine glass"), "wine glasses");
    }

    #[test]
    fn arg_skill_uses_present_categories() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &IdentityRewriter, &TemplateSynthesizer);
        let context = ctx();
        for seed in 0..50 {
            for t in default_arg_templates() {
                let r = g.gen_arg_skill_sample(&context, &t, seed).unwrap();
                check(&r, &repo);
                let call = r.calls().next().unwrap();
                let caption = call.param("caption").unwrap().as_str().unwrap();
                for term in caption.split(" . ") {
                    assert!(context.has_category(term), "{term}");
                }
            }
        }
        let single = ImageContext::new("1").with_object("dog", [0.0, 0.0, 1.0, 1.0]);
        let r = g
            .gen_arg_skill_sample(&single, &default_arg_templates()[0], 1)
            .unwrap();
        assert_eq!(
            r.calls().next().unwrap().param("caption"),
            Some(&Value::text("dog"))
        );
        assert_eq!(
            g.gen_arg_skill_sample(&ImageContext::new("1"), &default_arg_templates()[0], 1),
            Err(DatagenError::NoObjects)
        );
    }

    #[test]
    fn visual_prompt_question() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &IdentityRewriter, &TemplateSynthesizer);
        let r = g
            .gen_visual_prompt_at(&ctx(), "sam", 0.45, 0.89, 0)
            .unwrap();
        let DialogueTurn::UserInstruction { text, .. } = &r.sequence.turns[0] else {
            panic!()
        };
        assert_eq!(
            text,
            "Perform segmentation based on the point. input point: [0.45, 0.89]"
        );
        let corner = g.gen_visual_prompt_at(&ctx(), "sam", 0.0, 0.0, 0).unwrap();
        let DialogueTurn::UserInstruction { text, .. } = &corner.sequence.turns[0] else {
            panic!()
        };
        assert!(text.ends_with("input point: [0.00, 0.00]"));
        for seed in 0..200 {
            let r = g.gen_visual_prompt_sample(&ctx(), seed).unwrap();
            check(&r, &repo);
            let DialogueTurn::UserInstruction { text, .. } = &r.sequence.turns[0] else {
                panic!()
            };
            assert!(extract_visual_prompt(text).unwrap().check().is_ok());
        }
    }

    #[test]
    fn llava_augmentation() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &IdentityRewriter, &TemplateSynthesizer);
        let r = g
            .augment_llava_record(
                "What are the colors of the bus in the image?",
                "The bus in the image is white and red.",
                None,
            )
            .unwrap();
        let p = r.sequence.turns[1].as_prediction().unwrap();
        assert_eq!(p.value, "The bus in the image is white and red.");
        assert!(p.actions.is_empty());
        assert!(repo.names().all(|n| !p.thoughts.contains(n)));
        assert_eq!(
            g.augment_llava_record("q", "  ", None),
            Err(DatagenError::EmptyField("answer"))
        );
    }

    #[test]
    fn composed_scenarios() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &RotationRewriter, &TemplateSynthesizer);
        for seed in 0..40 {
            for sc in Scenario::ALL {
                let r = g.gen_composed_sample(&ctx(), sc, seed).unwrap();
                check(&r, &repo);
                assert_eq!(r.stats_keys, vec![(sc.skill().to_owned(), 1)]);
            }
        }
        let r = g
            .gen_composed_sample(&ctx(), Scenario::SemSegGeneration, 0)
            .unwrap();
        let calls: Vec<&ToolCall> = r.calls().collect();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[1].api_name, "controlnet");
        let caption = calls[1].param("caption").unwrap().as_str().unwrap();
        assert!(
            caption.starts_with("A bicycle parked next to a bench "),
            "{caption}"
        );
        let one = g
            .gen_composed_sample(&ctx(), Scenario::UnderstandingMix { rounds: Some(1) }, 3)
            .unwrap();
        assert_eq!(one.sequence.turns.len(), 4);
        assert!(matches!(
            "nope".parse::<Scenario>(),
            Err(DatagenError::UnsupportedScenario(_))
        ));
    }

    #[test]
    fn negative_prompt() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &IdentityRewriter, &TemplateSynthesizer);
        let r = g
            .gen_negative_prompt_sample(&ctx(), &["zebra".into()], 0)
            .unwrap();
        check(&r, &repo);
        let last = r.sequence.turns[3].as_prediction().unwrap();
        assert!(last.value.contains("no zebra"));
        let DialogueTurn::SkillResult { text } = &r.sequence.turns[2] else {
            panic!()
        };
        assert!(text.starts_with("grounding_dino model outputs: "));
        assert!(text.ends_with("Can you help to detect all zebra in the image?"));
        assert_eq!(
            g.gen_negative_prompt_sample(&ctx(), &["bench".into()], 0),
            Err(DatagenError::NegativeActuallyPresent("bench".into()))
        );
    }

    #[test]
    fn knowledge_acceptance() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &IdentityRewriter, &TemplateSynthesizer);
        let mut input = KnowledgeInput {
            question: "When was this tower built?".into(),
            answer: "1889".into(),
            retrieved: (1..=5).map(|i| format!("item {i}")).collect(),
            image: None,
        };
        input.retrieved[1] = "The tower was completed in 1889.".into();
        let KnowledgeOutcome::Accepted(r) = g
            .gen_knowledge_sample(&input, &SubstringChecker, 0)
            .unwrap()
        else {
            panic!()
        };
        check(&r, &repo);
        assert_eq!(r.calls().next().unwrap().param("k"), Some(&Value::int(5)));
        input.answer = "1900".into();
        assert!(matches!(
            g.gen_knowledge_sample(&input, &SubstringChecker, 0)
                .unwrap(),
            KnowledgeOutcome::Rejected { .. }
        ));
    }
}
