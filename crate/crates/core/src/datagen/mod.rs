//! Instruction-data generation: per-skill generators, composed scenarios,
//! negative and retrieval samples, corpus assembly and statistics.

mod backends;
mod context;
mod corpus;
mod generators;

use thiserror::Error;

pub use backends::{
    AnswerSynthesizer, ContextToolBackend, IdentityRewriter, KnowledgeChecker, PresetBank,
    Rewriter, RotationRewriter, SubstringChecker, SynthesisRequest, TemplateSynthesizer,
};
pub use context::{load_coco, load_coco_file, ImageContext, ObjectAnnotation};
pub use corpus::{
    dataset_stats, format_stats_table, generate_corpus, to_jsonl, CorpusOutput, CorpusSpec,
    GeneratorKind, SkippedSample, StatsRow,
};
pub use generators::{
    default_arg_templates, fill_template, pluralize, CurationRecord, DataGenerator, KnowledgeInput,
    KnowledgeOutcome, Provenance, QuestionTemplate, Scenario, COCO_CATEGORIES, IMAGE_ONLY_SKILLS,
    PLACEHOLDER,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatagenError {
    #[error("image context lacks {0}")]
    MissingContext(&'static str),
    #[error("image context has no annotated objects")]
    NoObjects,
    #[error("field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("unsupported scenario `{0}`")]
    UnsupportedScenario(String),
    #[error("skill `{0}` is not supported by this generator")]
    UnsupportedSkill(String),
    #[error("template has no {{{{classname}}}} placeholder: {0}")]
    TemplateWithoutPlaceholder(String),
    #[error("negative prompt `{0}` is present in the image")]
    NegativeActuallyPresent(String),
    #[error("source data: {0}")]
    Source(String),
    #[error("text backend: {0}")]
    Backend(String),
    #[error("tool: {0}")]
    Tool(String),
    #[error("generated record is invalid: {0}")]
    Invalid(String),
}
