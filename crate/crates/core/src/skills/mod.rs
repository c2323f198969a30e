//! Skill repository: tool descriptors, call validation and composition plans.

mod builtin;
mod registry;

pub use builtin::{builtin_repository, DEFAULT_ALL_TOOLS};
pub use registry::{
    coerce_for_kind, CallViolation, ExpansionError, ParamKind, ParamSpec, PlanStep, RegistryError,
    SkillCategory, SkillDescriptor, SkillRepository, Wire, WiredInput,
};
