use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{ToolCall, Value, ValueMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Text,
    Number,
    /// Two coordinates in [0, 1].
    Point,
    /// Four coordinates in [0, 1], or a list of such boxes.
    Box,
    ImageRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default)]
    pub required: bool,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamKind) -> Self {
        ParamSpec {
            name: name.into(),
            kind,
            required: true,
        }
    }

    pub fn optional(name: &str, kind: ParamKind) -> Self {
        ParamSpec {
            name: name.into(),
            kind,
            required: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkillCategory {
    Understanding,
    ExternalKnowledge,
    Generation,
    VisualPrompt,
    Composed,
}

/// Feeds output `output` of member `from` into param `param` of member `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wire {
    pub from: usize,
    pub output: String,
    pub to: usize,
    pub param: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillDescriptor {
    pub name: String,
    pub category: SkillCategory,
    /// Row grouping used in dataset statistics ("Understanding", "Composed Skills", ...).
    #[serde(default)]
    pub group: String,
    /// Human-readable skill label ("Instance Segmentation").
    #[serde(default)]
    pub task: String,
    /// Dataset the skill's instruction data is usually drawn from.
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub members: Vec<String>,
    #[serde(default)]
    pub wiring: Vec<Wire>,
    /// Expected output field names. Advisory only.
    #[serde(default)]
    pub output_sketch: Vec<String>,
}

impl SkillDescriptor {
    pub fn is_composed(&self) -> bool {
        !self.members.is_empty()
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("skill `{0}` is already registered")]
    DuplicateName(String),
    #[error("skill `{skill}` references unknown member `{member}`")]
    UnresolvedMember { skill: String, member: String },
    #[error("composition cycle through {}", .0.join(" -> "))]
    CompositionCycle(Vec<String>),
    #[error("invalid descriptor `{skill}`: {detail}")]
    InvalidDescriptor { skill: String, detail: String },
    #[error("cannot read skill config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallViolation {
    UnknownSkill(String),
    MissingParam(String),
    BadKind(String),
}

impl fmt::Display for CallViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CallViolation::UnknownSkill(s) => write!(f, "unknown skill `{s}`"),
            CallViolation::MissingParam(p) => write!(f, "missing param `{p}`"),
            CallViolation::BadKind(p) => write!(f, "param `{p}` has the wrong kind"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExpansionError {
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("unwireable composition: {0}")]
    UnwireableComposition(String),
}

/// A param whose value comes from an earlier step's output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WiredInput {
    pub param: String,
    pub from_step: usize,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    /// Primitive call with its statically known params.
    pub call: ToolCall,
    pub inputs: Vec<WiredInput>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRepository {
    entries: BTreeMap<String, SkillDescriptor>,
}

impl SkillRepository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&SkillDescriptor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SkillDescriptor> {
        self.entries.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Adds a descriptor whose members are already registered.
    pub fn register(&mut self, descriptor: SkillDescriptor) -> Result<(), RegistryError> {
        if self.entries.contains_key(&descriptor.name) {
            return Err(RegistryError::DuplicateName(descriptor.name));
        }
        check_shape(&descriptor)?;
        if descriptor.members.iter().any(|m| m == &descriptor.name) {
            return Err(RegistryError::CompositionCycle(vec![
                descriptor.name.clone(),
                descriptor.name.clone(),
            ]));
        }
        if let Some(missing) = descriptor
            .members
            .iter()
            .find(|m| !self.entries.contains_key(*m))
        {
            return Err(RegistryError::UnresolvedMember {
                skill: descriptor.name.clone(),
                member: missing.clone(),
            });
        }
        self.entries.insert(descriptor.name.clone(), descriptor);
        Ok(())
    }

    /// Builds a repository from descriptors in any order, registering
    /// members before the skills composed from them.
    pub fn from_descriptors(descriptors: Vec<SkillDescriptor>) -> Result<Self, RegistryError> {
        let mut by_name: BTreeMap<String, SkillDescriptor> = BTreeMap::new();
        for d in descriptors {
            if by_name.contains_key(&d.name) {
                return Err(RegistryError::DuplicateName(d.name));
            }
            by_name.insert(d.name.clone(), d);
        }
        for d in by_name.values() {
            if let Some(missing) = d.members.iter().find(|m| !by_name.contains_key(*m)) {
                return Err(RegistryError::UnresolvedMember {
                    skill: d.name.clone(),
                    member: missing.clone(),
                });
            }
        }

        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Visiting,
            Done,
        }
        fn visit(
            name: &str,
            by_name: &BTreeMap<String, SkillDescriptor>,
            marks: &mut BTreeMap<String, Mark>,
            path: &mut Vec<String>,
            order: &mut Vec<String>,
        ) -> Result<(), RegistryError> {
            match marks.get(name) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Visiting) => {
                    let at = path.iter().position(|p| p == name).unwrap_or(0);
                    let mut cycle = path[at..].to_vec();
                    cycle.push(name.to_owned());
                    return Err(RegistryError::CompositionCycle(cycle));
                }
                None => {}
            }
            marks.insert(name.to_owned(), Mark::Visiting);
            path.push(name.to_owned());
            for member in &by_name[name].members {
                visit(member, by_name, marks, path, order)?;
            }
            path.pop();
            marks.insert(name.to_owned(), Mark::Done);
            order.push(name.to_owned());
            Ok(())
        }

        let mut marks = BTreeMap::new();
        let mut order = Vec::new();
        for name in by_name.keys() {
            visit(name, &by_name, &mut marks, &mut Vec::new(), &mut order)?;
        }
        let mut repo = SkillRepository::new();
        for name in order {
            let d = by_name.remove(&name).expect("visited names exist");
            repo.register(d)?;
        }
        Ok(repo)
    }

    /// Loads `[{"name": ..., "category": ..., "params": [...], "members": [...], "wiring": [...]}]`.
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let descriptors: Vec<SkillDescriptor> =
            serde_json::from_str(text).map_err(|e| RegistryError::Config(e.to_string()))?;
        Self::from_descriptors(descriptors)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, RegistryError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| RegistryError::Config(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let descriptors: Vec<&SkillDescriptor> = self.entries.values().collect();
        serde_json::to_string_pretty(&descriptors).expect("descriptors serialize")
    }

    /// Checks a call before dispatch. Unknown extra params are tolerated.
    pub fn validate_call(&self, call: &ToolCall) -> Result<(), Vec<CallViolation>> {
        let Some(descriptor) = self.get(&call.api_name) else {
            return Err(vec![CallViolation::UnknownSkill(call.api_name.clone())]);
        };
        let mut violations = Vec::new();
        for spec in &descriptor.params {
            match call.api_params.get(&spec.name) {
                None if spec.required => {
                    violations.push(CallViolation::MissingParam(spec.name.clone()))
                }
                None => {}
                Some(value) if !kind_accepts(spec.kind, value) => {
                    violations.push(CallViolation::BadKind(spec.name.clone()))
                }
                Some(_) => {}
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Flattens a call into primitive steps. Composed skills pass each of
    /// their call params to every member that declares a param of that name;
    /// wiring supplies the rest at execution time.
    pub fn expansion_plan(&self, call: &ToolCall) -> Result<Vec<PlanStep>, ExpansionError> {
        let descriptor = self
            .get(&call.api_name)
            .ok_or_else(|| ExpansionError::UnknownSkill(call.api_name.clone()))?;
        let mut steps = Vec::new();
        self.expand_into(descriptor, &call.api_params, &mut steps)?;
        Ok(steps)
    }

    fn expand_into(
        &self,
        descriptor: &SkillDescriptor,
        params: &ValueMap,
        steps: &mut Vec<PlanStep>,
    ) -> Result<(), ExpansionError> {
        if !descriptor.is_composed() {
            steps.push(PlanStep {
                call: ToolCall {
                    api_name: descriptor.name.clone(),
                    api_params: params.clone(),
                },
                inputs: Vec::new(),
            });
            return Ok(());
        }

        let mut ranges = Vec::with_capacity(descriptor.members.len());
        for member_name in &descriptor.members {
            let member = self
                .get(member_name)
                .ok_or_else(|| ExpansionError::UnknownSkill(member_name.clone()))?;
            let member_params: ValueMap = params
                .iter()
                .filter(|(k, _)| self.declares_param(member, k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            let start = steps.len();
            self.expand_into(member, &member_params, steps)?;
            ranges.push(start..steps.len());
        }

        for wire in &descriptor.wiring {
            let unwireable = |detail: String| {
                ExpansionError::UnwireableComposition(format!("{}: {detail}", descriptor.name))
            };
            if wire.from >= wire.to || wire.to >= descriptor.members.len() {
                return Err(unwireable(format!(
                    "wire {} -> {} is out of order",
                    wire.from, wire.to
                )));
            }
            let source = self
                .get(&descriptor.members[wire.from])
                .expect("member resolved above");
            if !source.output_sketch.is_empty() && !source.output_sketch.contains(&wire.output) {
                return Err(unwireable(format!(
                    "`{}` has no output `{}`",
                    source.name, wire.output
                )));
            }
            let from_step = ranges[wire.from].end - 1;
            let target_step = ranges[wire.to]
                .clone()
                .find(|&i| {
                    self.get(&steps[i].call.api_name)
                        .is_some_and(|d| d.param(&wire.param).is_some())
                })
                .ok_or_else(|| {
                    unwireable(format!(
                        "`{}` takes no param `{}`",
                        descriptor.members[wire.to], wire.param
                    ))
                })?;
            steps[target_step].inputs.push(WiredInput {
                param: wire.param.clone(),
                from_step,
                output: wire.output.clone(),
            });
        }
        Ok(())
    }

    fn declares_param(&self, descriptor: &SkillDescriptor, name: &str) -> bool {
        descriptor.param(name).is_some()
            || descriptor
                .members
                .iter()
                .filter_map(|m| self.get(m))
                .any(|m| self.declares_param(m, name))
    }
}

fn check_shape(d: &SkillDescriptor) -> Result<(), RegistryError> {
    let invalid = |detail: &str| RegistryError::InvalidDescriptor {
        skill: d.name.clone(),
        detail: detail.to_owned(),
    };
    if d.name.trim().is_empty() {
        return Err(invalid("empty name"));
    }
    if (d.category == SkillCategory::Composed) != d.is_composed() {
        return Err(invalid("composed category requires members and vice versa"));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = d.params.iter().find(|p| !seen.insert(p.name.as_str())) {
        return Err(invalid(&format!("duplicate param `{}`", dup.name)));
    }
    if !d.is_composed() && !d.wiring.is_empty() {
        return Err(invalid("wiring on a primitive skill"));
    }
    Ok(())
}

fn unit(v: &Value) -> bool {
    v.as_f64().is_some_and(|x| (0.0..=1.0).contains(&x))
}

fn coords(v: &Value, n: usize) -> bool {
    v.as_list()
        .is_some_and(|items| items.len() == n && items.iter().all(unit))
}

fn kind_accepts(kind: ParamKind, value: &Value) -> bool {
    match kind {
        ParamKind::Text => matches!(value, Value::Text(_)),
        ParamKind::Number => matches!(value, Value::Number(_)),
        ParamKind::Point => coords(value, 2),
        ParamKind::Box => {
            coords(value, 4)
                || value
                    .as_list()
                    .is_some_and(|boxes| !boxes.is_empty() && boxes.iter().all(|b| coords(b, 4)))
        }
        ParamKind::ImageRef => value.as_str().is_some_and(|s| !s.trim().is_empty()),
    }
}

/// Adapts a wired output value to the kind of the param it feeds.
///
/// Lists of texts become a ` . `-joined caption; a list feeding a single
/// image-ref keeps its first element.
pub fn coerce_for_kind(kind: ParamKind, value: &Value) -> Value {
    match (kind, value) {
        (ParamKind::Text, Value::List(items)) if items.iter().all(|i| i.as_str().is_some()) => {
            let parts: Vec<&str> = items.iter().filter_map(Value::as_str).collect();
            Value::text(parts.join(" . "))
        }
        (ParamKind::ImageRef, Value::List(items)) => items.first().cloned().unwrap_or(Value::Null),
        _ => value.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn primitive(name: &str, params: Vec<ParamSpec>, outputs: &[&str]) -> SkillDescriptor {
        SkillDescriptor {
            name: name.into(),
            category: SkillCategory::Understanding,
            group: String::new(),
            task: String::new(),
            source: String::new(),
            params,
            members: vec![],
            wiring: vec![],
            output_sketch: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn composed(name: &str, members: &[&str], wiring: Vec<Wire>) -> SkillDescriptor {
        SkillDescriptor {
            name: name.into(),
            category: SkillCategory::Composed,
            group: String::new(),
            task: String::new(),
            source: String::new(),
            params: vec![],
            members: members.iter().map(|s| s.to_string()).collect(),
            wiring,
            output_sketch: vec![],
        }
    }

    #[test]
    fn duplicate_and_unresolved() {
        let mut repo = SkillRepository::new();
        repo.register(primitive("sam", vec![], &["masks"])).unwrap();
        assert_eq!(
            repo.register(primitive("sam", vec![], &[])),
            Err(RegistryError::DuplicateName("sam".into()))
        );
        assert!(matches!(
            repo.register(composed("x+y", &["x", "sam"], vec![])),
            Err(RegistryError::UnresolvedMember { .. })
        ));
    }

    #[test]
    fn cycle_detected_in_bulk_load() {
        let a = composed("a", &["b"], vec![]);
        let b = composed("b", &["a"], vec![]);
        assert!(matches!(
            SkillRepository::from_descriptors(vec![a, b]),
            Err(RegistryError::CompositionCycle(_))
        ));
        let selfref = composed("s", &["s"], vec![]);
        assert!(matches!(
            SkillRepository::from_descriptors(vec![selfref]),
            Err(RegistryError::CompositionCycle(_))
        ));
    }

    #[test]
    fn composed_category_requires_members() {
        let mut d = primitive("odd", vec![], &[]);
        d.category = SkillCategory::Composed;
        assert!(matches!(
            SkillRepository::new().register(d),
            Err(RegistryError::InvalidDescriptor { .. })
        ));
    }

    #[test]
    fn wiring_to_undeclared_param_is_unwireable() {
        let mut repo = SkillRepository::new();
        repo.register(primitive("det", vec![], &["boxes"])).unwrap();
        repo.register(primitive("seg", vec![], &["masks"])).unwrap();
        repo.register(composed(
            "det+seg",
            &["det", "seg"],
            vec![Wire {
                from: 0,
                output: "boxes".into(),
                to: 1,
                param: "boxes".into(),
            }],
        ))
        .unwrap();
        assert!(matches!(
            repo.expansion_plan(&ToolCall::new("det+seg")),
            Err(ExpansionError::UnwireableComposition(_))
        ));
    }

    #[test]
    fn coercions() {
        let tags = Value::List(vec![Value::text("dog"), Value::text("cat")]);
        assert_eq!(
            coerce_for_kind(ParamKind::Text, &tags),
            Value::text("dog . cat")
        );
        let masks = Value::List(vec![Value::text("mask://1"), Value::text("mask://2")]);
        assert_eq!(
            coerce_for_kind(ParamKind::ImageRef, &masks),
            Value::text("mask://1")
        );
    }
}
