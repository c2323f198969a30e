//! Corpus assembly across generators and the per-skill statistics table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backends::KnowledgeChecker;
use super::context::ImageContext;
use super::generators::{
    default_arg_templates, CurationRecord, DataGenerator, KnowledgeInput, KnowledgeOutcome,
    Scenario, COCO_CATEGORIES, IMAGE_ONLY_SKILLS,
};
use super::DatagenError;
use crate::format::{Value, ValueMap};
use crate::serving::mock_primitive_output;
use crate::skills::{SkillCategory, SkillRepository};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    ImageOnly,
    ArgSkill,
    VisualPrompt,
    Llava,
    Composed,
    Negative,
    Knowledge,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 7] = [
        GeneratorKind::ImageOnly,
        GeneratorKind::ArgSkill,
        GeneratorKind::VisualPrompt,
        GeneratorKind::Llava,
        GeneratorKind::Composed,
        GeneratorKind::Negative,
        GeneratorKind::Knowledge,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::ImageOnly => "image-only",
            GeneratorKind::ArgSkill => "arg-skill",
            GeneratorKind::VisualPrompt => "visual-prompt",
            GeneratorKind::Llava => "llava",
            GeneratorKind::Composed => "composed",
            GeneratorKind::Negative => "negative",
            GeneratorKind::Knowledge => "knowledge",
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GeneratorKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown generator `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub kinds: Vec<GeneratorKind>,
    pub samples: usize,
    pub seed: u64,
    /// Restricts the image-only generator to these skills.
    #[serde(default)]
    pub skills: Option<Vec<String>>,
}

impl CorpusSpec {
    pub fn new(samples: usize, seed: u64) -> Self {
        CorpusSpec {
            kinds: GeneratorKind::ALL.to_vec(),
            samples,
            seed,
            skills: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub index: usize,
    pub generator: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusOutput {
    pub records: Vec<CurationRecord>,
    pub skipped: Vec<SkippedSample>,
    pub knowledge_accepted: usize,
    pub knowledge_rejected: usize,
}

impl CorpusOutput {
    pub fn knowledge_acceptance_rate(&self) -> Option<f64> {
        let total = self.knowledge_accepted + self.knowledge_rejected;
        (total > 0).then(|| self.knowledge_accepted as f64 / total as f64)
    }
}

enum SampleOutcome {
    Record(Box<CurationRecord>),
    Rejected(String),
}

fn sample_seed(base: u64, image_id: &str, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(image_id.as_bytes());
    h.update((index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn retrieval_input(ctx: &ImageContext, seed: u64) -> KnowledgeInput {
    let mut params = ValueMap::new();
    params.insert("k".into(), Value::int(5));
    let out = mock_primitive_output("clip_retrieval", &params, &[ctx.image_ref()], seed)
        .unwrap_or_default();
    let retrieved: Vec<String> = out
        .get("items")
        .and_then(Value::as_list)
        .map(|l| {
            l.iter()
                .filter_map(Value::as_str)
                .map(str::to_owned)
                .collect()
        })
        .unwrap_or_default();
    let answer = retrieved
        .get((seed % retrieved.len().max(1) as u64) as usize)
        .and_then(|item| item.split_once(": "))
        .map(|(_, entry)| entry.to_owned())
        .unwrap_or_default();
    KnowledgeInput {
        question: "What background knowledge is there about the main object in this image?".into(),
        answer,
        retrieved,
        image: Some(ctx.image_ref()),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    generator: &DataGenerator<'_>,
    kind: GeneratorKind,
    ctx: &ImageContext,
    knowledge: &[KnowledgeInput],
    checker: &dyn KnowledgeChecker,
    image_only: &[&str],
    index: usize,
    seed: u64,
) -> Result<SampleOutcome, DatagenError> {
    let pick = |n: usize| (seed % n as u64) as usize;
    let record = match kind {
        GeneratorKind::ImageOnly => {
            if image_only.is_empty() {
                return Err(DatagenError::MissingContext("image-only skills"));
            }
            generator.gen_image_only_sample(ctx, image_only[pick(image_only.len())], seed)?
        }
        GeneratorKind::ArgSkill => {
            let templates = default_arg_templates();
            generator.gen_arg_skill_sample(ctx, &templates[pick(templates.len())], seed)?
        }
        GeneratorKind::VisualPrompt => generator.gen_visual_prompt_sample(ctx, seed)?,
        GeneratorKind::Llava => {
            if ctx.captions.is_empty() {
                return Err(DatagenError::MissingContext("captions"));
            }
            let question = [
                "What is happening in this image?",
                "Describe the scene in detail.",
            ][pick(2)];
            generator.augment_llava_record(
                question,
                &ctx.captions[pick(ctx.captions.len())],
                Some(ctx.image_ref()),
            )?
        }
        GeneratorKind::Composed => {
            generator.gen_composed_sample(ctx, Scenario::ALL[pick(Scenario::ALL.len())], seed)?
        }
        GeneratorKind::Negative => {
            let negatives: Vec<String> = COCO_CATEGORIES
                .iter()
                .filter(|c| !ctx.has_category(c))
                .map(|c| c.to_string())
                .collect();
            generator.gen_negative_prompt_sample(ctx, &negatives, seed)?
        }
        GeneratorKind::Knowledge => {
            let input = if knowledge.is_empty() {
                retrieval_input(ctx, seed)
            } else {
                knowledge[index % knowledge.len()].clone()
            };
            match generator.gen_knowledge_sample(&input, checker, seed)? {
                KnowledgeOutcome::Accepted(r) => *r,
                KnowledgeOutcome::Rejected { question } => {
                    return Ok(SampleOutcome::Rejected(question))
                }
            }
        }
    };
    Ok(SampleOutcome::Record(Box::new(record)))
}

/// Generates `spec.samples` records. Sample `i` uses context `i mod n` and
/// generator kind `i mod k`, with a seed derived from the base seed, the
/// image id and `i`; the output order is the index order regardless of
/// thread scheduling. Failing samples are recorded, not fatal.
pub fn generate_corpus(
    generator: &DataGenerator<'_>,
    contexts: &[ImageContext],
    knowledge: &[KnowledgeInput],
    checker: &dyn KnowledgeChecker,
    spec: &CorpusSpec,
) -> Result<CorpusOutput, DatagenError> {
    if contexts.is_empty() {
        return Err(DatagenError::MissingContext("image contexts"));
    }
    if spec.kinds.is_empty() {
        return Err(DatagenError::MissingContext("generator kinds"));
    }
    let image_only: Vec<&str> = match &spec.skills {
        Some(list) => IMAGE_ONLY_SKILLS
            .iter()
            .copied()
            .filter(|s| list.iter().any(|l| l == s))
            .collect(),
        None => IMAGE_ONLY_SKILLS.to_vec(),
    };
    let outcomes: Vec<(usize, GeneratorKind, Result<SampleOutcome, DatagenError>)> = (0..spec
        .samples)
        .into_par_iter()
        .map(|i| {
            let ctx = &contexts[i % contexts.len()];
            let kind = spec.kinds[i % spec.kinds.len()];
            let seed = sample_seed(spec.seed, &ctx.image_id, i);
            (
                i,
                kind,
                run_one(
                    generator,
                    kind,
                    ctx,
                    knowledge,
                    checker,
                    &image_only,
                    i,
                    seed,
                ),
            )
        })
        .collect();
    let mut out = CorpusOutput::default();
    for (index, kind, outcome) in outcomes {
        match outcome {
            Ok(SampleOutcome::Record(r)) => {
                if kind == GeneratorKind::Knowledge {
                    out.knowledge_accepted += 1;
                }
                out.records.push(*r);
            }
            Ok(SampleOutcome::Rejected(question)) => {
                out.knowledge_rejected += 1;
                out.skipped.push(SkippedSample {
                    index,
                    generator: kind.name().into(),
                    reason: format!("answer not derivable from retrieval: {question}"),
                });
            }
            Err(e) => out.skipped.push(SkippedSample {
                index,
                generator: kind.name().into(),
                reason: e.to_string(),
            }),
        }
    }
    if let Some(rate) = out.knowledge_acceptance_rate() {
        log::info!(
            "knowledge samples: {} accepted, {} rejected ({:.1}% acceptance)",
            out.knowledge_accepted,
            out.knowledge_rejected,
            rate * 100.0
        );
    }
    Ok(out)
}

pub fn to_jsonl(records: &[CurationRecord]) -> String {
    records.iter().map(|r| r.to_jsonl() + "\n").collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub group: String,
    pub skill: String,
    pub tools: String,
    pub source: String,
    pub size: u64,
}

fn category_rank(c: SkillCategory) -> u8 {
    match c {
        SkillCategory::Understanding => 0,
        SkillCategory::ExternalKnowledge => 1,
        SkillCategory::Generation => 2,
        SkillCategory::VisualPrompt => 3,
        SkillCategory::Composed => 4,
    }
}

/// Sums `stats_keys` per skill. Keys missing from the repository are
/// reported under the group "Unknown".
pub fn dataset_stats(records: &[CurationRecord], repo: &SkillRepository) -> Vec<StatsRow> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        for (key, n) in &r.stats_keys {
            *counts.entry(key.as_str()).or_default() += u64::from(*n);
        }
    }
    let mut rows: Vec<(u8, StatsRow)> = counts
        .into_iter()
        .map(|(key, size)| match repo.get(key) {
            Some(d) => (
                category_rank(d.category),
                StatsRow {
                    group: d.group.clone(),
                    skill: d.task.clone(),
                    tools: d.name.clone(),
                    source: d.source.clone(),
                    size,
                },
            ),
            None => (
                u8::MAX,
                StatsRow {
                    group: "Unknown".into(),
                    skill: String::new(),
                    tools: key.to_owned(),
                    source: String::new(),
                    size,
                },
            ),
        })
        .collect();
    rows.sort_by(|a, b| (a.0, &a.1.tools).cmp(&(b.0, &b.1.tools)));
    rows.into_iter().map(|(_, r)| r).collect()
}

pub fn format_stats_table(rows: &[StatsRow]) -> String {
    let header = ["Group", "Skills", "Tools", "Source", "Size"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.group.clone(),
                r.skill.clone(),
                r.tools.clone(),
                r.source.clone(),
                r.size.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        let padded: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join(" | ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("-|-"));
    for row in &cells {
        line(
            &mut out,
            &row.iter().map(String::as_str).collect::<Vec<_>>(),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{RotationRewriter, SubstringChecker, TemplateSynthesizer};
    use crate::skills::builtin_repository;

    fn contexts() -> Vec<ImageContext> {
        vec![
            ImageContext::new("1")
                .with_caption("A dog running on a beach.")
                .with_object("dog", [0.1, 0.1, 0.5, 0.7]),
            ImageContext::new("2").with_object("car", [0.0, 0.2, 0.9, 0.8]),
            ImageContext::new("3").with_caption("An empty room."),
        ]
    }

    #[test]
    fn corpus_is_deterministic_and_ordered() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &RotationRewriter, &TemplateSynthesizer);
        let spec = CorpusSpec::new(70, 9);
        let a = generate_corpus(&g, &contexts(), &[], &SubstringChecker, &spec).unwrap();
        let b = generate_corpus(&g, &contexts(), &[], &SubstringChecker, &spec).unwrap();
        assert_eq!(to_jsonl(&a.records), to_jsonl(&b.records));
        assert_eq!(a.records.len() + a.skipped.len(), 70);
        assert!(a.skipped.iter().all(|s| !s.reason.is_empty()));
        assert!(a.knowledge_accepted > 0);
        let rows = dataset_stats(&a.records, &repo);
        let total: u64 = rows.iter().map(|r| r.size).sum();
        let keys: usize = a.records.iter().map(|r| r.stats_keys.len()).sum();
        assert_eq!(total as usize, keys);
        assert!(rows.iter().all(|r| r.group != "Unknown"));
        let table = format_stats_table(&rows);
        assert!(table.starts_with("Group"));
        assert_eq!(table.lines().count(), rows.len() + 2);
    }

    #[test]
    fn skill_filter_and_errors() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &RotationRewriter, &TemplateSynthesizer);
        let spec = CorpusSpec {
            kinds: vec![GeneratorKind::ImageOnly],
            samples: 12,
            seed: 1,
            skills: Some(vec!["ram".into()]),
        };
        let out = generate_corpus(&g, &contexts(), &[], &SubstringChecker, &spec).unwrap();
        assert!(out
            .records
            .iter()
            .all(|r| r.provenance.skills == vec!["ram".to_string()]));
        assert_eq!(
            generate_corpus(&g, &[], &[], &SubstringChecker, &spec),
            Err(DatagenError::MissingContext("image contexts"))
        );
        assert_eq!(
            "composed".parse::<GeneratorKind>(),
            Ok(GeneratorKind::Composed)
        );
    }

    #[test]
    fn stats_unknown_key() {
        let repo = builtin_repository();
        let g = DataGenerator::new(&repo, &RotationRewriter, &TemplateSynthesizer);
        let mut r = g.augment_llava_record("q", "a", None).unwrap();
        r.stats_keys = vec![("mystery".into(), 3)];
        let rows = dataset_stats(&[r], &repo);
        assert_eq!(rows[0].group, "Unknown");
        assert_eq!(rows[0].size, 3);
    }
}
