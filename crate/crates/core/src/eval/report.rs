use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::judge::Judge;
use super::EvalError;

/// Category order of the conversation/detail/reasoning benchmark.
pub const LLAVA_BENCH_LAYOUT: &[&str] = &["conv", "detail", "reasoning"];
/// Category order of the tool-use benchmark.
pub const TOOLS_LAYOUT: &[&str] = &["grounding", "tagging", "caption", "ocr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub id: String,
    pub category: String,
    #[serde(default)]
    pub question: String,
    pub gold: String,
}

/// How the "All" column combines samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllMode {
    #[default]
    SampleWeighted,
    CategoryMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub category: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub id: String,
    pub category: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub categories: IndexMap<String, CategoryScore>,
    pub all: f64,
    pub all_mode: AllMode,
    pub samples: Vec<SampleScore>,
    #[serde(default)]
    pub failures: Vec<SampleFailure>,
}

fn label(category: &str) -> String {
    match category {
        "ocr" => "OCR".to_owned(),
        _ => {
            let mut chars = category.chars();
            match chars.next() {
                Some(c) => c.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
    }
}

impl CategoryReport {
    /// Categories follow `layout` first, then any others in first-seen
    /// order. Layout categories without samples are left out.
    pub fn from_scores(
        samples: Vec<SampleScore>,
        failures: Vec<SampleFailure>,
        layout: &[&str],
        mode: AllMode,
    ) -> Self {
        let mut order: Vec<String> = layout
            .iter()
            .filter(|c| samples.iter().any(|s| s.category == **c))
            .map(|c| c.to_string())
            .collect();
        for s in &samples {
            if !order.contains(&s.category) {
                order.push(s.category.clone());
            }
        }
        let mut categories = IndexMap::new();
        for cat in order {
            let scores: Vec<f64> = samples
                .iter()
                .filter(|s| s.category == cat)
                .map(|s| s.score)
                .collect();
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            categories.insert(
                cat,
                CategoryScore {
                    mean,
                    count: scores.len(),
                },
            );
        }
        let all = match mode {
            _ if samples.is_empty() => 0.0,
            AllMode::SampleWeighted => {
                samples.iter().map(|s| s.score).sum::<f64>() / samples.len() as f64
            }
            AllMode::CategoryMean => {
                categories.values().map(|c| c.mean).sum::<f64>() / categories.len() as f64
            }
        };
        CategoryReport {
            categories,
            all,
            all_mode: mode,
            samples,
            failures,
        }
    }

    /// Fraction of samples that produced a score.
    pub fn coverage(&self) -> f64 {
        let total = self.samples.len() + self.failures.len();
        if total == 0 {
            0.0
        } else {
            self.samples.len() as f64 / total as f64
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two aligned rows: category heads then one-decimal scores.
    pub fn to_table(&self) -> String {
        let mut heads: Vec<String> = self.categories.keys().map(|c| label(c)).collect();
        let mut values: Vec<String> = self
            .categories
            .values()
            .map(|c| format!("{:.1}", c.mean))
            .collect();
        heads.push("All".into());
        values.push(format!("{:.1}", self.all));
        let widths: Vec<usize> = heads
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        let row = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!("{}\n{}\n", row(&heads), row(&values))
    }
}

impl fmt::Display for CategoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Judges every answer against its gold answer (matched by id, in
/// parallel) and aggregates per category.
pub fn relative_score(
    answers: &[AnswerRecord],
    golds: &[GoldRecord],
    judge: &dyn Judge,
    layout: &[&str],
    mode: AllMode,
) -> Result<CategoryReport, EvalError> {
    let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
    for a in answers {
        if by_id.insert(&a.id, &a.answer).is_some() {
            return Err(EvalError::MisalignedSets(format!(
                "duplicate answer id `{}`",
                a.id
            )));
        }
    }
    let mut seen = BTreeSet::new();
    for g in golds {
        if !seen.insert(g.id.as_str()) {
            return Err(EvalError::MisalignedSets(format!(
                "duplicate gold id `{}`",
                g.id
            )));
        }
        if !by_id.contains_key(g.id.as_str()) {
            return Err(EvalError::MisalignedSets(format!(
                "no answer for `{}`",
                g.id
            )));
        }
    }
    if let Some(extra) = by_id.keys().find(|id| !seen.contains(*id)) {
        return Err(EvalError::MisalignedSets(format!("no gold for `{extra}`")));
    }
    let scored: Vec<Result<SampleScore, EvalError>> = golds
        .par_iter()
        .map(|g| {
            let verdict = judge
                .judge(&g.question, by_id[g.id.as_str()], &g.gold)
                .map_err(|detail| EvalError::JudgeFailure {
                    sample: g.id.clone(),
                    detail,
                })?;
            Ok(SampleScore {
                id: g.id.clone(),
                category: g.category.clone(),
                score: verdict.relative(),
            })
        })
        .collect();
    let samples = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(CategoryReport::from_scores(
        samples,
        Vec::new(),
        layout,
        mode,
    ))
}
