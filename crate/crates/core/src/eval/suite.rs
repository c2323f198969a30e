use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::judge::Judge;
use super::report::{AllMode, CategoryReport, SampleFailure, SampleScore};
use super::EvalError;
use crate::serving::protocol::image_ref_from_wire;
use crate::serving::{Planner, ToolBackend};
use crate::session::{Agent, Session, SessionMode};
use crate::skills::SkillRepository;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteItem {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub image: Option<String>,
    pub gold: String,
}

/// Category name to items, in file order.
pub type SuiteSpec = IndexMap<String, Vec<SuiteItem>>;

/// Produces the answer a configured session gives to one suite item.
pub trait SessionFactory: Send + Sync {
    fn answer(&self, item: &SuiteItem) -> Result<String, String>;
}

/// Runs each item in a fresh session through an [`Agent`] and returns the
/// last text the user would see.
pub struct AgentSessionFactory<'a> {
    pub repo: &'a SkillRepository,
    pub planner: &'a dyn Planner,
    pub backend: &'a dyn ToolBackend,
    pub mode: SessionMode,
}

impl SessionFactory for AgentSessionFactory<'_> {
    fn answer(&self, item: &SuiteItem) -> Result<String, String> {
        let agent = Agent::new(self.repo, self.planner, self.backend);
        let mut session = Session::new(item.id.clone(), self.mode.clone());
        let images = item
            .image
            .iter()
            .map(|img| image_ref_from_wire(img, format!("{}-image", item.id)))
            .collect();
        agent
            .handle_message(&mut session, &item.prompt, images, &mut |_| {})
            .map_err(|e| e.to_string())?;
        session
            .user_view(false)
            .texts()
            .last()
            .map(|t| t.to_string())
            .ok_or_else(|| "session produced no answer".to_owned())
    }
}

/// Answers and judges every item. Failures are kept in the report rather
/// than aborting the run; categories are ordered by `layout`, then by
/// their order in the suite.
pub fn run_capability_suite(
    factory: &dyn SessionFactory,
    suite: &SuiteSpec,
    judge: &dyn Judge,
    layout: &[&str],
    mode: AllMode,
) -> Result<CategoryReport, EvalError> {
    let items: Vec<(&str, &SuiteItem)> = suite
        .iter()
        .flat_map(|(cat, items)| items.iter().map(move |i| (cat.as_str(), i)))
        .collect();
    if items.is_empty() {
        return Err(EvalError::Input("suite has no items".into()));
    }
    let outcomes: Vec<Result<SampleScore, SampleFailure>> = items
        .par_iter()
        .map(|(cat, item)| {
            let fail = |reason: String| SampleFailure {
                id: item.id.clone(),
                category: cat.to_string(),
                reason,
            };
            let answer = factory
                .answer(item)
                .map_err(|e| fail(format!("session: {e}")))?;
            let verdict = judge
                .judge(&item.prompt, &answer, &item.gold)
                .map_err(|e| fail(format!("judge: {e}")))?;
            Ok(SampleScore {
                id: item.id.clone(),
                category: cat.to_string(),
                score: verdict.relative(),
            })
        })
        .collect();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) => samples.push(s),
            Err(f) => failures.push(f),
        }
    }
    if !failures.is_empty() {
        log::warn!("{} of {} suite items failed", failures.len(), items.len());
    }
    Ok(CategoryReport::from_scores(samples, failures, layout, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{StubJudge, TOOLS_LAYOUT};
    use crate::serving::{MockToolBackend, ScriptedPlanner};
    use crate::skills::builtin_repository;

    struct Echo;

    impl SessionFactory for Echo {
        fn answer(&self, item: &SuiteItem) -> Result<String, String> {
            if item.prompt == "fail" {
                Err("boom".into())
            } else {
                Ok(item.prompt.clone())
            }
        }
    }

    fn item(id: &str, prompt: &str, gold: &str) -> SuiteItem {
        SuiteItem {
            id: id.into(),
            prompt: prompt.into(),
            image: None,
            gold: gold.into(),
        }
    }

    #[test]
    fn partial_coverage() {
        let mut suite = SuiteSpec::new();
        suite.insert(
            "ocr".into(),
            vec![item("1", "STOP", "STOP"), item("2", "fail", "x")],
        );
        let r = run_capability_suite(
            &Echo,
            &suite,
            &StubJudge::default(),
            TOOLS_LAYOUT,
            AllMode::SampleWeighted,
        )
        .unwrap();
        assert_eq!(r.samples.len(), 1);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.coverage(), 0.5);
        assert_eq!(r.all, 100.0);
    }

    #[test]
    fn agent_factory_answers() {
        let repo = builtin_repository();
        let planner = ScriptedPlanner::tool_use_defaults();
        let backend = MockToolBackend::new(1);
        let f = AgentSessionFactory {
            repo: &repo,
            planner: &planner,
            backend: &backend,
            mode: SessionMode::OnTheFly,
        };
        let mut it = item("c1", "Please caption this image.", "a photo");
        it.image = Some("file:///img.jpg".into());
        let answer = f.answer(&it).unwrap();
        assert!(answer.starts_with("According to blip2: "), "{answer}");
    }
}
