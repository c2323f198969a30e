//! The stock skill repository.

use super::registry::{
    ParamKind::{self, Box as BoxKind, ImageRef, Number, Point, Text},
    ParamSpec, SkillCategory, SkillDescriptor, SkillRepository, Wire,
};

/// Understanding tools run up front in all-tools mode (no segmentation).
pub const DEFAULT_ALL_TOOLS: &[&str] = &["blip2", "ram", "ram+grounding_dino", "easyocr"];

struct Def {
    name: &'static str,
    category: SkillCategory,
    group: &'static str,
    task: &'static str,
    source: &'static str,
    params: Vec<(&'static str, ParamKind, bool)>,
    members: Vec<&'static str>,
    wiring: Vec<(usize, &'static str, usize, &'static str)>,
    outputs: Vec<&'static str>,
}

impl Def {
    fn build(self) -> SkillDescriptor {
        SkillDescriptor {
            name: self.name.into(),
            category: self.category,
            group: self.group.into(),
            task: self.task.into(),
            source: self.source.into(),
            params: self
                .params
                .into_iter()
                .map(|(name, kind, required)| ParamSpec {
                    name: name.into(),
                    kind,
                    required,
                })
                .collect(),
            members: self.members.into_iter().map(String::from).collect(),
            wiring: self
                .wiring
                .into_iter()
                .map(|(from, output, to, param)| Wire {
                    from,
                    output: output.into(),
                    to,
                    param: param.into(),
                })
                .collect(),
            output_sketch: self.outputs.into_iter().map(String::from).collect(),
        }
    }
}

fn primitive(
    name: &'static str,
    category: SkillCategory,
    group: &'static str,
    task: &'static str,
    source: &'static str,
    params: Vec<(&'static str, ParamKind, bool)>,
    outputs: Vec<&'static str>,
) -> Def {
    let mut params = params;
    params.push(("image", ImageRef, false));
    Def {
        name,
        category,
        group,
        task,
        source,
        params,
        members: vec![],
        wiring: vec![],
        outputs,
    }
}

#[allow(clippy::too_many_arguments)]
fn composed(
    name: &'static str,
    group: &'static str,
    task: &'static str,
    source: &'static str,
    params: Vec<(&'static str, ParamKind, bool)>,
    members: Vec<&'static str>,
    wiring: Vec<(usize, &'static str, usize, &'static str)>,
    outputs: Vec<&'static str>,
) -> Def {
    Def {
        name,
        category: SkillCategory::Composed,
        group,
        task,
        source,
        params,
        members,
        wiring,
        outputs,
    }
}

/// Every tool row of the skill table, plus the composed chains.
pub fn builtin_repository() -> SkillRepository {
    use SkillCategory::*;
    const DETECTION: [&str; 3] = ["boxes", "logits", "phrases"];
    let und = "Understanding";
    let defs = vec![
        primitive(
            "grounding_dino",
            Understanding,
            und,
            "Detection/Grounding",
            "COCO",
            vec![("caption", Text, true)],
            DETECTION.to_vec(),
        ),
        primitive(
            "openseed",
            Understanding,
            und,
            "Semantic Segmentation",
            "COCO",
            vec![],
            vec!["mask", "labels"],
        ),
        primitive(
            "blip2",
            Understanding,
            und,
            "Caption",
            "COCO",
            vec![],
            vec!["caption"],
        ),
        primitive(
            "ram",
            Understanding,
            und,
            "Tagging",
            "COCO",
            vec![],
            vec!["tags"],
        ),
        primitive(
            "easyocr",
            Understanding,
            und,
            "OCR",
            "HierText",
            vec![],
            vec!["texts", "boxes"],
        ),
        primitive(
            "clip_retrieval",
            ExternalKnowledge,
            "External Knowledge",
            "Retrieval",
            "InfoSeek",
            vec![("k", Number, false)],
            vec!["items", "scores"],
        ),
        primitive(
            "stable_diffusion",
            Generation,
            "Generation",
            "Image Generation",
            "JourneyDB",
            vec![("prompt", Text, true), ("mask", ImageRef, false)],
            vec!["image"],
        ),
        primitive(
            "instruct_pix2pix",
            Generation,
            "Generation",
            "Image Editing",
            "Instruct P2P",
            vec![("instruction", Text, true)],
            vec!["image"],
        ),
        primitive(
            "controlnet",
            Generation,
            "Generation",
            "Conditional Generation",
            "COCO",
            vec![("caption", Text, true), ("condition", ImageRef, false)],
            vec!["image"],
        ),
        primitive(
            "sam",
            VisualPrompt,
            "Visual Prompt",
            "Interactive Segmentation",
            "COCO",
            vec![("point", Point, false), ("boxes", BoxKind, false)],
            vec!["masks", "scores"],
        ),
        primitive(
            "semantic_sam",
            VisualPrompt,
            "Visual Prompt",
            "Multi-granularity",
            "COCO",
            vec![("point", Point, true)],
            vec!["masks", "scores", "levels"],
        ),
        primitive(
            "seem",
            VisualPrompt,
            "Visual Prompt",
            "Example Based Segmentation",
            "COCO",
            vec![("reference", ImageRef, true)],
            vec!["masks", "scores"],
        ),
        composed(
            "grounding_dino+sam",
            und,
            "Instance Segmentation",
            "COCO",
            vec![("caption", Text, true)],
            vec!["grounding_dino", "sam"],
            vec![(0, "boxes", 1, "boxes")],
            DETECTION.to_vec(),
        ),
        composed(
            "blip2+grounding_dino",
            und,
            "Caption + Grounding",
            "COCO",
            vec![],
            vec!["blip2", "grounding_dino"],
            vec![(0, "caption", 1, "caption")],
            vec!["caption", "boxes", "logits", "phrases"],
        ),
        composed(
            "ram+grounding_dino",
            und,
            "Tagging + Grounding",
            "COCO",
            vec![],
            vec!["ram", "grounding_dino"],
            vec![(0, "tags", 1, "caption")],
            vec!["tags", "boxes", "logits", "phrases"],
        ),
        composed(
            "grounding_dino+sam+ram+blip2",
            "Composed Skills",
            "Mix of Detection, Segmentation, Tagging, Caption",
            "COCO",
            vec![("caption", Text, true)],
            vec!["grounding_dino", "sam", "ram", "blip2"],
            vec![(0, "boxes", 1, "boxes")],
            vec!["boxes", "logits", "phrases", "masks", "tags", "caption"],
        ),
        composed(
            "sam+stable_diffusion",
            "Composed Skills",
            "Interactive Segmentation + Inpainting",
            "COCO",
            vec![("point", Point, true), ("prompt", Text, true)],
            vec!["sam", "stable_diffusion"],
            vec![(0, "masks", 1, "mask")],
            vec!["masks", "image"],
        ),
        composed(
            "openseed+controlnet",
            "Composed Skills",
            "Semantic Segmentation + Generation",
            "COCO",
            vec![("caption", Text, true)],
            vec!["openseed", "controlnet"],
            vec![(0, "mask", 1, "condition")],
            vec!["mask", "labels", "image"],
        ),
        composed(
            "stable_diffusion+blip2",
            "Composed Skills",
            "Image Generation + Social Media Post",
            "JourneyDB",
            vec![("prompt", Text, true)],
            vec!["stable_diffusion", "blip2"],
            vec![(0, "image", 1, "image")],
            vec!["image", "caption"],
        ),
        composed(
            "instruct_pix2pix+blip2",
            "Composed Skills",
            "Image Editing + Social Media Post",
            "Instruct P2P",
            vec![("instruction", Text, true)],
            vec!["instruct_pix2pix", "blip2"],
            vec![(0, "image", 1, "image")],
            vec!["image", "caption"],
        ),
    ];
    SkillRepository::from_descriptors(defs.into_iter().map(Def::build).collect())
        .expect("builtin repository is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{ToolCall, Value};
    use crate::skills::{CallViolation, SkillCategory};

    #[test]
    fn lookups() {
        let repo = builtin_repository();
        assert_eq!(repo.get("easyocr").unwrap().task, "OCR");
        assert!(repo.get("nonexistent").is_none());
        let composed = repo
            .iter()
            .filter(|d| d.category == SkillCategory::Composed)
            .count();
        assert!(composed >= 5, "{composed}");
        for name in DEFAULT_ALL_TOOLS {
            assert!(repo.contains(name));
        }
    }

    #[test]
    fn table_one_call_validates() {
        let repo = builtin_repository();
        let call =
            ToolCall::new("grounding_dino+sam").with_param("caption", "little girl and cart .");
        assert_eq!(repo.validate_call(&call), Ok(()));
    }

    #[test]
    fn point_calls() {
        let repo = builtin_repository();
        let ok = ToolCall::new("sam").with_param("point", Value::numbers(&[0.45, 0.89], 2));
        assert_eq!(repo.validate_call(&ok), Ok(()));
        let bad = ToolCall::new("sam").with_param("point", Value::numbers(&[1.45, 0.89], 2));
        assert_eq!(
            repo.validate_call(&bad),
            Err(vec![CallViolation::BadKind("point".into())])
        );
        let missing = ToolCall::new("grounding_dino");
        assert_eq!(
            repo.validate_call(&missing),
            Err(vec![CallViolation::MissingParam("caption".into())])
        );
        assert_eq!(
            repo.validate_call(&ToolCall::new("nope")),
            Err(vec![CallViolation::UnknownSkill("nope".into())])
        );
    }

    #[test]
    fn grounded_segmentation_plan() {
        let repo = builtin_repository();
        let call =
            ToolCall::new("grounding_dino+sam").with_param("caption", "little girl and cart .");
        let plan = repo.expansion_plan(&call).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(
            plan[0].call,
            ToolCall::new("grounding_dino").with_param("caption", "little girl and cart .")
        );
        assert!(plan[0].inputs.is_empty());
        assert_eq!(plan[1].call.api_name, "sam");
        assert!(plan[1].call.api_params.is_empty());
        assert_eq!(plan[1].inputs.len(), 1);
        assert_eq!(plan[1].inputs[0].param, "boxes");
        assert_eq!(plan[1].inputs[0].from_step, 0);
        assert_eq!(plan[1].inputs[0].output, "boxes");
    }

    #[test]
    fn layout_generation_plan() {
        let repo = builtin_repository();
        let call =
            ToolCall::new("openseed+controlnet").with_param("caption", "a bench under the sea");
        let plan = repo.expansion_plan(&call).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan[0].call.api_name, "openseed");
        assert!(plan[0].call.api_params.is_empty());
        assert_eq!(
            plan[1].call.api_params.get("caption"),
            Some(&Value::text("a bench under the sea"))
        );
        assert_eq!(plan[1].inputs[0].output, "mask");
        assert_eq!(plan[1].inputs[0].param, "condition");
    }

    #[test]
    fn primitive_plan_is_identity() {
        let repo = builtin_repository();
        let call = ToolCall::new("blip2");
        let plan = repo.expansion_plan(&call).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].call, call);
    }

    #[test]
    fn every_entry_expands() {
        let repo = builtin_repository();
        for d in repo.iter() {
            let plan = repo.expansion_plan(&ToolCall::new(d.name.clone())).unwrap();
            assert!(!plan.is_empty());
            assert!(plan
                .iter()
                .all(|s| !repo.get(&s.call.api_name).unwrap().is_composed()));
        }
    }

    #[test]
    fn config_round_trip() {
        let repo = builtin_repository();
        let back = SkillRepository::from_json(&repo.to_json()).unwrap();
        assert_eq!(back, repo);
    }
}
