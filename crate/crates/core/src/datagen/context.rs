//! Image contexts and the COCO annotation loader.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::format::{ImageRef, ImageSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub category: String,
    /// Normalized `[x1, y1, x2, y2]`.
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageContext {
    pub image_id: String,
    #[serde(default)]
    pub uri: Option<String>,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default)]
    pub objects: Vec<ObjectAnnotation>,
}

impl ImageContext {
    pub fn new(image_id: impl Into<String>) -> Self {
        ImageContext {
            image_id: image_id.into(),
            uri: None,
            captions: Vec::new(),
            objects: Vec::new(),
        }
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.captions.push(caption.into());
        self
    }

    pub fn with_object(mut self, category: impl Into<String>, bbox: [f64; 4]) -> Self {
        self.objects.push(ObjectAnnotation {
            category: category.into(),
            bbox,
        });
        self
    }

    pub fn image_ref(&self) -> ImageRef {
        ImageRef {
            id: self.image_id.clone(),
            source: ImageSource::Uri(
                self.uri
                    .clone()
                    .unwrap_or_else(|| format!("coco://{}", self.image_id)),
            ),
        }
    }

    /// Distinct categories in first-seen order.
    pub fn categories(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for o in &self.objects {
            if !out.contains(&o.category) {
                out.push(o.category.clone());
            }
        }
        out
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.objects
            .iter()
            .any(|o| o.category.eq_ignore_ascii_case(category))
    }

    pub fn boxes_valid(&self) -> bool {
        self.objects.iter().all(|o| {
            o.bbox.iter().all(|v| (0.0..=1.0).contains(v))
                && o.bbox[0] <= o.bbox[2]
                && o.bbox[1] <= o.bbox[3]
        })
    }
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    #[serde(default)]
    file_name: Option<String>,
    #[serde(default)]
    coco_url: Option<String>,
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    #[serde(default)]
    caption: Option<String>,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    category_id: Option<u64>,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

fn round2(v: f64) -> f64 {
    ((v.clamp(0.0, 1.0)) * 100.0).round() / 100.0
}

/// Reads a COCO-style file. Caption and instance annotations may share one
/// `annotations` array; boxes are converted from pixel `[x, y, w, h]` to
/// normalized corners.
pub fn load_coco(text: &str) -> Result<Vec<ImageContext>, DatagenError> {
    let file: CocoFile =
        serde_json::from_str(text).map_err(|e| DatagenError::Source(e.to_string()))?;
    let names: BTreeMap<u64, String> = file
        .categories
        .into_iter()
        .map(|c| (c.id, c.name))
        .collect();
    let mut order = Vec::new();
    let mut by_id: BTreeMap<u64, (ImageContext, f64, f64)> = BTreeMap::new();
    for img in file.images {
        let mut ctx = ImageContext::new(img.id.to_string());
        ctx.uri = img.coco_url.or(img.file_name);
        order.push(img.id);
        by_id.insert(img.id, (ctx, img.width.max(1.0), img.height.max(1.0)));
    }
    for ann in file.annotations {
        let Some((ctx, w, h)) = by_id.get_mut(&ann.image_id) else {
            continue;
        };
        if let Some(caption) = ann.caption {
            ctx.captions.push(caption.trim().to_owned());
        }
        if let (Some([x, y, bw, bh]), Some(cat)) = (ann.bbox, ann.category_id) {
            let category = names
                .get(&cat)
                .cloned()
                .ok_or_else(|| DatagenError::Source(format!("unknown category id {cat}")))?;
            let bbox = [
                round2(x / *w),
                round2(y / *h),
                round2((x + bw) / *w),
                round2((y + bh) / *h),
            ];
            ctx.objects.push(ObjectAnnotation { category, bbox });
        }
    }
    Ok(order
        .into_iter()
        .filter_map(|id| by_id.remove(&id).map(|(c, _, _)| c))
        .collect())
}

pub fn load_coco_file(path: &Path) -> Result<Vec<ImageContext>, DatagenError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatagenError::Source(format!("{}: {e}", path.display())))?;
    load_coco(&text)
}
