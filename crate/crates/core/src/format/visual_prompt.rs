//! User-drawn points and boxes, serialized into the question text.
//!
//! A click at (0.45, 0.89) on "Perform segmentation based on the point."
//! becomes `Perform segmentation based on the point. input point: [0.45, 0.89]`.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::value::{NumberLit, Value};

/// Decimals used for every rendered coordinate.
pub const COORD_DECIMALS: usize = 2;

/// On the wire: `{"kind": "point", "coords": [x, y]}` or
/// `{"kind": "box", "coords": [x1, y1, x2, y2]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PromptWire", into = "PromptWire")]
pub enum VisualPrompt {
    Point([f64; 2]),
    Box([f64; 4]),
}

#[derive(Serialize, Deserialize)]
struct PromptWire {
    kind: String,
    coords: Vec<f64>,
}

impl From<VisualPrompt> for PromptWire {
    fn from(p: VisualPrompt) -> Self {
        PromptWire {
            kind: p.label().to_owned(),
            coords: p.coords().to_vec(),
        }
    }
}

impl TryFrom<PromptWire> for VisualPrompt {
    type Error = String;

    fn try_from(w: PromptWire) -> Result<Self, Self::Error> {
        match (w.kind.as_str(), w.coords.as_slice()) {
            ("point", &[x, y]) => Ok(VisualPrompt::Point([x, y])),
            ("box", &[a, b, c, d]) => Ok(VisualPrompt::Box([a, b, c, d])),
            ("point" | "box", c) => Err(format!(
                "{} needs {} coords, got {}",
                w.kind,
                if w.kind == "point" { 2 } else { 4 },
                c.len()
            )),
            (other, _) => Err(format!("unknown visual prompt kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VisualPromptError {
    #[error("coordinate {0} is outside [0, 1]")]
    OutOfBounds(usize),
}

impl VisualPrompt {
    pub fn point(x: f64, y: f64) -> Result<Self, VisualPromptError> {
        let p = VisualPrompt::Point([x, y]);
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), VisualPromptError> {
        match self.coords().iter().position(|c| !(0.0..=1.0).contains(c)) {
            Some(i) => Err(VisualPromptError::OutOfBounds(i)),
            None => Ok(()),
        }
    }

    pub fn coords(&self) -> &[f64] {
        match self {
            VisualPrompt::Point(c) => c,
            VisualPrompt::Box(c) => c,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            VisualPrompt::Point(_) => "point",
            VisualPrompt::Box(_) => "box",
        }
    }

    /// `[0.45, 0.89]`
    pub fn render_coords(&self) -> String {
        let parts: Vec<String> = self
            .coords()
            .iter()
            .map(|c| NumberLit::fixed(*c, COORD_DECIMALS).to_string())
            .collect();
        format!("[{}]", parts.join(", "))
    }

    /// The coordinates as a parameter value, with the same rounding as the text.
    pub fn to_param(&self) -> Value {
        Value::numbers(self.coords(), COORD_DECIMALS)
    }

    /// Appends ` input point: [x, y]` (or `input box: [...]`) to `question`.
    pub fn append_to(&self, question: &str) -> String {
        let question = question.trim_end();
        let suffix = format!("input {}: {}", self.label(), self.render_coords());
        if question.is_empty() {
            suffix
        } else {
            format!("{question} {suffix}")
        }
    }
}

static PROMPT_SUFFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"input (point|box): \[([0-9.,\s-]+)\]").expect("visual prompt pattern")
});

/// Recovers the last visual prompt embedded in a question, if any.
pub fn extract_visual_prompt(text: &str) -> Option<VisualPrompt> {
    let caps = PROMPT_SUFFIX.captures_iter(text).last()?;
    let nums: Vec<f64> = caps[2]
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .ok()?;
    match (&caps[1], nums.as_slice()) {
        ("point", [x, y]) => Some(VisualPrompt::Point([*x, *y])),
        ("box", [a, b, c, d]) => Some(VisualPrompt::Box([*a, *b, *c, *d])),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_form() {
        let p: VisualPrompt =
            serde_json::from_str(r#"{"kind": "point", "coords": [0.45, 0.89]}"#).unwrap();
        assert_eq!(p, VisualPrompt::Point([0.45, 0.89]));
        assert_eq!(
            serde_json::to_string(&VisualPrompt::Box([0.1, 0.2, 0.3, 0.4])).unwrap(),
            r#"{"kind":"box","coords":[0.1,0.2,0.3,0.4]}"#
        );
        assert!(serde_json::from_str::<VisualPrompt>(r#"{"kind": "box", "coords": [1]}"#).is_err());
        assert!(serde_json::from_str::<VisualPrompt>(r#"{"kind": "blob", "coords": []}"#).is_err());
    }

    #[test]
    fn point_suffix() {
        let p = VisualPrompt::point(0.45, 0.89).unwrap();
        assert_eq!(
            p.append_to("Perform segmentation based on the point."),
            "Perform segmentation based on the point. input point: [0.45, 0.89]"
        );
        assert_eq!(
            VisualPrompt::point(0.0, 0.0).unwrap().render_coords(),
            "[0.00, 0.00]"
        );
    }

    #[test]
    fn out_of_bounds_rejected() {
        assert_eq!(
            VisualPrompt::point(1.45, 0.89),
            Err(VisualPromptError::OutOfBounds(0))
        );
    }

    #[test]
    fn box_round_trip() {
        let b = VisualPrompt::Box([0.1, 0.2, 0.3, 0.4]);
        let text = b.append_to("segment this");
        assert_eq!(extract_visual_prompt(&text), Some(b));
    }
}
