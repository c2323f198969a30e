//! Prediction format, turn grammar and training-sequence rendering.

pub mod prediction;
pub mod sequence;
pub mod value;
pub mod visual_prompt;

pub use prediction::{
    parse_unified_prediction, serialize_unified_prediction, PredictionParseError, ToolCall,
    UnifiedPrediction,
};
pub use sequence::{
    render_training_sequence, validate_prefix, validate_sequence_grammar, DialogueTurn, ImageRef,
    ImageSource, LossMask, MaskSpan, RenderError, Role, SequenceRecord, SerializationProfile,
    TrainingSequence, TurnRecord, Violation, ViolationKind,
};
pub use value::{parse_value, NumberLit, Value, ValueMap};
pub use visual_prompt::{extract_visual_prompt, VisualPrompt};
