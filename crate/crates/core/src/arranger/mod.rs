//! Segment generation from a conditioned melody skeleton.

pub mod neural;
pub mod rule;
pub mod texture;

pub use neural::{train_generator_toy, GenExample, GenReport, GenTrainConfig, NeuralToy, NeuralToyConfig};
pub use rule::{generate_rule, RuleConfig};
pub use texture::{assemble_tracks, pattern_for, render_texture, Texture, TexturePattern};

use crate::error::Result;
use crate::fusion::ConditionedInput;
use crate::model::{Segment, TimeSignature, Tonality};

#[derive(Debug)]
pub enum GeneratorBackend {
    RuleBased(RuleConfig),
    NeuralToy(Box<NeuralToy>),
}

impl Default for GeneratorBackend {
    fn default() -> Self {
        GeneratorBackend::RuleBased(RuleConfig::default())
    }
}

impl GeneratorBackend {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorBackend::RuleBased(_) => "rule-based",
            GeneratorBackend::NeuralToy(_) => "neural-toy",
        }
    }
}

/// Produces a full segment whose melody keeps every anchor of `cond`.
pub fn generate(backend: &GeneratorBackend, cond: &ConditionedInput, tonality: Tonality, ts: TimeSignature) -> Result<Segment> {
    match backend {
        GeneratorBackend::RuleBased(cfg) => generate_rule(&cond.anchors(), cond.emotion_va(), tonality, ts, cfg),
        GeneratorBackend::NeuralToy(model) => model.generate(cond, tonality, ts),
    }
}
