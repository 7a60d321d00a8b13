//! Emotion-driven real-time arrangement of symbolic music.
//!
//! Every four bars the engine recognizes the valence-arousal emotion of the
//! segment it just emitted, fuses it with the listener's current target
//! emotion, and regenerates melody detail and harmony from a beat-level
//! skeleton of the original melody.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`model`]: grids, chords, tonality and emotion value types
//! - [`pipeline`]: MIDI ingestion, quantization, screening, label harmonization, dataset IO
//! - [`features`]: harmonic color, rhythm pattern, contour factor, form factor
//! - [`recognizer`]: the two-branch MLP emotion recognizer and its training loops
//! - [`fusion`]: median / emotion-concat / features-concat fusion and conditioning
//! - [`arranger`]: rule-based and neural generator backends, texture rendering
//! - [`metrics`]: coherence, similarity and real-time fit metrics
//! - [`stream`]: the per-segment session loop, offline driver and websocket service
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod arranger;
pub mod error;
pub mod features;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod recognizer;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    Chord, EmotionSeq, EmotionVA, Granularity, HarmonySeq, MelodyGrid, Mode, Note, PitchToken, Segment, TimeSignature,
    Tonality,
};
