//! Coherence, similarity and fit for the original demo song and a rule-based arrangement.

use emoarrange::metrics::{evaluate, mctd, pitch_consonance_score, MetricConfig};
use emoarrange::stream::{run_offline, Models, SessionConfig};
use emoarrange::synth::demo_song;
use emoarrange::EmotionVA;
use std::sync::Arc;

fn main() -> emoarrange::Result<()> {
    let song = demo_song();
    let original = song.segments()?;
    for (i, s) in original.iter().enumerate() {
        println!("segment {i}: PCS {:.3}, MCTD {:.3}", pitch_consonance_score(s).value, mctd(s).value);
    }
    let neutral = vec![EmotionVA::new(0.0, 0.0); original.len()];
    let cfg = MetricConfig::default();
    println!("original against itself\n{}", evaluate(&original, &original, &neutral, &neutral, &cfg)?.to_table());

    let trajectory: Vec<EmotionVA> = (0..original.len()).map(|i| EmotionVA::new(if i % 2 == 0 { 0.7 } else { -0.7 }, 0.5)).collect();
    let run = run_offline(&song, &trajectory, SessionConfig::default(), Arc::new(Models::untrained()?))?;
    println!("rule-based arrangement, alternating valence\n{}", run.report.to_table());
    Ok(())
}
