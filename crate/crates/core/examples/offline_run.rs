//! A 60-bar song arranged offline twice; the MIDI output is identical across runs.

use std::sync::Arc;

use emoarrange::model::TimeSignature;
use emoarrange::stream::{run_offline, Models, SessionConfig};
use emoarrange::synth::random_song;
use emoarrange::{EmotionVA, Tonality};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emoarrange::Result<()> {
    let song = random_song(&mut ChaCha8Rng::seed_from_u64(60), Tonality::minor(9), TimeSignature::FourFour, 15, 110.0);
    let trajectory: Vec<EmotionVA> = (0..song.segment_count())
        .map(|i| {
            let t = i as f64 / 14.0 * std::f64::consts::TAU;
            EmotionVA::new(0.8 * t.cos(), 0.8 * t.sin())
        })
        .collect();
    let models = Arc::new(Models::untrained()?);
    let a = run_offline(&song, &trajectory, SessionConfig::default(), models.clone())?;
    let b = run_offline(&song, &trajectory, SessionConfig::default(), models)?;
    for s in &a.steps {
        let f = s.fused.mean().unwrap();
        println!("bar {:>2}: fused ({:+.2}, {:+.2}), {:.1} ms", s.bar_index, f.valence(), f.arousal(), s.latency_ms);
    }
    print!("{}", a.report.to_table());
    println!("{} MIDI bytes, identical across runs: {}", a.midi.len(), a.midi == b.midi);
    let path = std::env::temp_dir().join("offline_run.mid");
    std::fs::write(&path, &a.midi)?;
    println!("wrote {}", path.display());
    Ok(())
}
