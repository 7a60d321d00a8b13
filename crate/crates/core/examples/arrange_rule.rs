//! Rule-based arrangement of one segment under four emotions, keeping the beat anchors.

use emoarrange::arranger::{generate, render_texture, GeneratorBackend};
use emoarrange::fusion::make_conditioned_input;
use emoarrange::metrics::similarity;
use emoarrange::model::downsample;
use emoarrange::synth::demo_song;
use emoarrange::{EmotionVA, Granularity};

fn main() -> emoarrange::Result<()> {
    let song = demo_song();
    let original = song.segment_at(4)?;
    let ts = original.time_signature;
    let anchors = downsample(&original.melody, Granularity::Beat, ts);
    let backend = GeneratorBackend::default();
    for (name, e) in [("happy", (0.8, 0.7)), ("tense", (-0.7, 0.8)), ("sad", (-0.7, -0.6)), ("calm", (0.6, -0.7))] {
        let cond = make_conditioned_input(&anchors, &[[e.0, e.1]])?;
        let seg = generate(&backend, &cond, original.tonality, ts)?;
        let texture = render_texture(&seg, EmotionVA::new(e.0, e.1));
        let chords: Vec<String> = seg.harmony.chords.iter().step_by(ts.beats_per_bar()).map(|c| format!("{:?}", c.notes())).collect();
        println!(
            "{name:>5}: {} melody notes, chords {}, similarity {:.2}, {} accompaniment notes",
            seg.melody.notes().len(),
            chords.join(" "),
            similarity(std::slice::from_ref(&original), std::slice::from_ref(&seg))?,
            texture.accompaniment.len()
        );
    }
    Ok(())
}
