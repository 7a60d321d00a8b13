//! Trains the toy transformer generator on a few pieces and decodes under two emotions.

use emoarrange::arranger::{train_generator_toy, GenTrainConfig, NeuralToyConfig};
use emoarrange::fusion::make_conditioned_input;
use emoarrange::model::downsample;
use emoarrange::synth::labeled_corpus;
use emoarrange::Granularity;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emoarrange::Result<()> {
    let pieces = labeled_corpus(&mut ChaCha8Rng::seed_from_u64(9), 48, 0.05);
    let cfg = GenTrainConfig { model: NeuralToyConfig::default(), epochs: 15, ..Default::default() };
    let (model, report) = train_generator_toy(&pieces, &cfg)?;
    println!(
        "{} parameters, loss {:.3} -> {:.3} in {} steps",
        model.param_count(),
        report.initial_loss,
        report.epoch_loss.last().unwrap(),
        report.steps
    );

    let seg = pieces[0].segment()?;
    let anchors = downsample(&seg.melody, Granularity::Beat, seg.time_signature);
    for e in [[0.7, 0.7], [-0.7, -0.7]] {
        let cond = make_conditioned_input(&anchors, &[e])?;
        let out = model.generate(&cond, seg.tonality, seg.time_signature)?;
        let kept = downsample(&out.melody, Granularity::Beat, seg.time_signature) == anchors;
        println!("{e:?}: {} notes, {} chords, anchors kept {kept}", out.melody.notes().len(), out.harmony.chords.iter().filter(|c| !c.is_rest()).count());
    }
    Ok(())
}
