//! The three fusion methods applied to the same previous segment and target.

use emoarrange::fusion::{FusionKind, PreviousSegment};
use emoarrange::features::{features, FormCache, FormConfig};
use emoarrange::recognizer::{recognize_with_embedding, train_supervised, RecognizerConfig};
use emoarrange::stream::Models;
use emoarrange::synth::{demo_song, labeled_corpus};
use emoarrange::{EmotionSeq, EmotionVA};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emoarrange::Result<()> {
    let pieces = labeled_corpus(&mut ChaCha8Rng::seed_from_u64(1), 300, 0.1);
    let cfg = RecognizerConfig { hidden: 32, lr: 3e-3, batch_size: 32, max_epochs: 30, ..Default::default() };
    let (rec, _) = train_supervised(&pieces, &cfg)?;
    let models = Models::new(rec)?;
    let seg = demo_song().segment_at(0)?;
    let feats = features(&seg, &mut FormCache::new(), &FormConfig::default());
    let (recognized, embedding) = recognize_with_embedding(&models.recognizer, &seg, &feats)?;
    let prev = PreviousSegment { recognized: recognized.clone(), embedding };
    let target = EmotionSeq::constant(EmotionVA::new(0.8, -0.4), seg.beats());

    let r = recognized.mean().unwrap();
    println!("recognized previous ({:+.3}, {:+.3}), target (+0.800, -0.400)", r.valence(), r.arousal());
    for kind in [FusionKind::Median, FusionKind::Concat, FusionKind::Features] {
        let fused = models.fusion(kind).fuse(Some(&prev), &target)?;
        let n = fused.len() as f64;
        let (v, a) = fused.iter().fold((0.0, 0.0), |(v, a), f| (v + f[0] / n, a + f[1] / n));
        println!("{kind:?}: mean fused ({v:+.3}, {a:+.3}) over {} beats", fused.len());
    }
    let first = models.fusion(FusionKind::Median).fuse(None, &target)?;
    println!("first segment passes the target through: {:?}", first[0]);
    Ok(())
}
