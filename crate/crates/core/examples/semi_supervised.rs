//! Two-phase semi-supervised training, coupled and with the recognizer frozen.

use emoarrange::arranger::GenTrainConfig;
use emoarrange::recognizer::{train_semi_supervised, RecognizerConfig, SemiConfig};
use emoarrange::synth::labeled_corpus;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emoarrange::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let labeled = labeled_corpus(&mut rng, 96, 0.05);
    let mut unlabeled = labeled_corpus(&mut rng, 48, 0.05);
    unlabeled.iter_mut().for_each(|p| p.emotion = None);

    let base = SemiConfig {
        recognizer: RecognizerConfig { hidden: 32, lr: 3e-3, batch_size: 16, max_epochs: 300, ..Default::default() },
        generator: GenTrainConfig { epochs: 0, ..Default::default() },
        phase1_epochs: 4,
        phase2_epochs: 4,
        ..Default::default()
    };
    for frozen in [false, true] {
        let cfg = SemiConfig { freeze_recognizer: frozen, ..base.clone() };
        let (_, _, report) = train_semi_supervised(&labeled, &unlabeled, &cfg)?;
        println!(
            "{}: recognizer stopped after {} epochs, phase 2 L_gen {:?}, final {:.4}, L_recog evaluations in phase 2: {}",
            if frozen { "frozen " } else { "coupled" },
            report.phase1.train_loss.len(),
            report.phase2_gen_loss.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>(),
            report.final_gen_loss,
            report.phase2_recog_loss_evals
        );
    }
    Ok(())
}
