//! Trains a small recognizer on the synthetic corpus and compares it with the mean predictor.

use emoarrange::recognizer::{build_examples, gradient_check, rmse, train_examples, Example, MeanPredictor, RecognizerConfig};
use emoarrange::synth::labeled_corpus;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> emoarrange::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pieces = labeled_corpus(&mut rng, 600, 0.1);
    let cfg = RecognizerConfig { hidden: 64, lr: 1e-3, batch_size: 32, max_epochs: 60, ..Default::default() };
    let examples = build_examples(&pieces, &cfg)?;
    let (train, test) = examples.split_at(500);
    let test: Vec<&Example> = test.iter().collect();

    let (rec, report) = train_examples(train, &cfg)?;
    println!(
        "{} epochs, loss {:.3} -> {:.3}, converged {}",
        report.train_loss.len(),
        report.initial_loss().unwrap_or(f64::NAN),
        report.train_loss.last().copied().unwrap_or(f64::NAN),
        report.converged
    );
    let mean = MeanPredictor::fit(train)?;
    println!("test RMSE: recognizer {:.3}, mean predictor {:.3}", rmse(&rec, &test)?, rmse(&mean, &test)?);
    println!("gradient check max relative error {:.2e}", gradient_check(&rec, &test[..4], 20, 1e-5, 1)?);

    let path = std::env::temp_dir().join("recognizer.json");
    rec.to_params()?.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}
