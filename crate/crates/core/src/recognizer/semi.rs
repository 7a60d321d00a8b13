//! Two-phase training that couples the recognizer to the generator.
//!
//! Phase 1 uses labeled pieces: the recognizer is fit on L_recog until its
//! validation loss plateaus, then the generator is fit on L_gen conditioned on
//! the blend of label and recognized emotion, with alpha rising from 0 to 1.
//! Phase 2 uses unlabeled pieces only: the recognizer's output is the
//! conditioning, and L_gen gradients flow into both networks.

use candle_core::Var;
use candle_nn::Optimizer;
use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    blend_emotion, build_examples, continue_training, recog_loss_evaluations, Adam, BlendSchedule, DenseGrad, Example,
    Recognizer, RecognizerConfig, TrainReport,
};
use crate::arranger::neural::{adam, cond_tensor, GenExample, GenTrainConfig, NeuralToy};
use crate::error::{Error, Result};
use crate::model::{EmotionSeq, EmotionVA};
use crate::pipeline::DatasetPiece;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiConfig {
    pub recognizer: RecognizerConfig,
    pub generator: GenTrainConfig,
    /// Generator epochs over the labeled pieces.
    pub phase1_epochs: usize,
    /// Epochs over the unlabeled pieces.
    pub phase2_epochs: usize,
    /// Recognizer learning rate for L_gen updates.
    pub coupling_lr: f64,
    /// Ablation: keep the recognizer fixed during phase 2.
    pub freeze_recognizer: bool,
}

impl Default for SemiConfig {
    fn default() -> Self {
        SemiConfig {
            recognizer: RecognizerConfig { hidden: 32, lr: 1e-3, batch_size: 16, max_epochs: 300, ..Default::default() },
            generator: GenTrainConfig::default(),
            phase1_epochs: 10,
            phase2_epochs: 10,
            coupling_lr: 1e-3,
            freeze_recognizer: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemiReport {
    pub phase1: TrainReport,
    pub phase1_gen_loss: Vec<f64>,
    pub phase2_gen_loss: Vec<f64>,
    /// Recognition-loss evaluations performed during phase 2.
    pub phase2_recog_loss_evals: u64,
    /// L_gen over the unlabeled pieces, conditioned on the final recognizer, without dropout.
    pub final_gen_loss: f64,
    pub frozen: bool,
}

/// Per-beat recognizer outputs, one forward pass per example.
pub fn pseudo_labels(rec: &Recognizer, examples: &[Example]) -> Vec<EmotionSeq> {
    examples
        .iter()
        .map(|ex| {
            let out = rec.predict_batch(&[ex]).remove(0);
            EmotionSeq::new(out.into_iter().map(|[v, a]| EmotionVA::new(v, a)).collect())
        })
        .collect()
}

fn mean_cond(seq: &EmotionSeq) -> [f64; 2] {
    seq.mean().map_or([0.0; 2], |e| e.to_array())
}

/// Refuses the switch to unlabeled data unless phase 1 reached its plateau.
pub fn check_phase_switch(report: &TrainReport) -> Result<()> {
    if report.converged {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "supervised phase has not converged after {} epochs (no validation plateau); raise max_epochs before using unlabeled data",
            report.train_loss.len()
        )))
    }
}

fn gen_examples(pieces: &[DatasetPiece], cfg: &GenTrainConfig) -> Result<Vec<GenExample>> {
    pieces.iter().map(|p| GenExample::from_segment(&p.segment()?, cfg.granularity)).collect()
}

/// Mean L_gen over `gen` conditioned on the recognizer's pseudo-labels.
pub fn coupled_gen_loss(rec: &Recognizer, model: &NeuralToy, rec_ex: &[Example], gen: &[GenExample]) -> Result<f64> {
    let conds: Vec<[f64; 2]> = pseudo_labels(rec, rec_ex).iter().map(mean_cond).collect();
    let mut total = 0.0;
    for (chunk, c) in gen.chunks(32).zip(conds.chunks(32)) {
        let batch: Vec<&GenExample> = chunk.iter().collect();
        total += model.loss_value(&batch, c)? * chunk.len() as f64;
    }
    Ok(total / gen.len() as f64)
}

pub fn train_semi_supervised(
    labeled: &[DatasetPiece],
    unlabeled: &[DatasetPiece],
    cfg: &SemiConfig,
) -> Result<(Recognizer, NeuralToy, SemiReport)> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled pieces"));
    }
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabeled pieces"));
    }
    if labeled.iter().any(|p| p.emotion.is_none()) {
        return Err(Error::Invalid("phase 1 pieces must all carry labels".into()));
    }

    // phase 1: recognizer
    let lab_rec = build_examples(labeled, &cfg.recognizer)?;
    let mut rec = Recognizer::new(cfg.recognizer.clone());
    let phase1 = continue_training(&mut rec, &lab_rec, &cfg.recognizer)?;
    check_phase_switch(&phase1)?;

    // phase 1: generator on blended emotion
    let gcfg = &cfg.generator;
    let model = NeuralToy::new(gcfg.model)?;
    let mut opt = adam(&model, gcfg.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(gcfg.seed);
    let lab_gen = gen_examples(labeled, gcfg)?;
    let labels: Vec<&EmotionSeq> = labeled.iter().map(|p| p.emotion.as_ref().unwrap()).collect();
    let recognized = pseudo_labels(&rec, &lab_rec);
    let batch_size = gcfg.batch_size.max(1);
    let total_steps = cfg.phase1_epochs * lab_gen.len().div_ceil(batch_size);
    let mut report = SemiReport { phase1, frozen: cfg.freeze_recognizer, ..Default::default() };
    let mut order: Vec<usize> = (0..lab_gen.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.phase1_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let sched = BlendSchedule::new(step, total_steps)?;
            let conds = chunk
                .iter()
                .map(|&i| blend_emotion(labels[i], &recognized[i], sched).map(|e| mean_cond(&e)))
                .collect::<Result<Vec<_>>>()?;
            let batch: Vec<&GenExample> = chunk.iter().map(|&i| &lab_gen[i]).collect();
            let loss = model.loss(&batch, &cond_tensor(&conds)?, Some(&mut rng))?;
            sum += loss.to_scalar::<f64>()? * chunk.len() as f64;
            opt.backward_step(&loss)?;
            step += 1;
        }
        report.phase1_gen_loss.push(sum / lab_gen.len() as f64);
    }

    // phase 2: unlabeled, L_gen only
    let unl_rec = build_examples(unlabeled, &cfg.recognizer)?;
    let unl_gen = gen_examples(unlabeled, gcfg)?;
    let mut rec_opt = Adam::new(&rec.layers, cfg.coupling_lr);
    let evals_before = recog_loss_evaluations();
    let mut order: Vec<usize> = (0..unl_gen.len()).collect();
    for _ in 0..cfg.phase2_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let fwds: Vec<_> = chunk.iter().map(|&i| rec.forward(&[&unl_rec[i]])).collect();
            let conds: Vec<[f64; 2]> = chunk
                .iter()
                .zip(&fwds)
                .map(|(&i, f)| {
                    let beats = unl_rec[i].beats;
                    let mut c = [0.0; 2];
                    for b in 0..beats {
                        c[0] += f.out[[0, 2 * b]] / beats as f64;
                        c[1] += f.out[[0, 2 * b + 1]] / beats as f64;
                    }
                    c
                })
                .collect();
            let cond = Var::from_tensor(&cond_tensor(&conds)?)?;
            let batch: Vec<&GenExample> = chunk.iter().map(|&i| &unl_gen[i]).collect();
            let loss = model.loss(&batch, cond.as_tensor(), Some(&mut rng))?;
            sum += loss.to_scalar::<f64>()? * chunk.len() as f64;
            let grads = loss.backward()?;
            opt.step(&grads)?;
            if !cfg.freeze_recognizer {
                let dcond = grads
                    .get(cond.as_tensor())
                    .ok_or_else(|| Error::Invalid("no gradient reached the conditioning".into()))?
                    .to_vec2::<f64>()?;
                let mut acc: Option<Vec<DenseGrad>> = None;
                for ((&i, f), d) in chunk.iter().zip(&fwds).zip(&dcond) {
                    let beats = unl_rec[i].beats;
                    let mut dout = Array2::zeros(f.out.raw_dim());
                    for b in 0..beats {
                        dout[[0, 2 * b]] = d[0] / beats as f64;
                        dout[[0, 2 * b + 1]] = d[1] / beats as f64;
                    }
                    let g = rec.backward_from_output_grad(f, &dout);
                    match &mut acc {
                        None => acc = Some(g),
                        Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| x.add_assign(y)),
                    }
                }
                rec_opt.step(&mut rec.layers, &acc.unwrap());
                if !rec.is_finite() {
                    return Err(Error::NonFinite("recognizer weights"));
                }
            }
        }
        report.phase2_gen_loss.push(sum / unl_gen.len() as f64);
    }
    report.phase2_recog_loss_evals = recog_loss_evaluations() - evals_before;
    report.final_gen_loss = coupled_gen_loss(&rec, &model, &unl_rec, &unl_gen)?;
    info!(
        "semi-supervised ({}): phase-1 recognizer epochs {}, final L_gen {:.4}",
        if cfg.freeze_recognizer { "frozen" } else { "coupled" },
        report.phase1.train_loss.len(),
        report.final_gen_loss
    );
    Ok((rec, model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{features, FormCache, FormConfig};
    use crate::recognizer::recognize;
    use crate::synth::labeled_corpus;

    fn corpus() -> (Vec<DatasetPiece>, Vec<DatasetPiece>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let all = labeled_corpus(&mut rng, 48, 0.05);
        let (lab, rest) = all.split_at(24);
        let unl = rest.iter().cloned().map(|mut p| {
            p.emotion = None;
            p
        });
        (lab.to_vec(), unl.collect())
    }

    fn small() -> SemiConfig {
        let mut cfg = SemiConfig::default();
        cfg.recognizer.hidden = 16;
        cfg.generator.model.d_model = 16;
        cfg.generator.model.ff = 32;
        cfg.generator.batch_size = 8;
        cfg.phase1_epochs = 2;
        cfg.phase2_epochs = 2;
        cfg
    }

    #[test]
    fn pseudo_labels_match_recognize() {
        let (_, unl) = corpus();
        let rcfg = RecognizerConfig { hidden: 16, ..Default::default() };
        let rec = Recognizer::new(rcfg.clone());
        let ex = build_examples(&unl[..4], &rcfg).unwrap();
        let pl = pseudo_labels(&rec, &ex);
        for (p, l) in unl[..4].iter().zip(&pl) {
            let seg = p.segment().unwrap();
            let f = features(&seg, &mut FormCache::new(), &FormConfig::default());
            assert_eq!(&recognize(&rec, &seg, &f).unwrap(), l);
        }
    }

    #[test]
    fn refuses_without_convergence() {
        let (lab, unl) = corpus();
        let mut cfg = small();
        cfg.recognizer.max_epochs = 1;
        let err = train_semi_supervised(&lab, &unl, &cfg).unwrap_err();
        assert!(err.to_string().contains("not converged"), "{err}");
    }

    #[test]
    fn unlabeled_phase_skips_recognition_loss() {
        let (lab, unl) = corpus();
        let (_, _, report) = train_semi_supervised(&lab, &unl, &small()).unwrap();
        assert!(report.phase1.converged);
        assert_eq!(report.phase2_recog_loss_evals, 0);
        assert_eq!(report.phase2_gen_loss.len(), 2);
        assert!(report.final_gen_loss.is_finite());
    }

    #[test]
    fn frozen_arm_keeps_recognizer() {
        let (lab, unl) = corpus();
        let cfg = SemiConfig { freeze_recognizer: true, ..small() };
        let (rec, _, _) = train_semi_supervised(&lab, &unl, &cfg).unwrap();
        let (coupled, _, _) = train_semi_supervised(&lab, &unl, &small()).unwrap();
        let mut phase1_only = Recognizer::new(cfg.recognizer.clone());
        continue_training(&mut phase1_only, &build_examples(&lab, &cfg.recognizer).unwrap(), &cfg.recognizer).unwrap();
        assert_eq!(rec, phase1_only);
        assert_ne!(coupled, phase1_only);
    }
}
