//! Two-branch MLP emotion recognizer.
//!
//! Segment content and the flattened theory features are embedded by separate
//! two-hidden-layer ReLU MLPs; the concatenated embedding feeds a head that
//! predicts, for every beat and both axes, a distribution over uniform bins on
//! [-1, 1]. The continuous output is the bin-center expectation.

pub mod mlp;
pub mod semi;

use std::cell::Cell;
use std::collections::HashMap;

use log::{debug, info};
use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{features, FeatureMask, FormCache, FormConfig, TheoryFeatures, FEATURE_WIDTH};
use crate::model::{EmotionSeq, EmotionVA, Mode, Segment, MAX_PITCH, MIN_PITCH, SLOTS_PER_BEAT};
use crate::params::ParamFile;
use crate::pipeline::DatasetPiece;

pub use mlp::{Adam, Dense, DenseGrad};
pub use semi::{train_semi_supervised, SemiConfig, SemiReport};

/// Beats in the longest supported segment (four bars of 4/4).
pub const MAX_BEATS: usize = 16;
const MAX_SLOTS: usize = MAX_BEATS * SLOTS_PER_BEAT;
/// Width of [`content_input`].
pub const CONTENT_WIDTH: usize = MAX_SLOTS * 3 + MAX_BEATS * 12 + 12 + 1;
const GROUPS: usize = MAX_BEATS * 2;

const CONTENT_0: usize = 0;
const CONTENT_1: usize = 1;
const FEATURE_0: usize = 2;
const FEATURE_1: usize = 3;
const HEAD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Soft-target cross-entropy over bins.
    #[default]
    CrossEntropy,
    /// Squared error of the bin expectation.
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    pub hidden: usize,
    pub bins: usize,
    pub loss: LossKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before training counts as converged.
    pub patience: usize,
    pub min_delta: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub mask: FeatureMask,
    pub form: FormConfig,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            hidden: 512,
            bins: 21,
            loss: LossKind::CrossEntropy,
            lr: 1e-4,
            batch_size: 128,
            max_epochs: 40,
            patience: 3,
            min_delta: 1e-4,
            val_fraction: 0.1,
            seed: 0,
            mask: FeatureMask::all(),
            form: FormConfig::default(),
        }
    }
}

thread_local! {
    static RECOG_LOSS_EVALS: Cell<u64> = const { Cell::new(0) };
}

/// Number of recognition-loss evaluations made on this thread so far.
pub fn recog_loss_evaluations() -> u64 {
    RECOG_LOSS_EVALS.with(Cell::get)
}

/// Melody slots as (pitch, sounding, onset), per-beat chroma, root one-hot, minor flag.
pub fn content_input(seg: &Segment) -> Vec<f64> {
    let mut v = vec![0.0; CONTENT_WIDTH];
    let sounding = seg.melody.sounding();
    for (i, (tok, p)) in seg.melody.tokens().iter().zip(&sounding).enumerate().take(MAX_SLOTS) {
        if let Some(p) = p {
            v[i * 3] = (*p - MIN_PITCH) as f64 / (MAX_PITCH - MIN_PITCH) as f64;
            v[i * 3 + 1] = 1.0;
        }
        if tok.is_onset() {
            v[i * 3 + 2] = 1.0;
        }
    }
    let chroma = MAX_SLOTS * 3;
    for (b, chord) in seg.harmony.chords.iter().enumerate().take(MAX_BEATS) {
        for pc in chord.pitch_classes() {
            v[chroma + b * 12 + pc as usize] = 1.0;
        }
    }
    let key = chroma + MAX_BEATS * 12;
    v[key + seg.tonality.root() as usize] = 1.0;
    if seg.tonality.mode == Mode::Minor {
        v[key + 12] = 1.0;
    }
    v
}

/// One model input with an optional per-beat target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub content: Vec<f64>,
    pub features: Vec<f64>,
    pub beats: usize,
    pub target: Option<Vec<[f64; 2]>>,
}

impl Example {
    pub fn new(seg: &Segment, feats: &TheoryFeatures, mask: &FeatureMask, emotion: Option<&EmotionSeq>) -> Result<Self> {
        let mut f = feats.flatten();
        if f.len() != FEATURE_WIDTH {
            return Err(Error::Shape(format!("feature vector width {} != {FEATURE_WIDTH}", f.len())));
        }
        mask.apply(&mut f);
        let beats = seg.beats();
        let target = match emotion {
            Some(e) if e.len() != beats => return Err(Error::LengthMismatch { expected: beats, actual: e.len() }),
            Some(e) => Some(e.points.iter().map(|p| p.to_array()).collect()),
            None => None,
        };
        Ok(Example { content: content_input(seg), features: f, beats, target })
    }
}

/// Builds examples, threading one form cache through consecutive pieces of each source.
pub fn build_examples(pieces: &[DatasetPiece], cfg: &RecognizerConfig) -> Result<Vec<Example>> {
    let mut caches: HashMap<&str, FormCache> = HashMap::new();
    pieces
        .iter()
        .map(|p| {
            let seg = p.segment()?;
            let mut fresh = FormCache::new();
            let cache = match &p.source {
                Some(s) => caches.entry(s.as_str()).or_default(),
                None => &mut fresh,
            };
            let feats = features(&seg, cache, &cfg.form);
            Example::new(&seg, &feats, &cfg.mask, p.emotion.as_ref())
        })
        .collect()
}

/// Intermediate activations of a batch forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    xc: Array2<f64>,
    xf: Array2<f64>,
    pre: [Array2<f64>; 4],
    act: [Array2<f64>; 4],
    /// Concatenated content and feature embeddings, (n, 2 * hidden).
    pub embedding: Array2<f64>,
    /// Per-group bin probabilities, (n, groups * bins).
    pub probs: Array2<f64>,
    /// Bin expectations, (n, groups); group `2 * beat + axis`.
    pub out: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognizer {
    pub config: RecognizerConfig,
    pub layers: Vec<Dense>,
}

impl Recognizer {
    pub fn new(config: RecognizerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        let he = std::f64::consts::SQRT_2;
        let layers = vec![
            Dense::init(&mut rng, CONTENT_WIDTH, h, he),
            Dense::init(&mut rng, h, h, he),
            Dense::init(&mut rng, FEATURE_WIDTH, h, he),
            Dense::init(&mut rng, h, h, he),
            // near-uniform bins at init
            Dense::init(&mut rng, 2 * h, GROUPS * config.bins, 1e-3),
        ];
        Recognizer { config, layers }
    }

    pub fn bins(&self) -> usize {
        self.config.bins
    }

    pub fn embedding_width(&self) -> usize {
        2 * self.config.hidden
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        bin_centers(self.bins())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn forward(&self, examples: &[&Example]) -> Forward {
        let n = examples.len();
        let xc = Array2::from_shape_fn((n, CONTENT_WIDTH), |(i, j)| examples[i].content[j]);
        let xf = Array2::from_shape_fn((n, FEATURE_WIDTH), |(i, j)| examples[i].features[j]);
        let l = &self.layers;
        let p0 = l[CONTENT_0].forward(&xc);
        let a0 = mlp::relu(&p0);
        let p1 = l[CONTENT_1].forward(&a0);
        let a1 = mlp::relu(&p1);
        let p2 = l[FEATURE_0].forward(&xf);
        let a2 = mlp::relu(&p2);
        let p3 = l[FEATURE_1].forward(&a2);
        let a3 = mlp::relu(&p3);
        let embedding = ndarray::concatenate![Axis(1), a1, a3];
        let logits = l[HEAD].forward(&embedding);

        let bins = self.bins();
        let centers = self.bin_centers();
        let mut probs = logits;
        let mut out = Array2::zeros((n, GROUPS));
        for i in 0..n {
            for g in 0..GROUPS {
                let mut row = probs.slice_mut(s![i, g * bins..(g + 1) * bins]);
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                row.mapv_inplace(|x| (x - max).exp());
                let z = row.sum();
                row /= z;
                out[[i, g]] = row.iter().zip(&centers).map(|(p, c)| p * c).sum();
            }
        }
        Forward { xc, xf, pre: [p0, p1, p2, p3], act: [a0, a1, a2, a3], embedding, probs, out }
    }

    /// Parameter gradients given the gradient of a loss with respect to the head logits.
    pub fn backward_logits(&self, fwd: &Forward, dlogits: &Array2<f64>) -> Vec<DenseGrad> {
        let l = &self.layers;
        let h = self.config.hidden;
        let (g_head, demb) = l[HEAD].backward(&fwd.embedding, dlogits);
        let dc = mlp::relu_backward(&fwd.pre[1], &demb.slice(s![.., ..h]).to_owned());
        let df = mlp::relu_backward(&fwd.pre[3], &demb.slice(s![.., h..]).to_owned());
        let (g_c1, dc0) = l[CONTENT_1].backward(&fwd.act[0], &dc);
        let (g_f1, df0) = l[FEATURE_1].backward(&fwd.act[2], &df);
        let (g_c0, _) = l[CONTENT_0].backward(&fwd.xc, &mlp::relu_backward(&fwd.pre[0], &dc0));
        let (g_f0, _) = l[FEATURE_0].backward(&fwd.xf, &mlp::relu_backward(&fwd.pre[2], &df0));
        vec![g_c0, g_c1, g_f0, g_f1, g_head]
    }

    /// Logit gradient for an upstream gradient on the bin expectations.
    fn output_grad_to_logits(&self, fwd: &Forward, dout: &Array2<f64>) -> Array2<f64> {
        let bins = self.bins();
        let centers = self.bin_centers();
        let mut d = Array2::zeros(fwd.probs.raw_dim());
        for ((i, g), &go) in dout.indexed_iter() {
            if go == 0.0 {
                continue;
            }
            let o = fwd.out[[i, g]];
            for k in 0..bins {
                let p = fwd.probs[[i, g * bins + k]];
                d[[i, g * bins + k]] = go * p * (centers[k] - o);
            }
        }
        d
    }

    /// Backpropagates an external gradient on the outputs, (n, groups), into parameter gradients.
    pub fn backward_from_output_grad(&self, fwd: &Forward, dout: &Array2<f64>) -> Vec<DenseGrad> {
        self.backward_logits(fwd, &self.output_grad_to_logits(fwd, dout))
    }

    /// Recognition loss and its parameter gradients, averaged over labeled beat-axis pairs.
    pub fn loss_and_grads(&self, examples: &[&Example]) -> Result<(f64, Vec<DenseGrad>)> {
        let fwd = self.forward(examples);
        let (loss, dlogits) = self.loss_from_forward(&fwd, examples)?;
        Ok((loss, self.backward_logits(&fwd, &dlogits)))
    }

    pub fn loss(&self, examples: &[&Example]) -> Result<f64> {
        let fwd = self.forward(examples);
        Ok(self.loss_from_forward(&fwd, examples)?.0)
    }

    fn loss_from_forward(&self, fwd: &Forward, examples: &[&Example]) -> Result<(f64, Array2<f64>)> {
        RECOG_LOSS_EVALS.with(|c| c.set(c.get() + 1));
        let bins = self.bins();
        let count: usize = examples.iter().map(|e| e.beats * 2).sum();
        if count == 0 {
            return Err(Error::Empty("labeled beats"));
        }
        let norm = 1.0 / count as f64;
        let mut loss = 0.0;
        let mut dlogits = Array2::zeros(fwd.probs.raw_dim());
        let mut dout = Array2::zeros(fwd.out.raw_dim());
        for (i, ex) in examples.iter().enumerate() {
            let target = ex.target.as_ref().ok_or(Error::Empty("example target"))?;
            for (b, t) in target.iter().enumerate().take(ex.beats) {
                for (axis, &y) in t.iter().enumerate() {
                    let g = b * 2 + axis;
                    match self.config.loss {
                        LossKind::CrossEntropy => {
                            for (k, w) in two_hot(y, bins) {
                                loss -= w * fwd.probs[[i, g * bins + k]].max(1e-300).ln() * norm;
                                dlogits[[i, g * bins + k]] -= w * norm;
                            }
                            for k in 0..bins {
                                dlogits[[i, g * bins + k]] += fwd.probs[[i, g * bins + k]] * norm;
                            }
                        }
                        LossKind::Mse => {
                            let e = fwd.out[[i, g]] - y;
                            loss += e * e * norm;
                            dout[[i, g]] = 2.0 * e * norm;
                        }
                    }
                }
            }
        }
        if self.config.loss == LossKind::Mse {
            dlogits = self.output_grad_to_logits(fwd, &dout);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("recognition loss"));
        }
        Ok((loss, dlogits))
    }

    pub fn predict_batch(&self, examples: &[&Example]) -> Vec<Vec<[f64; 2]>> {
        let fwd = self.forward(examples);
        examples
            .iter()
            .enumerate()
            .map(|(i, ex)| (0..ex.beats).map(|b| [fwd.out[[i, 2 * b]], fwd.out[[i, 2 * b + 1]]]).collect())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn to_params(&self) -> Result<ParamFile> {
        let mut meta = serde_json::to_value(&self.config)?;
        meta["hidden_layers_per_branch"] = 2.into();
        let mut pf = ParamFile::new("recognizer", meta);
        let names = ["content.0", "content.1", "feature.0", "feature.1", "head"];
        for (name, l) in names.iter().zip(&self.layers) {
            pf.push(&format!("{name}.w"), l.w.shape(), l.w.iter().copied().collect())?;
            pf.push(&format!("{name}.b"), l.b.shape(), l.b.to_vec())?;
        }
        Ok(pf)
    }

    pub fn from_params(pf: &ParamFile) -> Result<Self> {
        if pf.kind != "recognizer" {
            return Err(Error::ParamFile(format!("expected recognizer parameters, found {:?}", pf.kind)));
        }
        let config: RecognizerConfig = serde_json::from_value(pf.meta.clone())?;
        let mut rec = Recognizer::new(RecognizerConfig { ..config.clone() });
        let names = ["content.0", "content.1", "feature.0", "feature.1", "head"];
        for (name, l) in names.iter().zip(rec.layers.iter_mut()) {
            let (shape, data) = pf.get(&format!("{name}.w"))?;
            if shape != l.w.shape() {
                return Err(Error::Shape(format!("{name}.w: {shape:?} vs {:?}", l.w.shape())));
            }
            l.w = Array2::from_shape_vec((shape[0], shape[1]), data.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
            let (shape, data) = pf.get(&format!("{name}.b"))?;
            if shape != l.b.shape() {
                return Err(Error::Shape(format!("{name}.b: {shape:?} vs {:?}", l.b.shape())));
            }
            l.b = ndarray::Array1::from(data.to_vec());
        }
        Ok(rec)
    }
}

pub fn bin_centers(bins: usize) -> Vec<f64> {
    (0..bins).map(|k| -1.0 + 2.0 * k as f64 / (bins - 1) as f64).collect()
}

/// Splits `y` between its two neighboring bin centers so that the expectation equals `y`.
pub fn two_hot(y: f64, bins: usize) -> Vec<(usize, f64)> {
    let pos = (y.clamp(-1.0, 1.0) + 1.0) / 2.0 * (bins - 1) as f64;
    let lo = (pos.floor() as usize).min(bins - 2);
    let frac = pos - lo as f64;
    vec![(lo, 1.0 - frac), (lo + 1, frac)]
}

/// The 2·hidden embedding of a segment: content embedding followed by feature embedding.
pub fn embed_inputs(rec: &Recognizer, seg: &Segment, feats: &TheoryFeatures) -> Result<Vec<f64>> {
    let ex = Example::new(seg, feats, &rec.config.mask, None)?;
    let fwd = rec.forward(&[&ex]);
    let v = fwd.embedding.row(0).to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("embedding"));
    }
    Ok(v)
}

/// One valence-arousal point per beat of `seg`.
pub fn recognize(rec: &Recognizer, seg: &Segment, feats: &TheoryFeatures) -> Result<EmotionSeq> {
    let ex = Example::new(seg, feats, &rec.config.mask, None)?;
    let out = rec.predict_batch(&[&ex]).remove(0);
    if out.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("recognizer output"));
    }
    Ok(EmotionSeq::new(out.into_iter().map(|[v, a]| EmotionVA::new(v, a)).collect()))
}

/// Recognizes and embeds in one forward pass.
pub fn recognize_with_embedding(rec: &Recognizer, seg: &Segment, feats: &TheoryFeatures) -> Result<(EmotionSeq, Vec<f64>)> {
    let ex = Example::new(seg, feats, &rec.config.mask, None)?;
    let fwd = rec.forward(&[&ex]);
    let seq: Vec<EmotionVA> = (0..ex.beats).map(|b| EmotionVA::new(fwd.out[[0, 2 * b]], fwd.out[[0, 2 * b + 1]])).collect();
    let emb = fwd.embedding.row(0).to_vec();
    if emb.iter().any(|x| !x.is_finite()) || seq.iter().any(|e| !e.valence().is_finite()) {
        return Err(Error::NonFinite("recognizer output"));
    }
    Ok((EmotionSeq::new(seq), emb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlendSchedule {
    n_cur: usize,
    n_total: usize,
}

impl BlendSchedule {
    pub fn new(n_cur: usize, n_total: usize) -> Result<Self> {
        if n_total == 0 || n_cur > n_total {
            return Err(Error::Invalid(format!("blend schedule {n_cur}/{n_total} outside 0..=n_total, n_total > 0")));
        }
        Ok(BlendSchedule { n_cur, n_total })
    }

    pub fn alpha(&self) -> f64 {
        self.n_cur as f64 / self.n_total as f64
    }
}

/// Pointwise `(1 - alpha) * label + alpha * recognized`.
pub fn blend_emotion(label: &EmotionSeq, recog: &EmotionSeq, sched: BlendSchedule) -> Result<EmotionSeq> {
    if label.len() != recog.len() {
        return Err(Error::LengthMismatch { expected: label.len(), actual: recog.len() });
    }
    let a = sched.alpha();
    Ok(EmotionSeq::new(
        label
            .points
            .iter()
            .zip(&recog.points)
            .map(|(l, r)| {
                if a == 0.0 {
                    *l
                } else if a == 1.0 {
                    *r
                } else {
                    EmotionVA::new((1.0 - a) * l.valence() + a * r.valence(), (1.0 - a) * l.arousal() + a * r.arousal())
                }
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub steps: usize,
    pub best_epoch: usize,
    /// Validation loss stopped improving for `patience` epochs.
    pub converged: bool,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.train_loss.first().copied()
    }
}

/// Supervised training on the labeled pieces.
pub fn train_supervised(pieces: &[DatasetPiece], cfg: &RecognizerConfig) -> Result<(Recognizer, TrainReport)> {
    let labeled: Vec<DatasetPiece> = pieces.iter().filter(|p| p.emotion.is_some()).cloned().collect();
    if labeled.is_empty() {
        return Err(Error::Empty("labeled pieces"));
    }
    let examples = build_examples(&labeled, cfg)?;
    train_examples(&examples, cfg)
}

/// Trains from scratch on prepared examples.
pub fn train_examples(examples: &[Example], cfg: &RecognizerConfig) -> Result<(Recognizer, TrainReport)> {
    let mut rec = Recognizer::new(cfg.clone());
    let report = continue_training(&mut rec, examples, cfg)?;
    Ok((rec, report))
}

/// Mini-batch Adam with a validation-plateau stop; `rec` ends at the best epoch.
pub fn continue_training(rec: &mut Recognizer, examples: &[Example], cfg: &RecognizerConfig) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::Empty("training examples"));
    }
    if examples.iter().any(|e| e.target.is_none()) {
        return Err(Error::Invalid("supervised training needs labeled examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if examples.len() >= 10 { ((examples.len() as f64 * cfg.val_fraction).round() as usize).max(1) } else { 0 };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&Example> = val_idx.iter().map(|&i| &examples[i]).collect();
    let mut train: Vec<&Example> = train_idx.iter().map(|&i| &examples[i]).collect();

    let mut adam = Adam::new(&rec.layers, cfg.lr);
    let mut report = TrainReport::default();
    let mut best = f64::INFINITY;
    let mut best_layers = rec.layers.clone();
    let mut stale = 0;
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.max_epochs {
        train.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train.chunks(batch) {
            let (loss, grads) = rec.loss_and_grads(chunk)?;
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut rec.layers, &grads);
            report.steps += 1;
        }
        epoch_loss /= train.len() as f64;
        let monitored = if val.is_empty() {
            epoch_loss
        } else {
            let v = val.chunks(512).map(|c| rec.loss(c).map(|l| l * c.len() as f64)).sum::<Result<f64>>()? / val.len() as f64;
            report.val_loss.push(v);
            v
        };
        report.train_loss.push(epoch_loss);
        debug!("epoch {epoch}: train {epoch_loss:.4} monitored {monitored:.4}");
        if !rec.is_finite() {
            return Err(Error::NonFinite("recognizer weights"));
        }
        if monitored < best - cfg.min_delta {
            best = monitored;
            best_layers.clone_from(&rec.layers);
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                report.converged = true;
                break;
            }
        }
    }
    rec.layers = best_layers;
    info!(
        "recognizer: {} epochs, best {:.4} at epoch {}, converged {}",
        report.train_loss.len(),
        best,
        report.best_epoch,
        report.converged
    );
    Ok(report)
}

/// Anything that maps an example to per-beat valence-arousal.
pub trait Predictor {
    fn predict(&self, examples: &[&Example]) -> Vec<Vec<[f64; 2]>>;
}

impl Predictor for Recognizer {
    fn predict(&self, examples: &[&Example]) -> Vec<Vec<[f64; 2]>> {
        examples.chunks(256).flat_map(|c| self.predict_batch(c)).collect()
    }
}

/// Predicts the training-set mean on every beat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanPredictor {
    pub mean: [f64; 2],
}

impl MeanPredictor {
    pub fn fit(examples: &[Example]) -> Result<Self> {
        let mut sum = [0.0; 2];
        let mut n = 0usize;
        for t in examples.iter().filter_map(|e| e.target.as_ref()) {
            for p in t {
                sum[0] += p[0];
                sum[1] += p[1];
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Empty("labeled beats"));
        }
        Ok(MeanPredictor { mean: [sum[0] / n as f64, sum[1] / n as f64] })
    }
}

impl Predictor for MeanPredictor {
    fn predict(&self, examples: &[&Example]) -> Vec<Vec<[f64; 2]>> {
        examples.iter().map(|e| vec![self.mean; e.beats]).collect()
    }
}

/// Root mean squared error over every labeled beat and both axes.
pub fn rmse(p: &impl Predictor, examples: &[&Example]) -> Result<f64> {
    let preds = p.predict(examples);
    let mut se = 0.0;
    let mut n = 0usize;
    for (ex, pred) in examples.iter().zip(preds) {
        let t = ex.target.as_ref().ok_or(Error::Empty("example target"))?;
        for (a, b) in t.iter().zip(pred) {
            se += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            n += 2;
        }
    }
    if n == 0 {
        return Err(Error::Empty("labeled beats"));
    }
    Ok((se / n as f64).sqrt())
}

/// Per-fold RMSE; example `i` is held out in fold `i % k`.
pub fn kfold_eval<P: Predictor>(
    examples: &[Example],
    k: usize,
    mut fit: impl FnMut(&[Example]) -> Result<P>,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::Invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if examples.len() < k {
        return Err(Error::Invalid(format!("{} examples cannot fill {k} folds", examples.len())));
    }
    (0..k)
        .map(|fold| {
            let train: Vec<Example> = examples.iter().enumerate().filter(|(i, _)| i % k != fold).map(|(_, e)| e.clone()).collect();
            let test: Vec<&Example> = examples.iter().enumerate().filter(|(i, _)| i % k == fold).map(|(_, e)| e).collect();
            let model = fit(&train)?;
            rmse(&model, &test)
        })
        .collect()
}

/// Largest relative error between analytic and central-difference gradients
/// over `count` parameters with non-negligible gradient.
pub fn gradient_check(rec: &Recognizer, examples: &[&Example], count: usize, eps: f64, seed: u64) -> Result<f64> {
    use rand::Rng;
    let (_, grads) = rec.loss_and_grads(examples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < count {
        attempts += 1;
        if attempts > count * 10_000 {
            return Err(Error::Invalid("too few parameters with usable gradient".into()));
        }
        let li = checked % rec.layers.len();
        let layer = &rec.layers[li];
        let idx = rng.gen_range(0..layer.param_count());
        let analytic = flat_get(&grads[li], idx);
        if analytic.abs() < 1e-7 {
            continue;
        }
        let mut hi = rec.clone();
        flat_add(&mut hi.layers[li], idx, eps);
        let mut lo = rec.clone();
        flat_add(&mut lo.layers[li], idx, -eps);
        let numeric = (hi.loss(examples)? - lo.loss(examples)?) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(worst)
}

fn flat_get(g: &DenseGrad, idx: usize) -> f64 {
    if idx < g.w.len() {
        g.w.as_slice().unwrap()[idx]
    } else {
        g.b[idx - g.w.len()]
    }
}

fn flat_add(l: &mut Dense, idx: usize, delta: f64) {
    if idx < l.w.len() {
        l.w.as_slice_mut().unwrap()[idx] += delta;
    } else {
        let n = l.w.len();
        l.b[idx - n] += delta;
    }
}
