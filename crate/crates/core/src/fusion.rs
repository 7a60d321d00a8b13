//! Fusing the last segment's recognized emotion with the current target, and
//! packaging the result as a per-token conditioning sequence.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DownsampledMelody, EmotionSeq, EmotionVA, PitchToken};
use crate::params::ParamFile;

/// Width of the emotion conditioning vector.
pub const COND_WIDTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Median,
    Concat,
    #[default]
    Features,
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "median" => Ok(FusionKind::Median),
            "concat" => Ok(FusionKind::Concat),
            "features" => Ok(FusionKind::Features),
            other => Err(Error::Invalid(format!("unknown fusion method {other:?} (median|concat|features)"))),
        }
    }
}

/// `y = W x + b` with `W` of shape (COND_WIDTH, inputs), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub inputs: usize,
    pub w: Vec<f64>,
    pub b: [f64; COND_WIDTH],
}

impl LinearMap {
    pub fn zeros(inputs: usize) -> Self {
        LinearMap { inputs, w: vec![0.0; COND_WIDTH * inputs], b: [0.0; COND_WIDTH] }
    }

    pub fn new(inputs: usize, w: Vec<f64>, b: [f64; COND_WIDTH]) -> Result<Self> {
        if w.len() != COND_WIDTH * inputs {
            return Err(Error::Shape(format!("linear map holds {} weights, expected {}", w.len(), COND_WIDTH * inputs)));
        }
        if w.iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("fusion weights"));
        }
        Ok(LinearMap { inputs, w, b })
    }

    /// `0.5 * [I | I]`: averages two stacked emotion vectors.
    pub fn median_init() -> Self {
        let mut m = LinearMap::zeros(2 * COND_WIDTH);
        for r in 0..COND_WIDTH {
            m.w[r * 4 + r] = 0.5;
            m.w[r * 4 + COND_WIDTH + r] = 0.5;
        }
        m
    }

    pub fn apply(&self, x: &[f64]) -> Result<[f64; COND_WIDTH]> {
        if x.len() != self.inputs {
            return Err(Error::Shape(format!("linear map expects {} inputs, got {}", self.inputs, x.len())));
        }
        let mut y = self.b;
        for (r, yr) in y.iter_mut().enumerate() {
            *yr += self.w[r * self.inputs..(r + 1) * self.inputs].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        Ok(y)
    }
}

/// Pointwise midpoint of `prev` and `target`.
pub fn fuse_median(prev: &EmotionSeq, target: &EmotionSeq) -> Result<EmotionSeq> {
    if prev.len() != target.len() {
        return Err(Error::LengthMismatch { expected: target.len(), actual: prev.len() });
    }
    Ok(EmotionSeq::new(
        prev.points
            .iter()
            .zip(&target.points)
            .map(|(p, t)| EmotionVA::new((p.valence() + t.valence()) / 2.0, (p.arousal() + t.arousal()) / 2.0))
            .collect(),
    ))
}

/// Linear projection of each `[prev | target]` pair.
pub fn fuse_concat(prev: &EmotionSeq, target: &EmotionSeq, w: &LinearMap) -> Result<Vec<[f64; COND_WIDTH]>> {
    if prev.len() != target.len() {
        return Err(Error::LengthMismatch { expected: target.len(), actual: prev.len() });
    }
    prev.points
        .iter()
        .zip(&target.points)
        .map(|(p, t)| w.apply(&[p.valence(), p.arousal(), t.valence(), t.arousal()]))
        .collect()
}

/// Linear projection of `[embedding | target]` for each target point.
pub fn fuse_features(embed: &[f64], target: &EmotionSeq, w: &LinearMap) -> Result<Vec<[f64; COND_WIDTH]>> {
    let mut x = Vec::with_capacity(embed.len() + COND_WIDTH);
    x.extend_from_slice(embed);
    x.extend([0.0; COND_WIDTH]);
    target
        .points
        .iter()
        .map(|t| {
            let n = x.len();
            x[n - 2] = t.valence();
            x[n - 1] = t.arousal();
            w.apply(&x)
        })
        .collect()
}

/// What the previous step leaves behind for fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviousSegment {
    pub recognized: EmotionSeq,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FusionMethod {
    MedianEmotion,
    EmotionConcat(LinearMap),
    FeaturesConcat(LinearMap),
}

impl FusionMethod {
    pub fn kind(&self) -> FusionKind {
        match self {
            FusionMethod::MedianEmotion => FusionKind::Median,
            FusionMethod::EmotionConcat(_) => FusionKind::Concat,
            FusionMethod::FeaturesConcat(_) => FusionKind::Features,
        }
    }

    /// Fused per-beat conditioning; with no previous segment the target passes through.
    pub fn fuse(&self, prev: Option<&PreviousSegment>, target: &EmotionSeq) -> Result<Vec<[f64; COND_WIDTH]>> {
        let Some(prev) = prev else {
            return Ok(target.points.iter().map(|p| p.to_array()).collect());
        };
        match self {
            FusionMethod::MedianEmotion => {
                Ok(fuse_median(&align(&prev.recognized, target.len())?, target)?.points.iter().map(|p| p.to_array()).collect())
            }
            FusionMethod::EmotionConcat(w) => fuse_concat(&align(&prev.recognized, target.len())?, target, w),
            FusionMethod::FeaturesConcat(w) => fuse_features(&prev.embedding, target, w),
        }
    }

    pub fn to_params(&self) -> Result<ParamFile> {
        let mut pf = ParamFile::new("fusion", serde_json::json!({ "method": self.kind() }));
        if let FusionMethod::EmotionConcat(w) | FusionMethod::FeaturesConcat(w) = self {
            pf.push("w", &[COND_WIDTH, w.inputs], w.w.clone())?;
            pf.push("b", &[COND_WIDTH], w.b.to_vec())?;
        }
        Ok(pf)
    }

    pub fn from_params(pf: &ParamFile) -> Result<Self> {
        let kind: FusionKind = serde_json::from_value(pf.meta["method"].clone())?;
        let map = || -> Result<LinearMap> {
            let (shape, w) = pf.get("w")?;
            let (_, b) = pf.get("b")?;
            LinearMap::new(shape[1], w.to_vec(), [b[0], b[1]])
        };
        Ok(match kind {
            FusionKind::Median => FusionMethod::MedianEmotion,
            FusionKind::Concat => FusionMethod::EmotionConcat(map()?),
            FusionKind::Features => FusionMethod::FeaturesConcat(map()?),
        })
    }
}

/// Stretches or truncates a per-beat sequence to `len` by nearest index.
fn align(seq: &EmotionSeq, len: usize) -> Result<EmotionSeq> {
    if seq.is_empty() {
        return Err(Error::Empty("recognized emotion"));
    }
    if seq.len() == len {
        return Ok(seq.clone());
    }
    Ok(EmotionSeq::new((0..len).map(|i| seq.points[i * seq.len() / len]).collect()))
}

/// Fits `[embedding | target] -> 0.5 * mean(recognized) + 0.5 * target` by kernel ridge
/// regression on the embedding part; the target block is fixed at `0.5 * I`.
pub fn calibrate_features_concat(embeddings: &[Vec<f64>], recognized_means: &[[f64; 2]], lambda: f64) -> Result<LinearMap> {
    let n = embeddings.len();
    if n == 0 || n != recognized_means.len() {
        return Err(Error::LengthMismatch { expected: n, actual: recognized_means.len() });
    }
    let e = embeddings[0].len();
    if embeddings.iter().any(|v| v.len() != e) {
        return Err(Error::Shape("embeddings of differing width".into()));
    }
    let x = DMatrix::from_fn(n, e, |i, j| embeddings[i][j]);
    let mean_y: [f64; 2] = std::array::from_fn(|a| recognized_means.iter().map(|m| m[a]).sum::<f64>() / n as f64);
    let mut gram = &x * x.transpose();
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let chol = gram.cholesky().ok_or_else(|| Error::Invalid("ridge system not positive definite".into()))?;
    let mut w = vec![0.0; COND_WIDTH * (e + COND_WIDTH)];
    let mut b = [0.0; COND_WIDTH];
    for a in 0..COND_WIDTH {
        let y = DVector::from_fn(n, |i, _| 0.5 * (recognized_means[i][a] - mean_y[a]));
        let alpha = chol.solve(&y);
        let wa = x.transpose() * alpha;
        let row = &mut w[a * (e + COND_WIDTH)..(a + 1) * (e + COND_WIDTH)];
        row[..e].copy_from_slice(wa.as_slice());
        row[e + a] = 0.5;
        // center: the fitted map passes through the mean
        let fitted_mean: f64 = (0..n).map(|i| x.row(i).iter().zip(wa.iter()).map(|(p, q)| p * q).sum::<f64>()).sum::<f64>() / n as f64;
        b[a] = 0.5 * mean_y[a] - fitted_mean;
    }
    LinearMap::new(e + COND_WIDTH, w, b)
}

/// Downsampled melody tokens, each carrying the same fused-emotion vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedInput {
    pub tokens: Vec<(PitchToken, [f64; COND_WIDTH])>,
    pub stride: usize,
}

impl ConditionedInput {
    pub fn emotion(&self) -> [f64; COND_WIDTH] {
        self.tokens[0].1
    }

    pub fn anchors(&self) -> DownsampledMelody {
        DownsampledMelody { tokens: self.tokens.iter().map(|t| t.0).collect(), stride: self.stride }
    }

    pub fn emotion_va(&self) -> EmotionVA {
        let [v, a] = self.emotion();
        EmotionVA::new(v, a)
    }
}

/// Mean-pools the fused sequence once and replicates it onto every melody token.
pub fn make_conditioned_input(melody_ds: &DownsampledMelody, fused: &[[f64; COND_WIDTH]]) -> Result<ConditionedInput> {
    if melody_ds.is_empty() {
        return Err(Error::Empty("downsampled melody"));
    }
    if fused.is_empty() {
        return Err(Error::Empty("fused emotion"));
    }
    let mut mean = [0.0; COND_WIDTH];
    for f in fused {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= fused.len() as f64);
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("fused emotion"));
    }
    Ok(ConditionedInput { tokens: melody_ds.tokens.iter().map(|t| (*t, mean)).collect(), stride: melody_ds.stride })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn seq(points: &[(f64, f64)]) -> EmotionSeq {
        EmotionSeq::new(points.iter().map(|&(v, a)| EmotionVA::new(v, a)).collect())
    }

    #[test]
    fn median_examples() {
        assert_eq!(fuse_median(&seq(&[(0.0, 0.0)]), &seq(&[(1.0, 1.0)])).unwrap(), seq(&[(0.5, 0.5)]));
        let x = seq(&[(0.3, -0.7), (0.1, 0.2)]);
        assert_eq!(fuse_median(&x, &x).unwrap(), x);
        assert_eq!(fuse_median(&seq(&[(-1.0, 0.5)]), &seq(&[(0.5, -0.5)])).unwrap(), seq(&[(-0.25, 0.0)]));
        assert!(fuse_median(&x, &seq(&[(0.0, 0.0)])).is_err());
    }

    #[test]
    fn concat_with_half_identity_is_median() {
        let prev = seq(&[(0.2, -0.4), (0.9, 0.1), (-1.0, 1.0)]);
        let target = seq(&[(0.6, 0.6), (-0.3, 0.1), (1.0, -1.0)]);
        let fused = fuse_concat(&prev, &target, &LinearMap::median_init()).unwrap();
        let median = fuse_median(&prev, &target).unwrap();
        for (f, m) in fused.iter().zip(&median.points) {
            assert_abs_diff_eq!(f[0], m.valence(), epsilon = 1e-15);
            assert_abs_diff_eq!(f[1], m.arousal(), epsilon = 1e-15);
        }
        let zero = fuse_concat(&prev, &target, &LinearMap::zeros(4)).unwrap();
        assert!(zero.iter().all(|f| *f == [0.0, 0.0]));
        assert!(fuse_concat(&prev, &target, &LinearMap::zeros(3)).is_err());
    }

    #[test]
    fn features_zero_embedding_is_linear_in_target() {
        let mut w = LinearMap::zeros(10 + 2);
        for (i, x) in w.w.iter_mut().enumerate() {
            *x = (i as f64 * 0.37).sin();
        }
        w.b = [0.1, -0.2];
        let target = seq(&[(0.5, -0.5), (0.25, 0.75)]);
        let out = fuse_features(&[0.0; 10], &target, &w).unwrap();
        for (o, t) in out.iter().zip(&target.points) {
            let expect0 = w.b[0] + w.w[10] * t.valence() + w.w[11] * t.arousal();
            let expect1 = w.b[1] + w.w[22] * t.valence() + w.w[23] * t.arousal();
            assert_abs_diff_eq!(o[0], expect0, epsilon = 1e-15);
            assert_abs_diff_eq!(o[1], expect1, epsilon = 1e-15);
        }
        assert!(fuse_features(&[0.0; 9], &target, &w).is_err());
    }

    #[test]
    fn bootstrap_passes_target() {
        let target = seq(&[(0.4, 0.1), (0.2, -0.3)]);
        for m in [FusionMethod::MedianEmotion, FusionMethod::EmotionConcat(LinearMap::median_init())] {
            let out = m.fuse(None, &target).unwrap();
            assert_eq!(out, vec![[0.4, 0.1], [0.2, -0.3]]);
        }
    }

    #[test]
    fn conditioned_input() {
        let ds = DownsampledMelody { tokens: vec![PitchToken::Pitch(60), PitchToken::Rest, PitchToken::Pitch(62)], stride: 4 };
        let c = make_conditioned_input(&ds, &[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(c.tokens.len(), 3);
        assert!(c.tokens.iter().all(|t| t.1 == [0.5, 0.5]));
        let k = make_conditioned_input(&ds, &[[0.3, -0.2]; 5]).unwrap();
        assert!(k.tokens.iter().all(|t| t.1 == [0.3, -0.2]));
        assert!(make_conditioned_input(&DownsampledMelody { tokens: vec![], stride: 4 }, &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn calibration_reproduces_half_mean() {
        // embeddings linear in the recognized mean: the ridge fit recovers it closely
        let embeddings: Vec<Vec<f64>> = (0..30).map(|i| {
            let v = (i as f64 * 0.7).sin();
            let a = (i as f64 * 1.3).cos();
            vec![v, a, v + a, 1.0]
        }).collect();
        let means: Vec<[f64; 2]> = embeddings.iter().map(|e| [e[0], e[1]]).collect();
        let w = calibrate_features_concat(&embeddings, &means, 1e-8).unwrap();
        let target = seq(&[(0.8, -0.2)]);
        for (e, m) in embeddings.iter().zip(&means) {
            let out = fuse_features(e, &target, &w).unwrap()[0];
            assert_abs_diff_eq!(out[0], 0.5 * m[0] + 0.4, epsilon = 1e-5);
            assert_abs_diff_eq!(out[1], 0.5 * m[1] - 0.1, epsilon = 1e-5);
        }
    }

    #[test]
    fn params_roundtrip() {
        for m in [FusionMethod::MedianEmotion, FusionMethod::EmotionConcat(LinearMap::median_init())] {
            let back = FusionMethod::from_params(&ParamFile::from_bytes(&m.to_params().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
            assert_eq!(back, m);
        }
        assert_eq!("Features".parse::<FusionKind>().unwrap(), FusionKind::Features);
        assert!("avg".parse::<FusionKind>().is_err());
    }

    fn va() -> impl Strategy<Value = (f64, f64)> {
        (-1.0f64..=1.0, -1.0f64..=1.0)
    }

    proptest! {
        #[test]
        fn median_halves_distance(p in va(), t in va()) {
            let prev = seq(&[p]);
            let target = seq(&[t]);
            let f = fuse_median(&prev, &target).unwrap().points[0];
            let d_fused = f.distance(&target.points[0]);
            let d_prev = prev.points[0].distance(&target.points[0]);
            prop_assert!((d_fused - 0.5 * d_prev).abs() <= 1e-12);
        }

        #[test]
        fn conditioning_is_permutation_invariant(mut fused in proptest::collection::vec(va(), 1..20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let ds = DownsampledMelody { tokens: vec![PitchToken::Pitch(60); 4], stride: 4 };
            let a: Vec<[f64; 2]> = fused.iter().map(|&(v, x)| [v, x]).collect();
            fused.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b: Vec<[f64; 2]> = fused.iter().map(|&(v, x)| [v, x]).collect();
            let ca = make_conditioned_input(&ds, &a).unwrap().emotion();
            let cb = make_conditioned_input(&ds, &b).unwrap().emotion();
            prop_assert!((ca[0] - cb[0]).abs() < 1e-12 && (ca[1] - cb[1]).abs() < 1e-12);
        }
    }
}
