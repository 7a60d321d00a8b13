//! Objective metrics: consonance, chord entropy and tonal-distance coherence,
//! their overall score, similarity to the original, and real-time emotion fit.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmotionVA, HarmonySeq, MelodyGrid, Segment, SLOTS_PER_BEAT};

pub const C_OVERALL: f64 = 14.0;
pub const C_FIT: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Score of `(melody - chord) mod 12`: unison, thirds, fifth and sixths +1, fourth 0, rest -1.
pub const PCS_TABLE: [i8; 12] = [1, -1, -1, 1, 1, 0, -1, 1, 1, 1, -1, -1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub c_overall: f64,
    pub c_fit: f64,
    pub pcs_table: [i8; 12],
    /// Compare exact pitches instead of pitch classes in `similarity`.
    pub octave_strict: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { c_overall: C_OVERALL, c_fit: C_FIT, pcs_table: PCS_TABLE, octave_strict: false }
    }
}

/// A metric value and whether it was defined on its input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub defined: bool,
}

impl Score {
    fn undefined() -> Self {
        Score { value: 0.0, defined: false }
    }
}

/// Mean over sounding sixteenths of the best interval score against the concurrent chord.
/// Slots over a silent chord are skipped.
pub fn pitch_consonance_score(seg: &Segment) -> Score {
    pitch_consonance_score_with(seg, &PCS_TABLE)
}

pub fn pitch_consonance_score_with(seg: &Segment, table: &[i8; 12]) -> Score {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (s, p) in seg.melody.sounding().iter().enumerate() {
        let (Some(p), Some(chord)) = (p, seg.harmony.chords.get(s / SLOTS_PER_BEAT)) else { continue };
        if chord.is_rest() {
            continue;
        }
        let best = chord.notes().iter().map(|&c| table[(*p as i32 - c as i32).rem_euclid(12) as usize]).max().unwrap();
        sum += best as f64;
        n += 1;
    }
    if n == 0 {
        Score::undefined()
    } else {
        Score { value: sum / n as f64, defined: true }
    }
}

pub fn pcc(prev: &Segment, cur: &Segment) -> f64 {
    (pitch_consonance_score(prev).value - pitch_consonance_score(cur).value).abs()
}

/// Natural-log entropy of the distinct pitch-class-set histogram; silent beats are ignored.
pub fn chord_histogram_entropy(harmony: &HarmonySeq) -> f64 {
    let mut hist: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    for c in harmony.chords.iter().filter(|c| !c.is_rest()) {
        *hist.entry(c.pitch_classes().into_iter().collect()).or_default() += 1;
    }
    entropy(hist.values().copied())
}

fn entropy(counts: impl Iterator<Item = usize> + Clone) -> f64 {
    let total: usize = counts.clone().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

pub fn cec(prev: &Segment, cur: &Segment) -> f64 {
    (chord_histogram_entropy(&prev.harmony) - chord_histogram_entropy(&cur.harmony)).abs()
}

/// Six-dimensional tonal centroid: fifths, minor-thirds (radius 1) and major-thirds (radius 0.5) circles.
pub fn tonal_centroid(dist: &[f64; 12]) -> Result<[f64; 6]> {
    if dist.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::Invalid("pitch-class distribution must be finite and nonnegative".into()));
    }
    let total: f64 = dist.iter().sum();
    if total == 0.0 {
        return Err(Error::Empty("pitch-class distribution"));
    }
    let circles = [(7.0 * PI / 6.0, 1.0), (3.0 * PI / 2.0, 1.0), (2.0 * PI / 3.0, 0.5)];
    let mut out = [0.0; 6];
    for (pc, &w) in dist.iter().enumerate() {
        let w = w / total;
        for (k, (step, r)) in circles.iter().enumerate() {
            let angle = pc as f64 * step;
            out[2 * k] += w * r * angle.sin();
            out[2 * k + 1] += w * r * angle.cos();
        }
    }
    Ok(out)
}

/// Mean over beats with sounding melody of the distance between melody and chord centroids.
/// Beats with a silent chord are skipped as well.
pub fn mctd(seg: &Segment) -> Score {
    let sounding = seg.melody.sounding();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (b, chord) in seg.harmony.chords.iter().enumerate() {
        let mut mel = [0.0; 12];
        for p in sounding.iter().skip(b * SLOTS_PER_BEAT).take(SLOTS_PER_BEAT).flatten() {
            mel[(p % 12) as usize] += 1.0;
        }
        if chord.is_rest() || mel.iter().all(|x| *x == 0.0) {
            continue;
        }
        let mut ch = [0.0; 12];
        for pc in chord.pitch_classes() {
            ch[pc as usize] += 1.0;
        }
        let (Ok(a), Ok(c)) = (tonal_centroid(&mel), tonal_centroid(&ch)) else { continue };
        sum += a.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        n += 1;
    }
    if n == 0 {
        Score::undefined()
    } else {
        Score { value: sum / n as f64, defined: true }
    }
}

pub fn mctc(prev: &Segment, cur: &Segment) -> f64 {
    (mctd(prev).value - mctd(cur).value).abs()
}

pub fn overall_coherence(pcc: f64, cec: f64, mctc: f64) -> f64 {
    overall_coherence_with(C_OVERALL, pcc, cec, mctc)
}

pub fn overall_coherence_with(c_overall: f64, pcc: f64, cec: f64, mctc: f64) -> f64 {
    c_overall - (pcc + cec + mctc)
}

/// `10 x` the fraction of sixteenth slots whose sounding pitch class agrees; rests match rests.
pub fn similarity(original: &[Segment], arranged: &[Segment]) -> Result<f64> {
    similarity_with(original, arranged, false)
}

pub fn similarity_with(original: &[Segment], arranged: &[Segment], octave_strict: bool) -> Result<f64> {
    if original.len() != arranged.len() {
        return Err(Error::LengthMismatch { expected: original.len(), actual: arranged.len() });
    }
    let a = MelodyGrid::concat(original.iter().map(|s| &s.melody));
    let b = MelodyGrid::concat(arranged.iter().map(|s| &s.melody));
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), actual: b.len() });
    }
    if a.is_empty() {
        return Err(Error::Empty("melody streams"));
    }
    let key = |p: Option<u8>| if octave_strict { p } else { p.map(|p| p % 12) };
    let same = a.sounding().iter().zip(b.sounding()).filter(|(x, y)| key(**x) == key(*y)).count();
    Ok(10.0 * same as f64 / a.len() as f64)
}

/// Per-step distance between target and recognized emotion.
pub fn fit_trace(target: &[EmotionVA], recognized: &[EmotionVA]) -> Result<Vec<f64>> {
    if target.len() != recognized.len() {
        return Err(Error::LengthMismatch { expected: target.len(), actual: recognized.len() });
    }
    Ok(target.iter().zip(recognized).map(|(t, r)| t.distance(r)).collect())
}

pub fn realtime_fit(target: &[EmotionVA], recognized: &[EmotionVA]) -> Result<f64> {
    realtime_fit_with(C_FIT, target, recognized)
}

pub fn realtime_fit_with(c_fit: f64, target: &[EmotionVA], recognized: &[EmotionVA]) -> Result<f64> {
    let d = fit_trace(target, recognized)?;
    if d.is_empty() {
        return Err(Error::Empty("emotion trajectory"));
    }
    Ok(c_fit - d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pcc: f64,
    pub cec: f64,
    pub mctc: f64,
    pub overall: f64,
    pub similarity: f64,
    pub rtfit: f64,
    pub pcc_trace: Vec<f64>,
    pub cec_trace: Vec<f64>,
    pub mctc_trace: Vec<f64>,
    pub fit_trace: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scores an arranged stream: coherence over consecutive arranged segments,
/// similarity against the original, and fit of recognized to target emotion per step.
pub fn evaluate(
    original: &[Segment],
    arranged: &[Segment],
    target: &[EmotionVA],
    recognized: &[EmotionVA],
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    if arranged.is_empty() {
        return Err(Error::Empty("arranged segments"));
    }
    let pairs = || arranged.windows(2);
    let pcs: Vec<f64> = arranged.iter().map(|s| pitch_consonance_score_with(s, &cfg.pcs_table).value).collect();
    let pcc_trace: Vec<f64> = pcs.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    let cec_trace: Vec<f64> = pairs().map(|w| cec(&w[0], &w[1])).collect();
    let mctc_trace: Vec<f64> = pairs().map(|w| mctc(&w[0], &w[1])).collect();
    let fit = fit_trace(target, recognized)?;
    let (p, c, m) = (mean(&pcc_trace), mean(&cec_trace), mean(&mctc_trace));
    Ok(MetricReport {
        pcc: p,
        cec: c,
        mctc: m,
        overall: overall_coherence_with(cfg.c_overall, p, c, m),
        similarity: similarity_with(original, arranged, cfg.octave_strict)?,
        rtfit: realtime_fit_with(cfg.c_fit, target, recognized)?,
        pcc_trace,
        cec_trace,
        mctc_trace,
        fit_trace: fit,
    })
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let rows = [
            ("PCC", self.pcc),
            ("CEC", self.cec),
            ("MCTC", self.mctc),
            ("overall", self.overall),
            ("similarity", self.similarity),
            ("rtfit", self.rtfit),
        ];
        rows.iter().map(|(k, v)| format!("{k:<12}{v:>8.4}\n")).collect()
    }
}
