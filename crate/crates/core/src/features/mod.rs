//! The four emotion-related music theory features computed per segment.

pub mod contour;
pub mod form;
pub mod harmonic;
pub mod rhythm;

use serde::{Deserialize, Serialize};

pub use contour::{contour_factor, ContourFactorVec};
pub use form::{form_factor, FormCache, FormConfig, FormFactorVec, Repetition, FORM_CACHE_BARS};
pub use harmonic::{circle_position, harmonic_color, harmonic_color_vec, k_value};
pub use rhythm::{rhythm_pattern, ReattackRule, RhythmPattern};

use crate::model::Segment;

/// Width of [`TheoryFeatures::flatten`].
pub const FEATURE_WIDTH: usize = HC_WIDTH + CF_WIDTH + FF_WIDTH + RP_WIDTH;
const HC_WIDTH: usize = 16;
const CF_WIDTH: usize = 7;
const FF_WIDTH: usize = 7;
const RP_WIDTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureGroup {
    HarmonicColor,
    RhythmPattern,
    ContourFactor,
    FormFactor,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] =
        [FeatureGroup::HarmonicColor, FeatureGroup::RhythmPattern, FeatureGroup::ContourFactor, FeatureGroup::FormFactor];

    fn range(self) -> std::ops::Range<usize> {
        let cf = HC_WIDTH;
        let ff = cf + CF_WIDTH;
        let rp = ff + FF_WIDTH;
        match self {
            FeatureGroup::HarmonicColor => 0..cf,
            FeatureGroup::ContourFactor => cf..ff,
            FeatureGroup::FormFactor => ff..rp,
            FeatureGroup::RhythmPattern => rp..FEATURE_WIDTH,
        }
    }
}

/// Feature groups to zero out before the recognizer sees them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub disabled: Vec<FeatureGroup>,
}

impl FeatureMask {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn without(group: FeatureGroup) -> Self {
        FeatureMask { disabled: vec![group] }
    }

    pub fn apply(&self, v: &mut [f64]) {
        for g in &self.disabled {
            v[g.range()].iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryFeatures {
    pub harmonic_color: Vec<f64>,
    pub rhythm: RhythmPattern,
    pub contour: ContourFactorVec,
    pub form: FormFactorVec,
}

/// Computes all four features and appends `seg` to `cache`.
pub fn features(seg: &Segment, cache: &mut FormCache, cfg: &FormConfig) -> TheoryFeatures {
    TheoryFeatures {
        harmonic_color: harmonic_color_vec(&seg.harmony, seg.tonality),
        rhythm: rhythm_pattern(&seg.melody, cfg.reattack),
        contour: contour_factor(seg),
        form: form_factor(seg, cache, cfg),
    }
}

const DURATION_BINS: [u32; 6] = [1, 2, 3, 5, 8, u32::MAX];

impl TheoryFeatures {
    /// Fixed-width numeric vector, roughly unit scaled.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_WIDTH);
        v.extend(self.harmonic_color.iter().copied().chain(std::iter::repeat(0.0)).take(HC_WIDTH));

        let c = &self.contour;
        if c.valid {
            v.extend([
                (c.melody_max as f64 - 60.0) / 24.0,
                (c.chord_min as f64 - 48.0) / 24.0,
                c.melody_trend as f64 / 24.0,
                c.chord_trend as f64 / 24.0,
                c.melody_concavity / 12.0,
                c.chord_concavity / 12.0,
                1.0,
            ]);
        } else {
            v.extend([0.0; CF_WIDTH]);
        }

        let f = &self.form;
        let span = FORM_CACHE_BARS as f64;
        v.extend([
            f.melody_rep.sign as f64,
            f.melody_rep.interval as f64 / span,
            f.chord_rep.sign as f64,
            f.chord_rep.interval as f64 / span,
            f.tonality_transform as f64,
            f.zone_transform as f64,
            f.rhythm_difference as f64,
        ]);

        let total = self.rhythm.total().max(1) as f64;
        let notes: Vec<u32> = self.rhythm.entries.iter().filter(|e| e.0.is_some()).map(|e| e.1).collect();
        let rest: u32 = self.rhythm.entries.iter().filter(|e| e.0.is_none()).map(|e| e.1).sum();
        let n = notes.len().max(1) as f64;
        v.push(self.rhythm.entries.len() as f64 / total);
        v.push(notes.len() as f64 / total);
        v.push(rest as f64 / total);
        v.push(notes.iter().sum::<u32>() as f64 / n / 16.0);
        let mut hist = [0.0; DURATION_BINS.len()];
        for d in &notes {
            let bin = DURATION_BINS.iter().position(|&hi| *d <= hi).unwrap();
            hist[bin] += 1.0 / n;
        }
        v.extend(hist);
        debug_assert_eq!(v.len(), FEATURE_WIDTH);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use crate::synth::random_segment;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundle_is_deterministic_and_fixed_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = FormConfig::default();
        for _ in 0..50 {
            let seg = random_segment(&mut rng, Tonality::major(2), TimeSignature::FourFour);
            let mut c1 = FormCache::new();
            let mut c2 = FormCache::new();
            let a = features(&seg, &mut c1, &cfg);
            let b = features(&seg, &mut c2, &cfg);
            assert_eq!(a, b);
            assert_eq!(a.flatten().len(), FEATURE_WIDTH);
            assert!(a.flatten().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn mask_zeroes_one_group() {
        let mut v = vec![1.0; FEATURE_WIDTH];
        FeatureMask::without(FeatureGroup::FormFactor).apply(&mut v);
        assert_eq!(v.iter().filter(|x| **x == 0.0).count(), FF_WIDTH);
        let mut w = vec![1.0; FEATURE_WIDTH];
        FeatureMask::all().apply(&mut w);
        assert!(w.iter().all(|x| *x == 1.0));
    }

    #[test]
    fn two_four_pads_harmonic_color() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seg = random_segment(&mut rng, Tonality::minor(9), TimeSignature::TwoFour);
        let f = features(&seg, &mut FormCache::new(), &FormConfig::default());
        assert_eq!(f.harmonic_color.len(), 8);
        assert_eq!(f.flatten().len(), FEATURE_WIDTH);
    }
}
