//! Harmonizing heterogeneous emotion annotations into valence-arousal in [-1, 1].

use std::collections::HashMap;
use std::io::Read;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EmotionSeq, EmotionVA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteEmotionLabel {
    pub name: &'static str,
    pub anchor: EmotionVA,
    pub spread: f64,
}

const RING_RADIUS: f64 = 0.75;
const INNER: f64 = 0.35;
const DEFAULT_SPREAD: f64 = 0.1;

/// Twelve labels around the circumplex, counter-clockwise from 0 degrees.
const RING: [&str; 12] = [
    "pleased", "happy", "excited", "aroused", "tense", "angry", "distressed", "sad", "depressed", "tired", "calm",
    "relaxed",
];

/// Interior labels in quadrant order (+,+), (-,+), (-,-), (+,-).
const INTERIOR: [&str; 4] = ["cheerful", "anxious", "gloomy", "serene"];

/// The 16-label anchor table.
///
/// Twelve anchors sit every 30 degrees on a circle of radius 0.75, four
/// interior anchors at (+-0.35, +-0.35). The layout is a reconstruction:
/// only its qualitative shape is published, not per-label coordinates.
pub fn label_table() -> Vec<DiscreteEmotionLabel> {
    let ring = RING.iter().enumerate().map(|(i, &name)| {
        let theta = (i as f64 * 30.0).to_radians();
        DiscreteEmotionLabel {
            name,
            anchor: EmotionVA::new(RING_RADIUS * theta.cos(), RING_RADIUS * theta.sin()),
            spread: DEFAULT_SPREAD,
        }
    });
    let signs = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    let inner = INTERIOR.iter().zip(signs).map(|(&name, (sv, sa))| DiscreteEmotionLabel {
        name,
        anchor: EmotionVA::new(sv * INNER, sa * INNER),
        spread: DEFAULT_SPREAD,
    });
    ring.chain(inner).collect()
}

pub fn lookup_label(name: &str) -> Result<DiscreteEmotionLabel> {
    let key = name.trim().to_ascii_lowercase();
    label_table().into_iter().find(|l| l.name == key).ok_or_else(|| Error::UnknownLabel(name.to_string()))
}

/// Four-quadrant labels (Q1..Q4) mapped to quadrant centers.
pub fn quadrant_anchor(name: &str) -> Result<EmotionVA> {
    let (v, a) = match name.trim().to_ascii_uppercase().as_str() {
        "Q1" => (0.5, 0.5),
        "Q2" => (-0.5, 0.5),
        "Q3" => (-0.5, -0.5),
        "Q4" => (0.5, -0.5),
        _ => return Err(Error::UnknownLabel(name.to_string())),
    };
    Ok(EmotionVA::new(v, a))
}

/// Draws from a normal of standard deviation `spread` around `anchor`, clamped.
pub fn sample_around(anchor: EmotionVA, spread: f64, rng: &mut impl Rng) -> EmotionVA {
    if spread <= 0.0 {
        return anchor;
    }
    let n = Normal::new(0.0, spread).expect("positive spread");
    EmotionVA::new(anchor.valence() + n.sample(rng), anchor.arousal() + n.sample(rng))
}

/// Maps a [0, 1] annotation to [-1, 1]; out-of-range input is clamped.
pub fn normalize_range(v: f64) -> f64 {
    let x = if (0.0..=1.0).contains(&v) {
        v
    } else {
        warn!("annotation {v} outside [0, 1], clamped");
        v.clamp(0.0, 1.0)
    };
    2.0 * x - 1.0
}

/// Drops tension arousal; energy arousal becomes arousal.
pub fn reduce_3dim(energy_arousal: f64, _tension_arousal: f64, valence: f64) -> EmotionVA {
    EmotionVA::new(valence, energy_arousal)
}

/// One raw annotation on a source's timeline.
#[derive(Debug, Clone, PartialEq)]
pub enum RawLabel {
    /// Already in [-1, 1].
    Va { valence: f64, arousal: f64 },
    /// Both axes in [0, 1].
    VaUnit { valence: f64, arousal: f64 },
    /// Energy arousal, tension arousal, valence.
    ThreeDim { energy: f64, tension: f64, valence: f64 },
    Discrete(String),
    Quadrant(String),
}

impl RawLabel {
    /// Converts to the common space. Discrete labels resolve to their anchor.
    pub fn to_va(&self) -> Result<EmotionVA> {
        Ok(match self {
            RawLabel::Va { valence, arousal } => EmotionVA::new(*valence, *arousal),
            RawLabel::VaUnit { valence, arousal } => EmotionVA::new(normalize_range(*valence), normalize_range(*arousal)),
            RawLabel::ThreeDim { energy, tension, valence } => reduce_3dim(*energy, *tension, *valence),
            RawLabel::Discrete(name) => lookup_label(name)?.anchor,
            RawLabel::Quadrant(q) => quadrant_anchor(q)?,
        })
    }
}

/// A timeline of (seconds, emotion) points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTimeline {
    pub points: Vec<(f64, EmotionVA)>,
}

impl LabelTimeline {
    pub fn new(mut points: Vec<(f64, EmotionVA)>) -> Self {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        LabelTimeline { points }
    }

    /// Step-hold value at time `t`; before the first point the first value applies.
    pub fn at(&self, t: f64) -> Option<EmotionVA> {
        let idx = self.points.partition_point(|p| p.0 <= t);
        self.points.get(idx.saturating_sub(1)).map(|p| p.1)
    }

    /// Resamples onto `beats` beats starting at `first_beat`, at the given tempo.
    pub fn align(&self, first_beat: usize, beats: usize, bpm: f64) -> Option<EmotionSeq> {
        let sec_per_beat = 60.0 / bpm;
        (first_beat..first_beat + beats)
            .map(|b| self.at(b as f64 * sec_per_beat))
            .collect::<Option<Vec<_>>>()
            .map(EmotionSeq::new)
    }
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    file: String,
    time: f64,
    kind: String,
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    label: Option<String>,
}

impl LabelRow {
    fn raw(&self) -> Result<RawLabel> {
        let num = |x: Option<f64>, col: &str| x.ok_or_else(|| Error::Invalid(format!("{} label needs column {col}", self.kind)));
        let name = || self.label.clone().ok_or_else(|| Error::Invalid(format!("{} label needs column label", self.kind)));
        Ok(match self.kind.to_ascii_lowercase().as_str() {
            "va" => RawLabel::Va { valence: num(self.a, "a")?, arousal: num(self.b, "b")? },
            "va01" => RawLabel::VaUnit { valence: num(self.a, "a")?, arousal: num(self.b, "b")? },
            "3dim" => RawLabel::ThreeDim { energy: num(self.a, "a")?, tension: num(self.b, "b")?, valence: num(self.c, "c")? },
            "discrete" => RawLabel::Discrete(name()?),
            "quadrant" => RawLabel::Quadrant(name()?),
            other => return Err(Error::Invalid(format!("unknown label kind {other:?}"))),
        })
    }
}

/// Reads label timelines keyed by file name from CSV with header
/// `file,time,kind,a,b,c,label`. `kind` is one of `va` (a = valence, b = arousal,
/// in [-1, 1]), `va01` (same in [0, 1]), `3dim` (a = energy, b = tension, c = valence),
/// `discrete` or `quadrant` (name in `label`). Bad rows are skipped with a warning.
pub fn read_label_csv(input: impl Read) -> Result<HashMap<String, LabelTimeline>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(input);
    let mut points: HashMap<String, Vec<(f64, EmotionVA)>> = HashMap::new();
    for (i, row) in reader.deserialize::<LabelRow>().enumerate() {
        let parsed = row.map_err(|e| Error::Invalid(e.to_string())).and_then(|r| Ok((r.raw()?.to_va()?, r)));
        match parsed {
            Ok((va, r)) => points.entry(r.file).or_default().push((r.time, va)),
            Err(e) => warn!("label row {}: {e}", i + 2),
        }
    }
    Ok(points.into_iter().map(|(k, v)| (k, LabelTimeline::new(v))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_shape() {
        let t = label_table();
        assert_eq!(t.len(), 16);
        for l in &t {
            assert!(l.spread > 0.0);
            assert!(l.anchor.valence().abs() <= 1.0 && l.anchor.arousal().abs() <= 1.0);
        }
        let ring = t.iter().take(12).all(|l| (l.anchor.valence().hypot(l.anchor.arousal()) - 0.75).abs() < 1e-12);
        assert!(ring);
        assert_eq!(lookup_label("Serene").unwrap().anchor, EmotionVA::new(0.35, -0.35));
        assert!(matches!(lookup_label("bogus"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn quadrants() {
        assert_eq!(quadrant_anchor("Q1").unwrap(), EmotionVA::new(0.5, 0.5));
        assert_eq!(quadrant_anchor("q3").unwrap(), EmotionVA::new(-0.5, -0.5));
        assert!(quadrant_anchor("Q5").is_err());
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = lookup_label("happy").unwrap().anchor;
        assert_eq!(sample_around(a, 0.0, &mut rng), a);
        let s1 = sample_around(a, 0.1, &mut ChaCha8Rng::seed_from_u64(42));
        let s2 = sample_around(a, 0.1, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(s1, s2);
        assert!(s1.valence().abs() <= 1.0 && s1.arousal().abs() <= 1.0);
        assert!(s1.distance(&a) < 0.6);
    }

    #[test]
    fn csv_labels() {
        let text = "file,time,kind,a,b,c,label\n\
                    a.mid,0,va,0.5,-0.5,,\n\
                    a.mid,4,va01,1.0,0.5,,\n\
                    b.mid,0,discrete,,,,happy\n\
                    b.mid,1,quadrant,,,,Q3\n\
                    c.mid,0,bogus,,,,\n";
        let t = read_label_csv(text.as_bytes()).unwrap();
        assert_eq!(t["a.mid"].at(1.0), Some(EmotionVA::new(0.5, -0.5)));
        assert_eq!(t["a.mid"].at(5.0), Some(EmotionVA::new(1.0, 0.0)));
        assert_eq!(t["b.mid"].at(0.0), Some(lookup_label("happy").unwrap().anchor));
        assert_eq!(t["b.mid"].at(2.0), Some(EmotionVA::new(-0.5, -0.5)));
        assert!(!t.contains_key("c.mid"));
    }

    #[test]
    fn range_normalization() {
        assert_eq!(normalize_range(0.5), 0.0);
        assert_eq!(normalize_range(0.0), -1.0);
        assert_eq!(normalize_range(0.75), 0.5);
        assert_eq!(normalize_range(1.7), 1.0);
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert_eq!(normalize_range(x), 2.0 * x - 1.0);
        }
    }

    #[test]
    fn three_dim_reduction() {
        assert_eq!(reduce_3dim(0.3, 0.9, 0.2), EmotionVA::new(0.2, 0.3));
        assert_eq!(reduce_3dim(0.0, 0.0, 0.0), EmotionVA::new(0.0, 0.0));
        assert_eq!(reduce_3dim(1.0, -1.0, 1.0), EmotionVA::new(1.0, 1.0));
    }

    #[test]
    fn step_hold_alignment() {
        let tl = LabelTimeline::new(vec![(0.0, EmotionVA::new(0.1, 0.1)), (1.2, EmotionVA::new(0.9, -0.9))]);
        // 120 bpm: beats at 0.0, 0.5, 1.0, 1.5
        let seq = tl.align(0, 4, 120.0).unwrap();
        assert_eq!(seq.points[2], EmotionVA::new(0.1, 0.1));
        assert_eq!(seq.points[3], EmotionVA::new(0.9, -0.9));
        assert!(LabelTimeline::default().align(0, 4, 120.0).is_none());
    }
}
