use serde::{Deserialize, Serialize};

use crate::model::Segment;

/// Melodic and bass-line shape over one segment.
///
/// The chord dimension follows the lowest note of each sounding chord.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContourFactorVec {
    pub melody_max: u8,
    pub chord_min: u8,
    pub melody_trend: i32,
    pub chord_trend: i32,
    pub melody_concavity: f64,
    pub chord_concavity: f64,
    /// False when the melody is silent or every chord is a rest.
    pub valid: bool,
}

fn trend_and_concavity(line: &[u8]) -> (i32, f64) {
    let first = line[0] as f64;
    let last = line[line.len() - 1] as f64;
    let mean = line.iter().map(|&p| p as f64).sum::<f64>() / line.len() as f64;
    (line[line.len() - 1] as i32 - line[0] as i32, mean - (first + last) / 2.0)
}

pub fn contour_factor(seg: &Segment) -> ContourFactorVec {
    let melody: Vec<u8> = seg.melody.notes().iter().map(|n| n.pitch).collect();
    let bass: Vec<u8> = seg.harmony.chords.iter().filter_map(|c| c.lowest_note()).collect();
    if melody.is_empty() || bass.is_empty() {
        return ContourFactorVec::default();
    }
    let (melody_trend, melody_concavity) = trend_and_concavity(&melody);
    let (chord_trend, chord_concavity) = trend_and_concavity(&bass);
    ContourFactorVec {
        melody_max: *melody.iter().max().unwrap(),
        chord_min: *bass.iter().min().unwrap(),
        melody_trend,
        chord_trend,
        melody_concavity,
        chord_concavity,
        valid: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn seg(notes: &[u8], chord: Chord) -> Segment {
        let dur = 64 / notes.len() as u32;
        let ns: Vec<Note> = notes.iter().enumerate().map(|(i, &p)| Note::new(p, i as u32 * dur, dur)).collect();
        Segment::new(
            encode_melody(&ns, 64).unwrap(),
            HarmonySeq::new(vec![chord; 16]),
            Tonality::major(0),
            TimeSignature::FourFour,
        )
        .unwrap()
    }

    #[test]
    fn constant_lines_are_flat() {
        let cf = contour_factor(&seg(&[60], Chord::new([48]).unwrap()));
        assert!(cf.valid);
        assert_eq!((cf.melody_trend, cf.chord_trend), (0, 0));
        assert_eq!((cf.melody_concavity, cf.chord_concavity), (0.0, 0.0));
        assert_eq!((cf.melody_max, cf.chord_min), (60, 48));
    }

    #[test]
    fn trend_is_last_minus_first() {
        let cf = contour_factor(&seg(&[60, 62, 64, 65], Chord::new([48]).unwrap()));
        assert_eq!(cf.melody_trend, 5);
        assert_eq!(cf.melody_max, 65);
    }

    #[test]
    fn concavity_of_arch() {
        let cf = contour_factor(&seg(&[60, 64, 60, 60], Chord::new([48]).unwrap()));
        assert!((cf.melody_concavity - (244.0 / 4.0 - 60.0)).abs() < 1e-12);
        let s = Segment::new(
            encode_melody(&[Note::new(60, 0, 16), Note::new(64, 16, 16), Note::new(60, 32, 32)], 64).unwrap(),
            HarmonySeq::new(vec![Chord::new([48]).unwrap(); 16]),
            Tonality::major(0),
            TimeSignature::FourFour,
        )
        .unwrap();
        assert!((contour_factor(&s).melody_concavity - (184.0 / 3.0 - 60.0)).abs() < 1e-12);
    }

    #[test]
    fn silent_melody_is_flagged() {
        let s = Segment::new(
            MelodyGrid::rest(64),
            HarmonySeq::new(vec![Chord::new([48]).unwrap(); 16]),
            Tonality::major(0),
            TimeSignature::FourFour,
        )
        .unwrap();
        let cf = contour_factor(&s);
        assert!(!cf.valid);
        assert_eq!(cf.melody_trend, 0);
    }
}
