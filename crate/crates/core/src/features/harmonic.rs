//! Harmonic color: signed circle-of-fifths distance between two chords.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{Chord, HarmonySeq, Tonality};

/// Largest position difference on the circle of fifths.
pub const MAX_CIRCLE_DISTANCE: f64 = 11.0;

/// Clockwise position on the circle of fifths, C = 0, G = 1, ..., F = 11.
pub fn circle_position(pitch_class: u8) -> u8 {
    (pitch_class % 12) * 7 % 12
}

fn positions(chord: &Chord) -> Result<BTreeSet<u8>> {
    if chord.is_rest() {
        return Err(Error::Empty("chord"));
    }
    Ok(chord.pitch_classes().into_iter().collect())
}

/// Mean circle position of a chord's pitch classes.
pub fn k_value(chord: &Chord) -> Result<f64> {
    let pcs = positions(chord)?;
    let sum: u32 = pcs.iter().map(|&pc| circle_position(pc) as u32).sum();
    Ok(sum as f64 / pcs.len() as f64)
}

/// Harmonic color of `a` relative to `b`, in [-1, 1].
///
/// Sign follows `K(a) - K(b)`. Magnitude sums `|pos(x) - pos(y)|` over every
/// pitch class `x` of `a` absent from `b` and every `y` of `b`, divided by
/// `n' * m * 11`, the largest value that sum can take.
pub fn harmonic_color(a: &Chord, b: &Chord) -> Result<f64> {
    let pa = positions(a)?;
    let pb = positions(b)?;
    let k_diff = k_value(a)? - k_value(b)?;
    let unshared: Vec<u8> = pa.difference(&pb).copied().collect();
    if unshared.is_empty() || k_diff == 0.0 {
        return Ok(0.0);
    }
    let raw: u32 = unshared
        .iter()
        .flat_map(|&x| pb.iter().map(move |&y| (circle_position(x) as i32 - circle_position(y) as i32).unsigned_abs()))
        .sum();
    let norm = unshared.len() as f64 * pb.len() as f64 * MAX_CIRCLE_DISTANCE;
    Ok(k_diff.signum() * raw as f64 / norm)
}

/// Reference chord of a tonality: its tonic triad.
pub fn reference_chord(t: Tonality) -> Chord {
    t.tonic_triad()
}

/// Harmonic color of every chord against the tonality's reference; rests map to 0.
pub fn harmonic_color_vec(harmony: &HarmonySeq, tonality: Tonality) -> Vec<f64> {
    let reference = reference_chord(tonality);
    harmony
        .chords
        .iter()
        .map(|c| if c.is_rest() { 0.0 } else { harmonic_color(c, &reference).expect("non-rest chords") })
        .collect()
}
