//! Deterministic emotion-sensitive generator: arousal sets melodic density,
//! valence selects the harmonic function set.
//!
//! The density formula, the function tables and the +-0.33 band edges are
//! configuration of this backend, not published values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::harmonic_color;
use crate::model::{
    encode_melody, voice_triad, Chord, DownsampledMelody, EmotionVA, HarmonySeq, MelodyGrid, Mode, Note, PitchToken,
    Segment, TimeSignature, Tonality, MAX_PITCH, SLOTS_PER_BEAT,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    /// Valence beyond +-band picks the positive or negative function set.
    pub valence_band: f64,
    /// Octave of the accompaniment voicing root.
    pub chord_base: u8,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig { valence_band: 0.33, chord_base: 48 }
    }
}

/// Notes per beat for an arousal in [-1, 1]: `ceil(1 + 3 (a + 1) / 2)`.
pub fn density(arousal: f64) -> usize {
    let a = arousal.clamp(-1.0, 1.0);
    ((1.0 + 3.0 * (a + 1.0) / 2.0).ceil() as usize).clamp(1, 4)
}

/// Scale pitches strictly between `from` and `to`, ordered from `from` toward `to`.
fn passing_tones(from: u8, to: u8, t: Tonality) -> Vec<u8> {
    if from < to {
        (from + 1..to).filter(|&p| t.contains(p)).collect()
    } else {
        (to + 1..from).rev().filter(|&p| t.contains(p)).collect()
    }
}

/// Nearest scale pitch above `p`, or below when there is no room.
fn neighbor(p: u8, t: Tonality) -> u8 {
    (p + 1..=MAX_PITCH.min(p + 2)).find(|&q| t.contains(q)).or_else(|| (p.saturating_sub(2)..p).rev().find(|&q| t.contains(q))).unwrap_or(p)
}

/// Fills each anchor span with `density(arousal) * beats` notes: the anchor on the
/// span onset, then re-attacks, then passing tones toward the next anchor (or a
/// neighbor tone when there are none). Rest anchors stay silent and off-scale
/// anchors are held through their span.
pub fn infill_melody(anchors: &DownsampledMelody, emotion: EmotionVA, tonality: Tonality) -> Result<MelodyGrid> {
    let stride = anchors.stride;
    if stride == 0 || !stride.is_multiple_of(SLOTS_PER_BEAT) {
        return Err(Error::Invalid(format!("anchor stride {stride} is not a whole number of beats")));
    }
    let per_beat = density(emotion.arousal());
    let count = (per_beat * stride / SLOTS_PER_BEAT).min(stride);
    let pitches = anchors.pitches();
    let mut notes = Vec::new();
    for (i, anchor) in pitches.iter().enumerate() {
        let Some(p) = *anchor else { continue };
        let start = (i * stride) as u32;
        if !tonality.contains(p) || count == 1 {
            notes.push(Note::new(p, start, stride as u32));
            continue;
        }
        let k = count - 1;
        let next = pitches.get(i + 1).copied().flatten();
        let passing = next.map(|q| passing_tones(p, q, tonality)).unwrap_or_default();
        let mut fill: Vec<u8> = Vec::with_capacity(k);
        if passing.is_empty() {
            fill.extend(std::iter::repeat_n(p, k));
            if k >= 2 {
                *fill.last_mut().unwrap() = neighbor(p, tonality);
            }
        } else {
            let used = k.min(passing.len());
            fill.extend(std::iter::repeat_n(p, k - used));
            // evenly spread picks keep the line moving toward the next anchor
            fill.extend((0..used).map(|j| passing[j * passing.len() / used]));
        }
        let base = (stride / count) as u32;
        let anchor_len = stride as u32 - base * k as u32;
        notes.push(Note::new(p, start, anchor_len));
        for (j, q) in fill.into_iter().enumerate() {
            notes.push(Note::new(q, start + anchor_len + base * j as u32, base));
        }
    }
    encode_melody(&notes, pitches.len() * stride)
}

/// Scale degrees (0-based) eligible for a valence.
pub fn function_set(valence: f64, mode: Mode, band: f64) -> &'static [usize] {
    match (mode, valence) {
        (Mode::Major, v) if v > band => &[0, 3, 4],
        (Mode::Major, v) if v < -band => &[5, 1, 2],
        (Mode::Major, _) => &[0, 1, 2, 3, 4, 5],
        (Mode::Minor, v) if v > band => &[2, 5, 6],
        (Mode::Minor, v) if v < -band => &[0, 3, 4],
        (Mode::Minor, _) => &[0, 2, 3, 4, 5, 6],
    }
}

/// Per beat, the eligible triad covering the most sounding melody slots; ties go to
/// the smallest harmonic-color step from the previous chord. Silent beats hold.
pub fn harmonize(melody: &MelodyGrid, emotion: EmotionVA, tonality: Tonality, cfg: &RuleConfig) -> Result<HarmonySeq> {
    let degrees = function_set(emotion.valence(), tonality.mode, cfg.valence_band);
    let candidates: Vec<(usize, [u8; 3], Chord)> =
        degrees.iter().map(|&d| (d, tonality.triad_pcs(d), voice_triad(tonality.triad_pcs(d), cfg.chord_base))).collect();
    let sounding = melody.sounding();
    let mut prev = tonality.tonic_triad();
    let mut chords = Vec::with_capacity(sounding.len() / SLOTS_PER_BEAT);
    for beat in sounding.chunks(SLOTS_PER_BEAT) {
        if beat.iter().all(Option::is_none) {
            let held = chords.last().cloned().unwrap_or_else(|| candidates[0].2.clone());
            chords.push(held);
            continue;
        }
        let mut best: Option<(usize, f64, &Chord)> = None;
        for (_, pcs, chord) in &candidates {
            let cover = beat.iter().flatten().filter(|p| pcs.contains(&(*p % 12))).count();
            let step = harmonic_color(chord, &prev)?.abs();
            let better = match best {
                None => true,
                Some((c, s, _)) => cover > c || (cover == c && step < s - 1e-12),
            };
            if better {
                best = Some((cover, step, chord));
            }
        }
        let chosen = best.expect("non-empty function set").2.clone();
        prev = chosen.clone();
        chords.push(chosen);
    }
    Ok(HarmonySeq::new(chords))
}

/// Infill then harmonize.
pub fn generate_rule(
    anchors: &DownsampledMelody,
    emotion: EmotionVA,
    tonality: Tonality,
    ts: TimeSignature,
    cfg: &RuleConfig,
) -> Result<Segment> {
    if anchors.is_empty() {
        return Err(Error::Empty("anchors"));
    }
    let melody = infill_melody(anchors, emotion, tonality)?;
    let harmony = harmonize(&melody, emotion, tonality, cfg)?;
    Segment::new(melody, harmony, tonality, ts)
}

/// Token count check used by tests: onsets in a grid.
pub fn onset_count(m: &MelodyGrid) -> usize {
    m.tokens().iter().filter(|t| matches!(t, PitchToken::Pitch(_))).count()
}
