//! Accompaniment figuration by arousal band.

use serde::{Deserialize, Serialize};

use crate::model::{Chord, EmotionVA, Segment, SLOTS_PER_BEAT};
use crate::pipeline::{OutTrack, TickNote, DEFAULT_PPQ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TexturePattern {
    /// Whole chord struck together, held until the chord changes or the bar ends.
    Block,
    /// Bass on the beat, upper voices on the off-beat.
    BrokenChord,
    /// Chord tones one after another, ascending, filling the beat.
    Arpeggio,
}

/// Arousal below -0.33 is block, above 0.33 arpeggio, broken chord between.
pub fn pattern_for(arousal: f64) -> TexturePattern {
    if arousal < -0.33 {
        TexturePattern::Block
    } else if arousal > 0.33 {
        TexturePattern::Arpeggio
    } else {
        TexturePattern::BrokenChord
    }
}

/// Melody and accompaniment of one segment, ticks relative to its start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Texture {
    pub pattern: TexturePattern,
    pub melody: Vec<TickNote>,
    pub accompaniment: Vec<TickNote>,
}

fn velocity(arousal: f64, boost: u8) -> u8 {
    (60.0 + 20.0 * (arousal.clamp(-1.0, 1.0) + 1.0)) as u8 + boost
}

pub fn render_texture(seg: &Segment, emotion: EmotionVA) -> Texture {
    render_texture_ppq(seg, emotion, DEFAULT_PPQ)
}

pub fn render_texture_ppq(seg: &Segment, emotion: EmotionVA, ppq: u16) -> Texture {
    let beat = ppq as u32;
    let slot = beat / SLOTS_PER_BEAT as u32;
    let pattern = pattern_for(emotion.arousal());
    let vel = velocity(emotion.arousal(), 0);
    let melody = seg
        .melody
        .notes()
        .iter()
        .map(|n| TickNote { pitch: n.pitch, velocity: vel.saturating_add(10).min(127), start: n.onset * slot, duration: n.duration * slot })
        .collect();

    let beats_per_bar = seg.time_signature.beats_per_bar();
    let chords = &seg.harmony.chords;
    let mut acc = Vec::new();
    let mut b = 0;
    while b < chords.len() {
        let chord = &chords[b];
        let start = b as u32 * beat;
        match pattern {
            TexturePattern::Block => {
                let mut end = b + 1;
                while end < chords.len() && end % beats_per_bar != 0 && chords[end] == *chord {
                    end += 1;
                }
                strike(&mut acc, chord, start, (end - b) as u32 * beat, vel);
                b = end;
                continue;
            }
            TexturePattern::BrokenChord => {
                if let Some((bass, upper)) = chord.notes().split_first() {
                    acc.push(TickNote { pitch: *bass, velocity: vel, start, duration: beat / 2 });
                    for &p in upper {
                        acc.push(TickNote { pitch: p, velocity: vel, start: start + beat / 2, duration: beat / 2 });
                    }
                }
            }
            TexturePattern::Arpeggio => {
                let notes = chord.notes();
                if !notes.is_empty() {
                    let steps = notes.len().max(SLOTS_PER_BEAT) as u32;
                    let step = beat / steps;
                    for i in 0..steps {
                        let pitch = notes[i as usize % notes.len()];
                        acc.push(TickNote { pitch, velocity: vel, start: start + i * step, duration: step });
                    }
                }
            }
        }
        b += 1;
    }
    Texture { pattern, melody, accompaniment: acc }
}

fn strike(acc: &mut Vec<TickNote>, chord: &Chord, start: u32, duration: u32, velocity: u8) {
    acc.extend(chord.notes().iter().map(|&pitch| TickNote { pitch, velocity, start, duration }));
}

/// Concatenates rendered segments into a melody track (channel 0) and an accompaniment track (channel 1).
pub fn assemble_tracks<'a>(parts: impl IntoIterator<Item = (&'a Texture, u32)>) -> [OutTrack; 2] {
    let mut melody = OutTrack { name: "melody".into(), channel: 0, program: 0, notes: Vec::new() };
    let mut acc = OutTrack { name: "accompaniment".into(), channel: 1, program: 0, notes: Vec::new() };
    for (t, offset) in parts {
        melody.notes.extend(t.melody.iter().map(|n| TickNote { start: n.start + offset, ..*n }));
        acc.notes.extend(t.accompaniment.iter().map(|n| TickNote { start: n.start + offset, ..*n }));
    }
    [melody, acc]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HarmonySeq, MelodyGrid, TimeSignature, Tonality};
    use std::collections::BTreeSet;

    fn seg_with(chord: Chord) -> Segment {
        Segment::new(MelodyGrid::rest(64), HarmonySeq::new(vec![chord; 16]), Tonality::major(0), TimeSignature::FourFour).unwrap()
    }

    fn ceg() -> Chord {
        Chord::new([48, 52, 55]).unwrap()
    }

    #[test]
    fn block_is_simultaneous() {
        let t = render_texture(&seg_with(ceg()), EmotionVA::new(0.0, -0.9));
        assert_eq!(t.pattern, TexturePattern::Block);
        let first: Vec<&TickNote> = t.accompaniment.iter().filter(|n| n.start == 0).collect();
        assert_eq!(first.len(), 3);
        assert!(first.iter().all(|n| n.duration == 4 * 480));
    }

    #[test]
    fn arpeggio_is_sequential() {
        let t = render_texture(&seg_with(ceg()), EmotionVA::new(0.0, 0.9));
        assert_eq!(t.pattern, TexturePattern::Arpeggio);
        let beat0: Vec<&TickNote> = t.accompaniment.iter().filter(|n| n.start < 480).collect();
        let starts: Vec<u32> = beat0.iter().map(|n| n.start).collect();
        assert!(starts.windows(2).all(|w| w[0] < w[1]));
        assert!(beat0.iter().all(|n| n.start + n.duration <= 480));
        assert_eq!(beat0[..3].iter().map(|n| n.pitch).collect::<Vec<_>>(), vec![48, 52, 55]);
    }

    #[test]
    fn templates_realize_pitch_classes() {
        let chord = Chord::new([43, 50, 53, 59, 62]).unwrap();
        for a in [-0.9, 0.0, 0.9] {
            let t = render_texture(&seg_with(chord.clone()), EmotionVA::new(0.0, a));
            for b in 0..16u32 {
                let pcs: BTreeSet<u8> = t
                    .accompaniment
                    .iter()
                    .filter(|n| n.start <= b * 480 && b * 480 < n.start + n.duration || (n.start >= b * 480 && n.start < (b + 1) * 480))
                    .map(|n| n.pitch % 12)
                    .collect();
                assert_eq!(pcs, chord.pitch_classes(), "arousal {a} beat {b}");
            }
        }
    }

    #[test]
    fn higher_arousal_is_denser() {
        let s = seg_with(ceg());
        let counts: Vec<usize> = [-0.9, 0.0, 0.9].iter().map(|&a| render_texture(&s, EmotionVA::new(0.0, a)).accompaniment.len()).collect();
        assert!(counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");
    }

    #[test]
    fn rest_chords_are_silent() {
        let t = render_texture(&seg_with(Chord::rest()), EmotionVA::new(0.0, 0.0));
        assert!(t.accompaniment.is_empty());
    }
}
