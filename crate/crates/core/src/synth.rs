//! Seeded synthetic material: stepwise diatonic melodies, diatonic harmony,
//! whole songs and a labeled corpus whose emotion follows mode and note density.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::model::{
    encode_melody, voice_triad, Chord, EmotionSeq, EmotionVA, HarmonySeq, MelodyGrid, Mode, Note, Segment,
    TimeSignature, Tonality, SEGMENT_BARS, SLOTS_PER_BEAT,
};
use crate::pipeline::{DatasetPiece, Song};

const MELODY_LOW: i32 = 60;
const MELODY_HIGH: i32 = 84;

/// Duration choices in sixteenths, from sparse to dense.
const SPARSE: [u32; 4] = [4, 8, 8, 16];
const DENSE: [u32; 4] = [1, 2, 2, 4];

/// Scale pitches between the melody bounds, ascending.
fn scale_pitches(t: Tonality) -> Vec<u8> {
    (MELODY_LOW..=MELODY_HIGH).map(|p| p as u8).filter(|&p| t.contains(p)).collect()
}

/// A stepwise diatonic melody of `len` slots.
///
/// `density` in [0, 1] shifts note durations from long to short.
pub fn random_melody_with_density(rng: &mut impl Rng, tonality: Tonality, len: usize, density: f64) -> MelodyGrid {
    let scale = scale_pitches(tonality);
    let mut idx = rng.gen_range(scale.len() / 4..scale.len() * 3 / 4);
    let mut notes = Vec::new();
    let mut t = 0u32;
    while (t as usize) < len {
        let pool = if rng.gen_bool(density.clamp(0.0, 1.0)) { &DENSE } else { &SPARSE };
        let mut dur = *pool.choose(rng).unwrap();
        // keep notes from straddling beat boundaries when they start off-beat
        let to_beat = SLOTS_PER_BEAT as u32 - t % SLOTS_PER_BEAT as u32;
        if !t.is_multiple_of(SLOTS_PER_BEAT as u32) {
            dur = dur.min(to_beat);
        }
        dur = dur.min(len as u32 - t);
        if rng.gen_bool(0.08) && t > 0 {
            t += dur;
            continue;
        }
        let step: i32 = *[-2, -1, -1, 0, 1, 1, 2].choose(rng).unwrap();
        idx = (idx as i32 + step).clamp(0, scale.len() as i32 - 1) as usize;
        notes.push(Note::new(scale[idx], t, dur));
        t += dur;
    }
    encode_melody(&notes, len).expect("monophonic in-range notes")
}

pub fn random_melody(rng: &mut impl Rng, tonality: Tonality, len: usize) -> MelodyGrid {
    let density = rng.gen_range(0.0..1.0);
    random_melody_with_density(rng, tonality, len, density)
}

/// Degree progressions, one chord per bar.
const PROGRESSIONS: [[usize; 4]; 6] = [[0, 3, 4, 0], [0, 5, 3, 4], [0, 4, 5, 3], [5, 3, 0, 4], [0, 1, 4, 0], [3, 4, 2, 5]];

/// Diatonic triads in close position, one chord per bar held over its beats.
pub fn random_harmony(rng: &mut impl Rng, tonality: Tonality, ts: TimeSignature, bars: usize) -> HarmonySeq {
    let mut chords = Vec::with_capacity(bars * ts.beats_per_bar());
    let mut prog = PROGRESSIONS.choose(rng).unwrap();
    for bar in 0..bars {
        if bar % 4 == 0 && bar > 0 {
            prog = PROGRESSIONS.choose(rng).unwrap();
        }
        let chord = voice_triad(tonality.triad_pcs(prog[bar % 4]), 48);
        chords.extend(std::iter::repeat_n(chord, ts.beats_per_bar()));
    }
    HarmonySeq::new(chords)
}

pub fn random_segment(rng: &mut impl Rng, tonality: Tonality, ts: TimeSignature) -> Segment {
    let melody = random_melody(rng, tonality, ts.segment_slots());
    let harmony = random_harmony(rng, tonality, ts, SEGMENT_BARS);
    Segment::new(melody, harmony, tonality, ts).expect("consistent lengths")
}

pub fn random_tonality(rng: &mut impl Rng) -> Tonality {
    let root = rng.gen_range(0..12);
    if rng.gen_bool(0.5) {
        Tonality::major(root)
    } else {
        Tonality::minor(root)
    }
}

/// A song of `segments` four-bar segments; later segments often repeat earlier ones.
pub fn random_song(rng: &mut impl Rng, tonality: Tonality, ts: TimeSignature, segments: usize, bpm: f64) -> Song {
    let mut segs: Vec<Segment> = Vec::with_capacity(segments);
    for i in 0..segments {
        let seg = if i >= 2 && rng.gen_bool(0.3) {
            segs[rng.gen_range(0..i)].clone()
        } else {
            random_segment(rng, tonality, ts)
        };
        segs.push(seg);
    }
    Song::from_segments(&segs, bpm).expect("non-empty segments")
}

/// Ground-truth emotion for synthetic material: valence from mode, arousal from note density.
pub fn synthetic_emotion(tonality: Tonality, melody: &MelodyGrid) -> EmotionVA {
    let valence = match tonality.mode {
        Mode::Major => 0.6,
        Mode::Minor => -0.6,
    };
    let onsets = melody.tokens().iter().filter(|t| t.is_onset()).count() as f64;
    let per_beat = onsets / (melody.len() / SLOTS_PER_BEAT).max(1) as f64;
    // one note per beat or less reads as calm, three or more as aroused
    let arousal = (per_beat - 1.0).clamp(0.0, 2.0) - 1.0;
    EmotionVA::new(valence, arousal)
}

/// Labeled four-bar pieces with per-beat emotion. Label noise has standard deviation `noise`.
pub fn labeled_corpus(rng: &mut impl Rng, n: usize, noise: f64) -> Vec<DatasetPiece> {
    let jitter = Normal::new(0.0, noise.max(1e-12)).unwrap();
    (0..n)
        .map(|i| {
            let tonality = random_tonality(rng);
            let ts = if rng.gen_bool(0.85) { TimeSignature::FourFour } else { TimeSignature::TwoFour };
            let density = rng.gen_range(0.0..1.0);
            let melody = random_melody_with_density(rng, tonality, ts.segment_slots(), density);
            let harmony = random_harmony(rng, tonality, ts, SEGMENT_BARS);
            let seg = Segment::new(melody, harmony, tonality, ts).expect("consistent lengths");
            let base = synthetic_emotion(tonality, &seg.melody);
            let points = (0..ts.segment_beats())
                .map(|_| EmotionVA::new(base.valence() + jitter.sample(rng), base.arousal() + jitter.sample(rng)))
                .collect();
            let mut p = DatasetPiece::from_segment(&seg, Some(EmotionSeq::new(points)));
            p.source = Some(format!("synthetic-{}", i / 8));
            p.index = i % 8;
            p
        })
        .collect()
}

/// A short built-in song used by the demo service and examples.
pub fn demo_song() -> Song {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    random_song(&mut rng, Tonality::major(0), TimeSignature::FourFour, 8, 100.0)
}

/// Rest chord helper kept for symmetry with generated material.
pub fn silent_harmony(beats: usize) -> HarmonySeq {
    HarmonySeq::new(vec![Chord::rest(); beats])
}
