//! Symbolic music and emotion value types shared by every stage.
//!
//! Melody lives on a sixteenth-note grid of [`PitchToken`]s, harmony on a
//! quarter-note grid of [`Chord`]s. A [`Segment`] is always four bars.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEGMENT_BARS: usize = 4;
pub const SLOTS_PER_BEAT: usize = 4;
pub const MIN_PITCH: u8 = 21;
pub const MAX_PITCH: u8 = 108;
pub const MAX_CHORD_NOTES: usize = 5;

/// One sixteenth-note slot of a melody.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum PitchToken {
    Rest,
    /// Sustains the pitch sounding in the previous slot.
    Hold,
    Pitch(u8),
}

impl PitchToken {
    pub fn pitch(midi: u8) -> Result<Self> {
        if (MIN_PITCH..=MAX_PITCH).contains(&midi) {
            Ok(PitchToken::Pitch(midi))
        } else {
            Err(Error::PitchRange(midi))
        }
    }

    pub fn is_onset(self) -> bool {
        matches!(self, PitchToken::Pitch(_))
    }
}

impl From<PitchToken> for u8 {
    fn from(t: PitchToken) -> u8 {
        match t {
            PitchToken::Rest => 0,
            PitchToken::Hold => 1,
            PitchToken::Pitch(p) => p,
        }
    }
}

impl TryFrom<u8> for PitchToken {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(PitchToken::Rest),
            1 => Ok(PitchToken::Hold),
            p => PitchToken::pitch(p),
        }
    }
}

impl fmt::Display for PitchToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PitchToken::Rest => f.write_str("R"),
            PitchToken::Hold => f.write_str("-"),
            PitchToken::Pitch(p) => write!(f, "{p}"),
        }
    }
}

/// A monophonic note with onset and duration in sixteenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Note {
    pub pitch: u8,
    pub onset: u32,
    pub duration: u32,
}

impl Note {
    pub fn new(pitch: u8, onset: u32, duration: u32) -> Self {
        Note { pitch, onset, duration }
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }
}

/// Decodes raw grid tokens into a note list.
///
/// `Hold` extends the previous pitch; a `Hold` at slot 0 or after a rest is malformed.
pub fn decode_melody(tokens: &[PitchToken]) -> Result<Vec<Note>> {
    let mut notes: Vec<Note> = Vec::new();
    let mut sounding = false;
    for (slot, tok) in tokens.iter().enumerate() {
        match *tok {
            PitchToken::Rest => sounding = false,
            PitchToken::Pitch(p) => {
                if !(MIN_PITCH..=MAX_PITCH).contains(&p) {
                    return Err(Error::PitchRange(p));
                }
                notes.push(Note::new(p, slot as u32, 1));
                sounding = true;
            }
            PitchToken::Hold => {
                if slot == 0 {
                    return Err(Error::MalformedGrid { slot, reason: "hold at first slot" });
                }
                if !sounding {
                    return Err(Error::MalformedGrid { slot, reason: "hold after rest" });
                }
                if let Some(last) = notes.last_mut() {
                    last.duration += 1;
                }
            }
        }
    }
    Ok(notes)
}

/// Encodes a monophonic note list into `grid_len` tokens.
pub fn encode_melody(notes: &[Note], grid_len: usize) -> Result<MelodyGrid> {
    let mut sorted: Vec<Note> = notes.to_vec();
    sorted.sort_by_key(|n| n.onset);
    let mut tokens = vec![PitchToken::Rest; grid_len];
    let mut cursor = 0u32;
    for n in &sorted {
        if n.duration == 0 {
            return Err(Error::Invalid(format!("zero-length note at {}", n.onset)));
        }
        if n.onset < cursor {
            return Err(Error::Polyphony { onset: n.onset });
        }
        if n.end() as usize > grid_len {
            return Err(Error::LengthMismatch { expected: grid_len, actual: n.end() as usize });
        }
        let start = n.onset as usize;
        tokens[start] = PitchToken::pitch(n.pitch)?;
        for t in &mut tokens[start + 1..n.end() as usize] {
            *t = PitchToken::Hold;
        }
        cursor = n.end();
    }
    Ok(MelodyGrid { tokens })
}

/// Melody on the sixteenth-note grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<PitchToken>", into = "Vec<PitchToken>")]
pub struct MelodyGrid {
    tokens: Vec<PitchToken>,
}

impl MelodyGrid {
    pub fn new(tokens: Vec<PitchToken>) -> Result<Self> {
        decode_melody(&tokens)?;
        Ok(MelodyGrid { tokens })
    }

    pub fn rest(len: usize) -> Self {
        MelodyGrid { tokens: vec![PitchToken::Rest; len] }
    }

    pub fn tokens(&self) -> &[PitchToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn notes(&self) -> Vec<Note> {
        decode_melody(&self.tokens).expect("validated grid")
    }

    /// Pitch sounding at each slot, `None` for silence.
    pub fn sounding(&self) -> Vec<Option<u8>> {
        let mut out = Vec::with_capacity(self.tokens.len());
        let mut cur = None;
        for t in &self.tokens {
            cur = match *t {
                PitchToken::Rest => None,
                PitchToken::Hold => cur,
                PitchToken::Pitch(p) => Some(p),
            };
            out.push(cur);
        }
        out
    }

    /// Sub-grid `[start, end)`, re-attacking a note cut at the boundary.
    pub fn slice(&self, start: usize, end: usize) -> MelodyGrid {
        let sounding = self.sounding();
        let mut tokens = self.tokens[start..end].to_vec();
        if let Some(first) = tokens.first_mut() {
            if *first == PitchToken::Hold {
                *first = PitchToken::Pitch(sounding[start].expect("hold follows a pitch"));
            }
        }
        MelodyGrid { tokens }
    }

    /// Concatenates grids in order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a MelodyGrid>) -> MelodyGrid {
        let tokens = parts.into_iter().flat_map(|g| g.tokens.iter().copied()).collect();
        MelodyGrid { tokens }
    }

    pub fn transpose(&self, semitones: i32) -> Result<MelodyGrid> {
        let tokens = self
            .tokens
            .iter()
            .map(|t| match *t {
                PitchToken::Pitch(p) => PitchToken::pitch(shift_pitch(p, semitones)?),
                other => Ok(other),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MelodyGrid { tokens })
    }
}

impl TryFrom<Vec<PitchToken>> for MelodyGrid {
    type Error = Error;

    fn try_from(tokens: Vec<PitchToken>) -> Result<Self> {
        MelodyGrid::new(tokens)
    }
}

impl From<MelodyGrid> for Vec<PitchToken> {
    fn from(g: MelodyGrid) -> Self {
        g.tokens
    }
}

fn shift_pitch(p: u8, semitones: i32) -> Result<u8> {
    let shifted = p as i32 + semitones;
    if (MIN_PITCH as i32..=MAX_PITCH as i32).contains(&shifted) {
        Ok(shifted as u8)
    } else {
        Err(Error::PitchRange(shifted.clamp(0, 255) as u8))
    }
}

/// Sampling granularity of the melody skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Beat,
    Bar,
}

impl Granularity {
    pub fn stride(self, ts: TimeSignature) -> usize {
        match self {
            Granularity::Beat => SLOTS_PER_BEAT,
            Granularity::Bar => ts.slots_per_bar(),
        }
    }
}

/// Melody skeleton: one sounding pitch (or rest) per sample instant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DownsampledMelody {
    pub tokens: Vec<PitchToken>,
    pub stride: usize,
}

impl DownsampledMelody {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pitches(&self) -> Vec<Option<u8>> {
        self.tokens
            .iter()
            .map(|t| match *t {
                PitchToken::Pitch(p) => Some(p),
                _ => None,
            })
            .collect()
    }
}

/// Samples the sounding pitch every `stride` slots; holds resolve to the sounding pitch.
pub fn downsample(melody: &MelodyGrid, granularity: Granularity, ts: TimeSignature) -> DownsampledMelody {
    sample_every(melody, granularity.stride(ts))
}

/// Samples the sounding pitch at slots `0, stride, 2 * stride, ...`.
pub fn sample_every(melody: &MelodyGrid, stride: usize) -> DownsampledMelody {
    let sounding = melody.sounding();
    let tokens = sounding
        .iter()
        .step_by(stride)
        .map(|s| s.map_or(PitchToken::Rest, PitchToken::Pitch))
        .collect();
    DownsampledMelody { tokens, stride }
}

/// A set of 1 to 5 distinct pitches, or the empty rest-chord sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct Chord {
    notes: Vec<u8>,
}

impl Chord {
    pub fn new(pitches: impl IntoIterator<Item = u8>) -> Result<Self> {
        let set: BTreeSet<u8> = pitches.into_iter().collect();
        if set.is_empty() || set.len() > MAX_CHORD_NOTES {
            return Err(Error::ChordSize(set.len()));
        }
        if let Some(&p) = set.iter().find(|p| !(MIN_PITCH..=MAX_PITCH).contains(*p)) {
            return Err(Error::PitchRange(p));
        }
        Ok(Chord { notes: set.into_iter().collect() })
    }

    /// Keeps the lowest five distinct pitches.
    pub fn lowest(pitches: impl IntoIterator<Item = u8>) -> Result<Self> {
        let set: BTreeSet<u8> = pitches.into_iter().collect();
        Chord::new(set.into_iter().take(MAX_CHORD_NOTES))
    }

    pub fn rest() -> Self {
        Chord { notes: Vec::new() }
    }

    pub fn is_rest(&self) -> bool {
        self.notes.is_empty()
    }

    /// Ascending pitches.
    pub fn notes(&self) -> &[u8] {
        &self.notes
    }

    pub fn lowest_note(&self) -> Option<u8> {
        self.notes.first().copied()
    }

    pub fn pitch_classes(&self) -> BTreeSet<u8> {
        self.notes.iter().map(|p| p % 12).collect()
    }

    pub fn transpose(&self, semitones: i32) -> Result<Chord> {
        let notes = self.notes.iter().map(|&p| shift_pitch(p, semitones)).collect::<Result<Vec<_>>>()?;
        Ok(Chord { notes })
    }
}

impl TryFrom<Vec<u8>> for Chord {
    type Error = Error;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        if v.is_empty() {
            Ok(Chord::rest())
        } else {
            Chord::new(v)
        }
    }
}

impl From<Chord> for Vec<u8> {
    fn from(c: Chord) -> Self {
        c.notes
    }
}

/// One chord per quarter note.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HarmonySeq {
    pub chords: Vec<Chord>,
}

impl HarmonySeq {
    pub fn new(chords: Vec<Chord>) -> Self {
        HarmonySeq { chords }
    }

    pub fn len(&self) -> usize {
        self.chords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chords.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Tonality {
    root: u8,
    pub mode: Mode,
}

const MAJOR_STEPS: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR_STEPS: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];
const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

impl Tonality {
    pub fn new(root: u8, mode: Mode) -> Result<Self> {
        if root > 11 {
            return Err(Error::Invalid(format!("tonality root {root} outside 0..=11")));
        }
        Ok(Tonality { root, mode })
    }

    pub fn major(root: u8) -> Self {
        Tonality { root: root % 12, mode: Mode::Major }
    }

    pub fn minor(root: u8) -> Self {
        Tonality { root: root % 12, mode: Mode::Minor }
    }

    pub fn root(&self) -> u8 {
        self.root
    }

    /// Scale steps above the root, ascending.
    pub fn steps(&self) -> [u8; 7] {
        match self.mode {
            Mode::Major => MAJOR_STEPS,
            Mode::Minor => MINOR_STEPS,
        }
    }

    /// Pitch classes of the scale in degree order.
    pub fn degrees(&self) -> [u8; 7] {
        self.steps().map(|s| (s + self.root) % 12)
    }

    pub fn contains(&self, pitch: u8) -> bool {
        self.degrees().contains(&(pitch % 12))
    }

    /// Triad on scale degree `degree` (0-based) as pitch classes root, third, fifth.
    pub fn triad_pcs(&self, degree: usize) -> [u8; 3] {
        let d = self.degrees();
        [d[degree % 7], d[(degree + 2) % 7], d[(degree + 4) % 7]]
    }

    /// Tonic triad voiced upward from C3.
    pub fn tonic_triad(&self) -> Chord {
        voice_triad(self.triad_pcs(0), 48)
    }
}

impl fmt::Display for Tonality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Mode::Major => "major",
            Mode::Minor => "minor",
        };
        write!(f, "{} {}", NOTE_NAMES[self.root as usize], mode)
    }
}

/// Close-position voicing with the root at or above `base`.
pub fn voice_triad(pcs: [u8; 3], base: u8) -> Chord {
    let root = base + (pcs[0] + 12 - base % 12) % 12;
    let mut notes = vec![root];
    let mut prev = root;
    for &pc in &pcs[1..] {
        let mut p = prev - prev % 12 + pc;
        while p <= prev {
            p += 12;
        }
        notes.push(p);
        prev = p;
    }
    Chord::new(notes).expect("three distinct in-range pitches")
}

/// The seven pitch classes of a tonality's scale.
pub fn scale_pitch_classes(t: Tonality) -> BTreeSet<u8> {
    t.degrees().into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TimeSignature {
    #[default]
    #[serde(rename = "4/4")]
    FourFour,
    #[serde(rename = "2/4")]
    TwoFour,
}

impl TimeSignature {
    pub fn from_fraction(numerator: u8, denominator: u8) -> Option<Self> {
        match (numerator, denominator) {
            (4, 4) => Some(TimeSignature::FourFour),
            (2, 4) => Some(TimeSignature::TwoFour),
            _ => None,
        }
    }

    pub fn beats_per_bar(self) -> usize {
        match self {
            TimeSignature::FourFour => 4,
            TimeSignature::TwoFour => 2,
        }
    }

    pub fn slots_per_bar(self) -> usize {
        self.beats_per_bar() * SLOTS_PER_BEAT
    }

    pub fn segment_slots(self) -> usize {
        SEGMENT_BARS * self.slots_per_bar()
    }

    pub fn segment_beats(self) -> usize {
        SEGMENT_BARS * self.beats_per_bar()
    }
}

/// Four bars of melody, harmony and tonality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub melody: MelodyGrid,
    pub harmony: HarmonySeq,
    pub tonality: Tonality,
    pub time_signature: TimeSignature,
}

impl Segment {
    pub fn new(melody: MelodyGrid, harmony: HarmonySeq, tonality: Tonality, time_signature: TimeSignature) -> Result<Self> {
        if melody.len() != time_signature.segment_slots() {
            return Err(Error::LengthMismatch { expected: time_signature.segment_slots(), actual: melody.len() });
        }
        if harmony.len() != time_signature.segment_beats() {
            return Err(Error::LengthMismatch { expected: time_signature.segment_beats(), actual: harmony.len() });
        }
        Ok(Segment { melody, harmony, tonality, time_signature })
    }

    pub fn bar_count(&self) -> usize {
        SEGMENT_BARS
    }

    pub fn beats(&self) -> usize {
        self.time_signature.segment_beats()
    }

    pub fn transpose(&self, semitones: i32) -> Result<Segment> {
        let harmony = HarmonySeq::new(
            self.harmony
                .chords
                .iter()
                .map(|c| c.transpose(semitones))
                .collect::<Result<_>>()?,
        );
        let root = (self.tonality.root as i32 + semitones).rem_euclid(12) as u8;
        Ok(Segment {
            melody: self.melody.transpose(semitones)?,
            harmony,
            tonality: Tonality { root, mode: self.tonality.mode },
            time_signature: self.time_signature,
        })
    }
}

/// A valence-arousal point; both axes are clamped to [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmotionVA {
    valence: f64,
    arousal: f64,
}

fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-1.0, 1.0)
    }
}

impl EmotionVA {
    pub fn new(valence: f64, arousal: f64) -> Self {
        EmotionVA { valence: clamp_unit(valence), arousal: clamp_unit(arousal) }
    }

    pub fn valence(&self) -> f64 {
        self.valence
    }

    pub fn arousal(&self) -> f64 {
        self.arousal
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.valence, self.arousal]
    }

    pub fn distance(&self, other: &EmotionVA) -> f64 {
        (self.valence - other.valence).hypot(self.arousal - other.arousal)
    }
}

/// One valence-arousal point per beat.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionSeq {
    pub points: Vec<EmotionVA>,
}

impl EmotionSeq {
    pub fn new(points: Vec<EmotionVA>) -> Self {
        EmotionSeq { points }
    }

    pub fn constant(e: EmotionVA, len: usize) -> Self {
        EmotionSeq { points: vec![e; len] }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Option<EmotionVA> {
        if self.points.is_empty() {
            return None;
        }
        let n = self.points.len() as f64;
        let (v, a) = self.points.iter().fold((0.0, 0.0), |(v, a), p| (v + p.valence, a + p.arousal));
        Some(EmotionVA::new(v / n, a / n))
    }
}
