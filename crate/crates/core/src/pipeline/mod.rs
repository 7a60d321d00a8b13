//! Symbolic ingestion: parse, quantize, screen, extract melody and harmony, attach labels.

pub mod dataset;
pub mod labels;
pub mod midi;

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use log::{info, warn};

use serde::{Deserialize, Serialize};

pub use dataset::{read_pieces, write_pieces, DatasetPiece};
pub use labels::{
    label_table, lookup_label, normalize_range, quadrant_anchor, reduce_3dim, sample_around, DiscreteEmotionLabel,
    LabelTimeline, RawLabel,
};
pub use labels::read_label_csv;
pub use midi::{parse_midi, write_midi, MidiFile, MidiTrack, OutTrack, TickNote, TimedNote, DEFAULT_PPQ};

use crate::error::{Error, Result};
use crate::model::{
    encode_melody, Chord, HarmonySeq, MelodyGrid, Mode, Note, Segment, TimeSignature, Tonality, MAX_PITCH, MIN_PITCH,
    SEGMENT_BARS, SLOTS_PER_BEAT,
};

const DRUM_CHANNEL: u8 = 9;
const MONOPHONY_THRESHOLD: f64 = 0.9;

/// Rounds onsets and durations to the nearest sixteenth; zero-length notes are dropped.
pub fn quantize(notes: &[TimedNote]) -> Vec<Note> {
    let q = |beats: f64| (beats * SLOTS_PER_BEAT as f64).round().max(0.0) as u32;
    notes
        .iter()
        .filter(|n| (MIN_PITCH..=MAX_PITCH).contains(&n.pitch))
        .map(|n| Note::new(n.pitch, q(n.start), q(n.duration)))
        .filter(|n| n.duration > 0)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    TimeSignature { numerator: u8, denominator: u8 },
    MixedTimeSignatures,
    NoNotes,
    TooShort { bars: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Screening {
    Keep { time_signature: TimeSignature, segments: usize, dropped_bars: usize },
    Reject(RejectReason),
}

/// Keeps 4/4 and 2/4 pieces and cuts them into whole four-bar segments.
pub fn screen(file: &MidiFile) -> Screening {
    let mut sigs: Vec<(u8, u8)> = file.time_signatures.iter().map(|t| (t.numerator, t.denominator)).collect();
    sigs.dedup();
    let ts = match sigs.as_slice() {
        [] => TimeSignature::FourFour,
        [(n, d)] => match TimeSignature::from_fraction(*n, *d) {
            Some(ts) => ts,
            None => return Screening::Reject(RejectReason::TimeSignature { numerator: *n, denominator: *d }),
        },
        _ => return Screening::Reject(RejectReason::MixedTimeSignatures),
    };
    let end = file.tracks.iter().flat_map(|t| t.notes.iter()).map(|n| n.end()).fold(0.0f64, f64::max);
    if end <= 0.0 {
        return Screening::Reject(RejectReason::NoNotes);
    }
    let bars = screen_bars(end, ts);
    if bars < SEGMENT_BARS {
        return Screening::Reject(RejectReason::TooShort { bars });
    }
    Screening::Keep { time_signature: ts, segments: bars / SEGMENT_BARS, dropped_bars: bars % SEGMENT_BARS }
}

fn screen_bars(end_beats: f64, ts: TimeSignature) -> usize {
    let slots = (end_beats * SLOTS_PER_BEAT as f64).round() as usize;
    slots.div_ceil(ts.slots_per_bar())
}

/// Per quarter note, the distinct sounding pitches (lowest five kept).
///
/// A silent beat repeats the previous chord; leading silence is the rest chord.
pub fn extract_harmony(notes: &[Note], beats: usize) -> HarmonySeq {
    let mut chords: Vec<Chord> = Vec::with_capacity(beats);
    for b in 0..beats {
        let lo = (b * SLOTS_PER_BEAT) as u32;
        let hi = lo + SLOTS_PER_BEAT as u32;
        let sounding: BTreeSet<u8> = notes.iter().filter(|n| n.onset < hi && n.end() > lo).map(|n| n.pitch).collect();
        let chord = if sounding.is_empty() {
            chords.last().cloned().unwrap_or_else(Chord::rest)
        } else {
            Chord::lowest(sounding).expect("in-range pitches")
        };
        chords.push(chord);
    }
    HarmonySeq::new(chords)
}

/// Fraction of notes that overlap no other note.
pub fn monophony(notes: &[Note]) -> f64 {
    if notes.is_empty() {
        return 0.0;
    }
    let alone = notes
        .iter()
        .enumerate()
        .filter(|(i, a)| !notes.iter().enumerate().any(|(j, b)| *i != j && a.onset < b.end() && b.onset < a.end()))
        .count();
    alone as f64 / notes.len() as f64
}

/// Top line of possibly polyphonic notes: highest pitch wins a shared onset, overlaps are cut.
pub fn skyline(notes: &[Note]) -> Vec<Note> {
    let mut sorted = notes.to_vec();
    sorted.sort_by(|a, b| a.onset.cmp(&b.onset).then(b.pitch.cmp(&a.pitch)));
    let mut out: Vec<Note> = Vec::with_capacity(sorted.len());
    for n in sorted {
        match out.last_mut() {
            Some(prev) if prev.onset == n.onset => continue,
            Some(prev) if prev.end() > n.onset => prev.duration = n.onset - prev.onset,
            _ => {}
        }
        out.push(n);
    }
    out
}

/// Picks the melody track: one named "melody", else the highest mean pitch
/// among tracks that are at least 90% monophonic, else the highest overall.
pub fn select_melody(tracks: &[(Option<&str>, Vec<Note>)]) -> Option<usize> {
    if let Some(i) = tracks.iter().position(|(name, notes)| {
        !notes.is_empty() && name.is_some_and(|n| n.to_ascii_lowercase().contains("melody"))
    }) {
        return Some(i);
    }
    let mean = |notes: &[Note]| notes.iter().map(|n| n.pitch as f64).sum::<f64>() / notes.len() as f64;
    let best = |filter: &dyn Fn(&[Note]) -> bool| {
        tracks
            .iter()
            .enumerate()
            .filter(|(_, (_, n))| !n.is_empty() && filter(n))
            .max_by(|a, b| mean(&a.1 .1).total_cmp(&mean(&b.1 .1)))
            .map(|(i, _)| i)
    };
    best(&|n| monophony(n) >= MONOPHONY_THRESHOLD).or_else(|| best(&|_| true))
}

// Krumhansl-Kessler key profiles.
const MAJOR_PROFILE: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
const MINOR_PROFILE: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

fn correlation(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let ma = a.iter().sum::<f64>() / 12.0;
    let mb = b.iter().sum::<f64>() / 12.0;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Duration-weighted profile correlation over all 24 keys.
pub fn estimate_tonality(notes: &[Note]) -> Tonality {
    let mut hist = [0.0; 12];
    for n in notes {
        hist[(n.pitch % 12) as usize] += n.duration as f64;
    }
    let mut best = (f64::NEG_INFINITY, Tonality::major(0));
    for root in 0..12u8 {
        for (profile, mode) in [(&MAJOR_PROFILE, Mode::Major), (&MINOR_PROFILE, Mode::Minor)] {
            let rotated: [f64; 12] = std::array::from_fn(|pc| profile[(pc + 12 - root as usize) % 12]);
            let r = correlation(&hist, &rotated);
            if r > best.0 {
                best = (r, Tonality::new(root, mode).expect("root < 12"));
            }
        }
    }
    best.1
}

fn tonality_from_key_signature(sharps: i8, minor: bool) -> Tonality {
    let major_root = (sharps as i32 * 7).rem_euclid(12) as u8;
    if minor {
        Tonality::minor((major_root + 9) % 12)
    } else {
        Tonality::major(major_root)
    }
}

/// A screened song: whole four-bar segments of melody and harmony.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Song {
    pub melody: MelodyGrid,
    pub harmony: HarmonySeq,
    pub tonality: Tonality,
    pub time_signature: TimeSignature,
    pub bpm: f64,
}

impl Song {
    pub fn new(melody: MelodyGrid, harmony: HarmonySeq, tonality: Tonality, time_signature: TimeSignature, bpm: f64) -> Result<Self> {
        let spb = time_signature.slots_per_bar();
        if !melody.len().is_multiple_of(spb) || harmony.len() * SLOTS_PER_BEAT != melody.len() {
            return Err(Error::Invalid(format!(
                "song grids disagree: {} melody slots, {} chords",
                melody.len(),
                harmony.len()
            )));
        }
        Ok(Song { melody, harmony, tonality, time_signature, bpm })
    }

    pub fn bars(&self) -> usize {
        self.melody.len() / self.time_signature.slots_per_bar()
    }

    pub fn segment_count(&self) -> usize {
        self.bars() / SEGMENT_BARS
    }

    /// The four bars starting at `bar`.
    pub fn segment_at(&self, bar: usize) -> Result<Segment> {
        let ts = self.time_signature;
        if bar + SEGMENT_BARS > self.bars() {
            return Err(Error::EndOfSong);
        }
        let s0 = bar * ts.slots_per_bar();
        let b0 = bar * ts.beats_per_bar();
        Segment::new(
            self.melody.slice(s0, s0 + ts.segment_slots()),
            HarmonySeq::new(self.harmony.chords[b0..b0 + ts.segment_beats()].to_vec()),
            self.tonality,
            ts,
        )
    }

    pub fn segments(&self) -> Result<Vec<Segment>> {
        (0..self.segment_count()).map(|i| self.segment_at(i * SEGMENT_BARS)).collect()
    }

    pub fn from_segments(segments: &[Segment], bpm: f64) -> Result<Song> {
        let first = segments.first().ok_or(Error::Empty("segments"))?;
        let melody = MelodyGrid::concat(segments.iter().map(|s| &s.melody));
        let harmony = HarmonySeq::new(segments.iter().flat_map(|s| s.harmony.chords.iter().cloned()).collect());
        Song::new(melody, harmony, first.tonality, first.time_signature, bpm)
    }

    /// A two-track MIDI file: the melody, then the chords with repeated chords merged.
    pub fn to_midi(&self) -> Vec<u8> {
        let slot = DEFAULT_PPQ as u32 / SLOTS_PER_BEAT as u32;
        let beat = DEFAULT_PPQ as u32;
        let melody = self
            .melody
            .notes()
            .iter()
            .map(|n| TickNote { pitch: n.pitch, velocity: 90, start: n.onset * slot, duration: n.duration * slot })
            .collect();
        let mut chords = Vec::new();
        let mut i = 0;
        while i < self.harmony.chords.len() {
            let c = &self.harmony.chords[i];
            let mut j = i + 1;
            while j < self.harmony.chords.len() && self.harmony.chords[j] == *c {
                j += 1;
            }
            for &p in c.notes() {
                chords.push(TickNote { pitch: p, velocity: 70, start: i as u32 * beat, duration: (j - i) as u32 * beat });
            }
            i = j;
        }
        let tracks = [
            OutTrack { name: "melody".into(), channel: 0, program: 0, notes: melody },
            OutTrack { name: "chords".into(), channel: 1, program: 0, notes: chords },
        ];
        write_midi(&tracks, self.bpm, self.time_signature.beats_per_bar() as u8, DEFAULT_PPQ)
    }
}

/// Outcome of ingesting one MIDI file.
#[derive(Debug, Clone, PartialEq)]
pub enum Ingested {
    Song { song: Song, dropped_bars: usize, warnings: Vec<String> },
    Rejected(RejectReason),
}

/// Parses, screens and symbolizes a MIDI file.
pub fn ingest_midi(bytes: &[u8]) -> Result<Ingested> {
    let file = parse_midi(bytes)?;
    let (ts, segments, dropped_bars) = match screen(&file) {
        Screening::Keep { time_signature, segments, dropped_bars } => (time_signature, segments, dropped_bars),
        Screening::Reject(r) => return Ok(Ingested::Rejected(r)),
    };
    let tracks: Vec<(Option<&str>, Vec<Note>)> = file
        .tracks
        .iter()
        .map(|t| {
            let pitched: Vec<TimedNote> = t.notes.iter().filter(|n| n.channel != DRUM_CHANNEL).copied().collect();
            (t.name.as_deref(), quantize(&pitched))
        })
        .collect();
    let Some(melody_idx) = select_melody(&tracks) else {
        return Ok(Ingested::Rejected(RejectReason::NoNotes));
    };
    let slots = segments * ts.segment_slots();
    let melody_notes: Vec<Note> = skyline(&tracks[melody_idx].1)
        .into_iter()
        .filter(|n| (n.onset as usize) < slots)
        .map(|mut n| {
            n.duration = n.duration.min(slots as u32 - n.onset);
            n
        })
        .collect();
    let accompaniment: Vec<Note> = tracks
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != melody_idx)
        .flat_map(|(_, (_, n))| n.iter().copied())
        .collect();
    let all: Vec<Note> = tracks.iter().flat_map(|(_, n)| n.iter().copied()).collect();
    let tonality = match file.key_signature {
        Some((sf, minor)) => tonality_from_key_signature(sf, minor),
        None => estimate_tonality(&all),
    };
    let melody = encode_melody(&melody_notes, slots)?;
    let harmony = extract_harmony(&accompaniment, slots / SLOTS_PER_BEAT);
    let song = Song::new(melody, harmony, tonality, ts, file.tempo_bpm.unwrap_or(120.0))?;
    Ok(Ingested::Song { song, dropped_bars, warnings: file.warnings })
}

/// Result of ingesting a directory tree.
#[derive(Debug, Default)]
pub struct IngestSummary {
    pub pieces: Vec<DatasetPiece>,
    pub songs: usize,
    pub rejected: Vec<(PathBuf, String)>,
}

fn midi_files(root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if root.is_file() {
        out.push(root.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(root)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            midi_files(&p, out)?;
        } else if p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi")) {
            out.push(p);
        }
    }
    Ok(())
}

/// Ingests every `.mid`/`.midi` under `root`; labels are looked up by file name, then by stem.
pub fn ingest_dir(root: &Path, labels: &HashMap<String, LabelTimeline>) -> Result<IngestSummary> {
    let mut files = Vec::new();
    midi_files(root, &mut files)?;
    let mut summary = IngestSummary::default();
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
        let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
        let outcome = std::fs::read(&path).map_err(Error::from).and_then(|b| ingest_midi(&b));
        match outcome {
            Ok(Ingested::Song { song, dropped_bars, warnings }) => {
                for w in warnings {
                    warn!("{}: {w}", path.display());
                }
                if dropped_bars > 0 {
                    info!("{}: dropped {dropped_bars} trailing bars", path.display());
                }
                let timeline = labels.get(&name).or_else(|| labels.get(stem));
                summary.pieces.extend(song_pieces(&song, Some(&name), timeline)?);
                summary.songs += 1;
            }
            Ok(Ingested::Rejected(r)) => summary.rejected.push((path, format!("{r:?}"))),
            Err(e) => summary.rejected.push((path, e.to_string())),
        }
    }
    Ok(summary)
}

/// Cuts a song into dataset pieces, aligning labels to beats when given.
pub fn song_pieces(song: &Song, source: Option<&str>, labels: Option<&LabelTimeline>) -> Result<Vec<DatasetPiece>> {
    let beats_per_segment = song.time_signature.segment_beats();
    song.segments()?
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let emotion = labels.and_then(|l| l.align(i * beats_per_segment, beats_per_segment, song.bpm));
            let mut p = DatasetPiece::from_segment(seg, emotion);
            p.source = source.map(str::to_owned);
            p.index = i;
            Ok(p)
        })
        .collect()
}
