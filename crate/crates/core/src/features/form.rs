//! Form factor: structural relations between the current segment and the last 80 bars.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::rhythm::{rhythm_pattern, ReattackRule};
use crate::model::{MelodyGrid, PitchToken, Segment, SEGMENT_BARS};

pub const FORM_CACHE_BARS: usize = 80;

/// Thresholds for the form comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormConfig {
    /// Minimum positional match ratio for a repetition.
    pub rep_threshold: f64,
    /// Minimum normalized rhythm edit distance for a rhythm difference.
    pub rhythm_threshold: f64,
    pub reattack: ReattackRule,
}

impl Default for FormConfig {
    fn default() -> Self {
        FormConfig { rep_threshold: 0.8, rhythm_threshold: 0.5, reattack: ReattackRule::Merge }
    }
}

/// Repetition sign and the bar distance to the nearest match (0 when absent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Repetition {
    pub sign: u8,
    pub interval: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormFactorVec {
    pub melody_rep: Repetition,
    pub chord_rep: Repetition,
    pub tonality_transform: u8,
    pub zone_transform: u8,
    pub rhythm_difference: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CachedBar {
    tokens: Vec<PitchToken>,
    roots: Vec<Option<u8>>,
}

/// FIFO of per-bar melody and chord content, at most 80 bars.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FormCache {
    bars: VecDeque<CachedBar>,
}

impl FormCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn push_segment(&mut self, seg: &Segment) {
        let spb = seg.time_signature.slots_per_bar();
        let bpb = seg.time_signature.beats_per_bar();
        for bar in 0..SEGMENT_BARS {
            let tokens = seg.melody.slice(bar * spb, (bar + 1) * spb).tokens().to_vec();
            let roots = seg.harmony.chords[bar * bpb..(bar + 1) * bpb]
                .iter()
                .map(|c| c.lowest_note().map(|p| p % 12))
                .collect();
            self.bars.push_back(CachedBar { tokens, roots });
            while self.bars.len() > FORM_CACHE_BARS {
                self.bars.pop_front();
            }
        }
    }

    /// Four-bar windows ending at each cached bar offset, paired with their bar distance.
    fn windows(&self, bar_slots: usize) -> impl Iterator<Item = (u32, Window)> + '_ {
        let len = self.bars.len();
        (0..=len.saturating_sub(SEGMENT_BARS))
            .filter(move |_| len >= SEGMENT_BARS)
            .filter_map(move |start| {
                let bars: Vec<&CachedBar> = self.bars.range(start..start + SEGMENT_BARS).collect();
                if bars.iter().any(|b| b.tokens.len() != bar_slots) {
                    return None;
                }
                let tokens: Vec<PitchToken> = bars.iter().flat_map(|b| b.tokens.iter().copied()).collect();
                let roots = bars.iter().flat_map(|b| b.roots.iter().copied()).collect();
                let melody = MelodyGrid::new(tokens).expect("cached bars start with an onset or rest");
                Some(((len - start) as u32, Window { melody, roots }))
            })
    }
}

struct Window {
    melody: MelodyGrid,
    roots: Vec<Option<u8>>,
}

fn ratio(matches: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        matches as f64 / n as f64
    }
}

fn positional_match<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    ratio(a.iter().zip(b).filter(|(x, y)| x == y).count(), a.len().max(b.len()))
}

/// Most frequent `cur - prev` over slots where both sound and `keep` holds.
fn modal_offset(cur: &[Option<u8>], prev: &[Option<u8>], keep: impl Fn(i32) -> bool) -> Option<i32> {
    let mut counts: HashMap<i32, usize> = HashMap::new();
    for (c, p) in cur.iter().zip(prev) {
        if let (Some(c), Some(p)) = (c, p) {
            let d = *c as i32 - *p as i32;
            if keep(d) {
                *counts.entry(d).or_default() += 1;
            }
        }
    }
    counts.into_iter().max_by_key(|&(d, n)| (n, -d.abs(), d)).map(|(d, _)| d)
}

fn shifted_match(cur: &[Option<u8>], prev: &[Option<u8>], offset: i32) -> f64 {
    let hits = cur
        .iter()
        .zip(prev)
        .filter(|(c, p)| match (c, p) {
            (None, None) => true,
            (Some(c), Some(p)) => *c as i32 - *p as i32 == offset,
            _ => false,
        })
        .count();
    ratio(hits, cur.len().max(prev.len()))
}

fn pitch_class_match(cur: &[Option<u8>], prev: &[Option<u8>]) -> f64 {
    let pcs = |s: &[Option<u8>]| s.iter().map(|p| p.map(|p| p % 12)).collect::<Vec<_>>();
    positional_match(&pcs(cur), &pcs(prev))
}

/// Levenshtein distance normalized by the longer sequence.
pub fn normalized_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()] as f64 / longest as f64
}

fn nearest(slot: &mut Repetition, distance: u32) {
    if slot.sign == 0 || distance < slot.interval {
        *slot = Repetition { sign: 1, interval: distance };
    }
}

/// Compares `seg` against every cached window, then appends its bars to the cache.
pub fn form_factor(seg: &Segment, cache: &mut FormCache, cfg: &FormConfig) -> FormFactorVec {
    let out = compare(seg, cache, cfg);
    cache.push_segment(seg);
    out
}

/// The comparison half of [`form_factor`], leaving the cache untouched.
pub fn compare(seg: &Segment, cache: &FormCache, cfg: &FormConfig) -> FormFactorVec {
    let mut out = FormFactorVec::default();
    let cur = seg.melody.sounding();
    let cur_roots: Vec<Option<u8>> = seg.harmony.chords.iter().map(|c| c.lowest_note().map(|p| p % 12)).collect();
    let cur_rhythm = rhythm_pattern(&seg.melody, cfg.reattack);
    let cur_pcs: Vec<Option<u8>> = cur_rhythm.pitches().iter().map(|p| p.map(|p| p % 12)).collect();
    let theta = cfg.rep_threshold;

    for (distance, w) in cache.windows(seg.time_signature.slots_per_bar()) {
        let prev = w.melody.sounding();
        if positional_match(&cur, &prev) >= theta {
            nearest(&mut out.melody_rep, distance);
        }
        if positional_match(&cur_roots, &w.roots) >= theta {
            nearest(&mut out.chord_rep, distance);
        }
        if let Some(d) = modal_offset(&cur, &prev, |d| d % 12 != 0) {
            if shifted_match(&cur, &prev, d) >= theta {
                out.tonality_transform = 1;
            }
        }
        if pitch_class_match(&cur, &prev) >= theta {
            if let Some(d) = modal_offset(&cur, &prev, |d| d % 12 == 0) {
                if d != 0 && shifted_match(&cur, &prev, d) >= theta {
                    out.zone_transform = 1;
                }
            }
        }
        let prev_rhythm = rhythm_pattern(&w.melody, cfg.reattack);
        let prev_pcs: Vec<Option<u8>> = prev_rhythm.pitches().iter().map(|p| p.map(|p| p % 12)).collect();
        let pitch_similar = 1.0 - normalized_edit_distance(&cur_pcs, &prev_pcs) >= theta;
        if pitch_similar && normalized_edit_distance(&cur_rhythm.durations(), &prev_rhythm.durations()) >= cfg.rhythm_threshold {
            out.rhythm_difference = 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn seg_from(notes: &[(u8, u32)], root: u8) -> Segment {
        let mut t = 0;
        let ns: Vec<Note> = notes
            .iter()
            .map(|&(p, d)| {
                let n = Note::new(p, t, d);
                t += d;
                n
            })
            .collect();
        let chord = voice_triad(Tonality::major(root).triad_pcs(0), 48);
        Segment::new(
            encode_melody(&ns, 64).unwrap(),
            HarmonySeq::new(vec![chord; 16]),
            Tonality::major(0),
            TimeSignature::FourFour,
        )
        .unwrap()
    }

    fn phrase(base: u8) -> Segment {
        seg_from(&[(base, 8), (base + 2, 8), (base + 4, 16), (base + 5, 8), (base + 4, 8), (base + 2, 16)], 0)
    }

    fn other() -> Segment {
        seg_from(&[(70, 4), (65, 12), (69, 16), (72, 32)], 5)
    }

    #[test]
    fn empty_cache_gives_zeros() {
        let mut cache = FormCache::new();
        assert_eq!(form_factor(&phrase(60), &mut cache, &FormConfig::default()), FormFactorVec::default());
        assert_eq!(cache.len(), 4);
    }

    #[test]
    fn exact_repeat_after_eight_bars() {
        let cfg = FormConfig::default();
        let mut cache = FormCache::new();
        form_factor(&phrase(60), &mut cache, &cfg);
        form_factor(&other(), &mut cache, &cfg);
        let ff = form_factor(&phrase(60), &mut cache, &cfg);
        assert_eq!(ff.melody_rep, Repetition { sign: 1, interval: 8 });
        assert_eq!(ff.chord_rep, Repetition { sign: 1, interval: 8 });
        assert_eq!(ff.rhythm_difference, 0);
    }

    #[test]
    fn octave_shift_is_zone_transform() {
        let cfg = FormConfig::default();
        let mut cache = FormCache::new();
        form_factor(&phrase(60), &mut cache, &cfg);
        let ff = form_factor(&phrase(72), &mut cache, &cfg);
        assert_eq!(ff.zone_transform, 1);
        assert_eq!(ff.melody_rep.sign, 0);
        assert_eq!(ff.tonality_transform, 0);
    }

    #[test]
    fn transposed_repeat_is_tonality_transform() {
        let cfg = FormConfig::default();
        let mut cache = FormCache::new();
        form_factor(&phrase(60), &mut cache, &cfg);
        let ff = form_factor(&phrase(67), &mut cache, &cfg);
        assert_eq!(ff.tonality_transform, 1);
        assert_eq!(ff.zone_transform, 0);
        assert_eq!(ff.melody_rep.sign, 0);
    }

    #[test]
    fn rhythm_difference_on_same_pitches() {
        let cfg = FormConfig::default();
        let mut cache = FormCache::new();
        form_factor(&seg_from(&[(60, 16), (62, 16), (64, 16), (65, 16)], 0), &mut cache, &cfg);
        let ff = form_factor(&seg_from(&[(60, 2), (62, 2), (64, 2), (65, 58)], 0), &mut cache, &cfg);
        assert_eq!(ff.rhythm_difference, 1);
        assert_eq!(ff.melody_rep.sign, 0);
    }

    #[test]
    fn cache_is_bounded() {
        let cfg = FormConfig::default();
        let mut cache = FormCache::new();
        for _ in 0..30 {
            form_factor(&other(), &mut cache, &cfg);
        }
        assert_eq!(cache.len(), FORM_CACHE_BARS);
    }

    #[test]
    fn evicted_bars_do_not_matter() {
        let cfg = FormConfig::default();
        let filler: Vec<Segment> = (0..20).map(|i| seg_from(&[(40 + i as u8, 64)], 0)).collect();
        let mut a = FormCache::new();
        let mut b = FormCache::new();
        form_factor(&phrase(60), &mut a, &cfg);
        form_factor(&other(), &mut b, &cfg);
        for s in &filler {
            form_factor(s, &mut a, &cfg);
            form_factor(s, &mut b, &cfg);
        }
        assert_eq!(a, b);
        assert_eq!(compare(&phrase(60), &a, &cfg), compare(&phrase(60), &b, &cfg));
    }

    #[test]
    fn edit_distance() {
        assert_eq!(normalized_edit_distance::<u8>(&[], &[]), 0.0);
        assert_eq!(normalized_edit_distance(&[1, 2, 3], &[1, 2, 3]), 0.0);
        assert!((normalized_edit_distance(&[1, 2, 3, 4], &[1, 9, 3]) - 0.5).abs() < 1e-12);
    }
}
