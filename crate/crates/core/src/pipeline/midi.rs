//! Standard MIDI File reading (formats 0 and 1) and multi-track writing.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

pub const DEFAULT_PPQ: u16 = 480;

/// A note with times measured in quarter-note beats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedNote {
    pub pitch: u8,
    pub velocity: u8,
    pub channel: u8,
    pub start: f64,
    pub duration: f64,
}

impl TimedNote {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MidiTrack {
    pub name: Option<String>,
    pub notes: Vec<TimedNote>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSigEvent {
    pub beat: f64,
    pub numerator: u8,
    pub denominator: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MidiFile {
    pub format: u16,
    pub ppq: u16,
    /// Tracks that contain at least one note.
    pub tracks: Vec<MidiTrack>,
    /// First tempo event, beats per minute.
    pub tempo_bpm: Option<f64>,
    pub time_signatures: Vec<TimeSigEvent>,
    /// Sharps/flats count and minor flag of the first key signature.
    pub key_signature: Option<(i8, bool)>,
    pub warnings: Vec<String>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::MidiParse { offset: self.pos, reason: reason.into() })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return self.err(format!("unexpected end of data reading {n} bytes"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        self.err("variable-length quantity longer than 4 bytes")
    }
}

pub fn parse_midi(bytes: &[u8]) -> Result<MidiFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != b"MThd" {
        r.pos = 0;
        return r.err("missing MThd header");
    }
    let hlen = r.u32()? as usize;
    if hlen < 6 {
        return r.err("header chunk shorter than 6 bytes");
    }
    let format = r.u16()?;
    let ntrks = r.u16()?;
    let division = r.u16()?;
    r.take(hlen - 6)?;
    if format > 1 {
        return r.err(format!("unsupported format {format}"));
    }
    if division & 0x8000 != 0 || division == 0 {
        return r.err("SMPTE or zero time division is not supported");
    }
    let mut file = MidiFile { format, ppq: division, ..Default::default() };
    let ppq = division as f64;

    for _ in 0..ntrks {
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if id != b"MTrk" {
            // unknown chunk types are skipped per the SMF rules
            r.take(len)?;
            continue;
        }
        let start = r.pos;
        let end = start.checked_add(len).filter(|&e| e <= bytes.len());
        let Some(end) = end else {
            return r.err("track length runs past end of file");
        };
        let mut track = MidiTrack::default();
        let mut tick: u64 = 0;
        let mut running: Option<u8> = None;
        let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();

        while r.pos < end {
            tick += r.vlq()? as u64;
            let mut status = r.u8()?;
            if status < 0x80 {
                match running {
                    Some(s) => {
                        status = s;
                        r.pos -= 1;
                    }
                    None => return r.err("data byte without running status"),
                }
            }
            match status {
                0xff => {
                    let kind = r.u8()?;
                    let len = r.vlq()? as usize;
                    let data = r.take(len)?;
                    let beat = tick as f64 / ppq;
                    match kind {
                        0x03 if track.name.is_none() => track.name = Some(String::from_utf8_lossy(data).into_owned()),
                        0x51 if len == 3 && file.tempo_bpm.is_none() => {
                            let us = ((data[0] as u32) << 16) | ((data[1] as u32) << 8) | data[2] as u32;
                            if us > 0 {
                                file.tempo_bpm = Some(60_000_000.0 / us as f64);
                            }
                        }
                        0x58 if len >= 2 => file.time_signatures.push(TimeSigEvent {
                            beat,
                            numerator: data[0],
                            denominator: 1u8.checked_shl(data[1] as u32).unwrap_or(0),
                        }),
                        0x59 if len == 2 && file.key_signature.is_none() => {
                            file.key_signature = Some((data[0] as i8, data[1] == 1))
                        }
                        0x2f => break,
                        _ => {}
                    }
                }
                0xf0 | 0xf7 => {
                    let len = r.vlq()? as usize;
                    r.take(len)?;
                }
                0x80..=0xef => {
                    running = Some(status);
                    let kind = status & 0xf0;
                    let channel = status & 0x0f;
                    let d1 = r.u8()?;
                    if kind == 0xc0 || kind == 0xd0 {
                        continue;
                    }
                    let d2 = r.u8()?;
                    if d1 > 127 || d2 > 127 {
                        r.pos -= 2;
                        return r.err("data byte above 127");
                    }
                    match kind {
                        0x90 if d2 > 0 => open.entry((channel, d1)).or_default().push_back((tick, d2)),
                        0x80 | 0x90 => match open.get_mut(&(channel, d1)).and_then(|q| q.pop_front()) {
                            Some((on, velocity)) => track.notes.push(TimedNote {
                                pitch: d1,
                                velocity,
                                channel,
                                start: on as f64 / ppq,
                                duration: (tick - on) as f64 / ppq,
                            }),
                            None => file
                                .warnings
                                .push(format!("unmatched note-off for pitch {d1} at byte {}", r.pos - 2)),
                        },
                        _ => {}
                    }
                }
                _ => return r.err(format!("unexpected status byte {status:#04x}")),
            }
        }
        for ((channel, pitch), q) in open {
            for (on, velocity) in q {
                file.warnings.push(format!("note {pitch} never released; closed at track end"));
                track.notes.push(TimedNote {
                    pitch,
                    velocity,
                    channel,
                    start: on as f64 / ppq,
                    duration: (tick - on) as f64 / ppq,
                });
            }
        }
        track.notes.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.pitch.cmp(&b.pitch)));
        r.pos = end;
        if !track.notes.is_empty() {
            file.tracks.push(track);
        }
    }
    Ok(file)
}

/// A note placed in ticks for writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct TickNote {
    pub pitch: u8,
    pub velocity: u8,
    pub start: u32,
    pub duration: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct OutTrack {
    pub name: String,
    pub channel: u8,
    pub program: u8,
    pub notes: Vec<TickNote>,
}

fn push_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut stack = vec![(v & 0x7f) as u8];
    v >>= 7;
    while v > 0 {
        stack.push(((v & 0x7f) as u8) | 0x80);
        v >>= 7;
    }
    out.extend(stack.iter().rev());
}

fn chunk(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
}

/// Writes a format-1 file: a conductor track followed by one track per `tracks` entry.
pub fn write_midi(tracks: &[OutTrack], bpm: f64, beats_per_bar: u8, ppq: u16) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(tracks.len() as u16 + 1).to_be_bytes());
    out.extend_from_slice(&ppq.to_be_bytes());

    let mut conductor = Vec::new();
    let us = (60_000_000.0 / bpm).round() as u32;
    conductor.extend_from_slice(&[0, 0xff, 0x51, 3]);
    conductor.extend_from_slice(&us.to_be_bytes()[1..]);
    conductor.extend_from_slice(&[0, 0xff, 0x58, 4, beats_per_bar, 2, 24, 8]);
    conductor.extend_from_slice(&[0, 0xff, 0x2f, 0]);
    chunk(&mut out, &conductor);

    for t in tracks {
        let mut body = Vec::new();
        body.extend_from_slice(&[0, 0xff, 0x03]);
        push_vlq(&mut body, t.name.len() as u32);
        body.extend_from_slice(t.name.as_bytes());
        let ch = t.channel & 0x0f;
        body.extend_from_slice(&[0, 0xc0 | ch, t.program & 0x7f]);

        // (tick, is_on, pitch, velocity); offs sort before ons at equal ticks
        let mut events: Vec<(u32, bool, u8, u8)> = Vec::with_capacity(t.notes.len() * 2);
        for n in &t.notes {
            events.push((n.start, true, n.pitch, n.velocity.max(1)));
            events.push((n.start + n.duration, false, n.pitch, 0));
        }
        events.sort_by_key(|&(tick, on, pitch, _)| (tick, on, pitch));
        let mut last = 0;
        for (tick, on, pitch, vel) in events {
            push_vlq(&mut body, tick - last);
            last = tick;
            if on {
                body.extend_from_slice(&[0x90 | ch, pitch & 0x7f, vel & 0x7f]);
            } else {
                body.extend_from_slice(&[0x80 | ch, pitch & 0x7f, 0]);
            }
        }
        body.extend_from_slice(&[0, 0xff, 0x2f, 0]);
        chunk(&mut out, &body);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two tracks: a melody C4-D4 (one beat each) and a sustained C-E-G block, 96 ppq.
    const TWO_TRACK: &[u8] = &[
        b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 1, 0, 2, 0, 96, //
        b'M', b'T', b'r', b'k', 0, 0, 0, 37, //
        0x00, 0xff, 0x03, 6, b'm', b'e', b'l', b'o', b'd', b'y', //
        0x00, 0xff, 0x58, 4, 4, 2, 24, 8, //
        0x00, 0x90, 60, 100, //
        0x60, 0x80, 60, 0, //
        0x00, 0x90, 62, 100, //
        0x60, 62, 0, // running status note-on velocity 0
        0x00, 0xff, 0x2f, 0, //
        b'M', b'T', b'r', b'k', 0, 0, 0, 34, //
        0x00, 0xff, 0x03, 5, b'c', b'h', b'o', b'r', b'd', //
        0x00, 0x91, 48, 80, //
        0x00, 52, 80, //
        0x00, 55, 80, //
        0x81, 0x40, 0x81, 48, 0, //
        0x00, 52, 0, //
        0x00, 55, 0, //
        0x00, 0xff, 0x2f, 0,
    ];

    #[test]
    fn single_note() {
        let track = OutTrack {
            name: "m".into(),
            channel: 0,
            program: 0,
            notes: vec![TickNote { pitch: 60, velocity: 90, start: 0, duration: 480 }],
        };
        let f = parse_midi(&write_midi(&[track], 120.0, 4, 480)).unwrap();
        assert_eq!(f.tracks.len(), 1);
        let n = f.tracks[0].notes[0];
        assert_eq!((n.pitch, n.start, n.duration), (60, 0.0, 1.0));
        assert_eq!(f.tempo_bpm, Some(120.0));
    }

    #[test]
    fn empty_track_list() {
        let bytes = [b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 1, 0, 0, 1, 224];
        assert!(parse_midi(&bytes).unwrap().tracks.is_empty());
    }

    #[test]
    fn two_track_fixture() {
        let f = parse_midi(TWO_TRACK).unwrap();
        assert!(f.warnings.is_empty(), "{:?}", f.warnings);
        assert_eq!(f.tracks.len(), 2);
        assert_eq!(f.tracks[0].name.as_deref(), Some("melody"));
        let m: Vec<(u8, f64, f64)> = f.tracks[0].notes.iter().map(|n| (n.pitch, n.start, n.duration)).collect();
        assert_eq!(m, vec![(60, 0.0, 1.0), (62, 1.0, 1.0)]);
        let c = &f.tracks[1].notes;
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|n| n.start == 0.0 && n.duration == 2.0 && n.channel == 1));
        assert_eq!(f.time_signatures[0].numerator, 4);
        assert_eq!(f.time_signatures[0].denominator, 4);
    }

    #[test]
    fn corrupt_header_reports_offset() {
        match parse_midi(b"MThd\0\0\0\x06\0\x01") {
            Err(Error::MidiParse { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_midi(b"RIFF...."), Err(Error::MidiParse { offset: 0, .. })));
        let mut truncated = TWO_TRACK.to_vec();
        truncated.truncate(40);
        assert!(matches!(parse_midi(&truncated), Err(Error::MidiParse { .. })));
    }

    #[test]
    fn unmatched_note_off_warns() {
        let bytes = [
            b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 0, 0, 1, 0, 96, //
            b'M', b'T', b'r', b'k', 0, 0, 0, 16, //
            0x00, 0x80, 64, 0, //
            0x00, 0x90, 60, 90, //
            0x60, 0x80, 60, 0, //
            0x00, 0xff, 0x2f, 0,
        ];
        let f = parse_midi(&bytes).unwrap();
        assert_eq!(f.warnings.len(), 1);
        assert_eq!(f.tracks[0].notes.len(), 1);
    }

    #[test]
    fn vlq_encoding() {
        for (v, enc) in [(0u32, vec![0u8]), (0x40, vec![0x40]), (0x7f, vec![0x7f]), (0x80, vec![0x81, 0x00]), (0x3fff, vec![0xff, 0x7f])] {
            let mut out = Vec::new();
            push_vlq(&mut out, v);
            assert_eq!(out, enc);
        }
    }
}
