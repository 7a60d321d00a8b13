//! JSON text frames exchanged over the websocket, tagged by `"type"`.

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{segment_midi, BackendKind, StepResult};
use crate::fusion::FusionKind;
use crate::metrics::MetricReport;
use crate::model::{EmotionSeq, EmotionVA, Granularity};
use crate::pipeline::{Song, DEFAULT_PPQ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    /// A catalog id, or a base64-encoded MIDI file.
    SelectSong {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        midi: Option<String>,
    },
    SetConfig {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fusion: Option<FusionKind>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backend: Option<BackendKind>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        granularity: Option<Granularity>,
    },
    Target {
        v: f64,
        a: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Va {
    pub v: f64,
    pub a: f64,
}

impl From<EmotionVA> for Va {
    fn from(e: EmotionVA) -> Self {
        Va { v: e.valence(), a: e.arousal() }
    }
}

/// A note of the rendered segment; times in beats from the segment start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteFrame {
    /// 0 melody, 1 accompaniment.
    pub track: u8,
    pub pitch: u8,
    pub velocity: u8,
    pub start: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadFrame,
    NoSong,
    UnknownSong,
    BadMidi,
    Config,
    StepFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Segment {
        bar_index: usize,
        notes: Vec<NoteFrame>,
        /// Recognized emotion of this segment, averaged over beats.
        recognized: Va,
        /// Fused conditioning, averaged over beats.
        fused: Va,
        latency_ms: f64,
        /// The same segment as a base64 MIDI file.
        midi: String,
    },
    Metrics {
        steps: usize,
        pcc: f64,
        cec: f64,
        mctc: f64,
        overall: f64,
        similarity: f64,
        rtfit: f64,
    },
    Error {
        code: ErrorCode,
        msg: String,
    },
    EndOfSong {},
}

fn mean_va(seq: &EmotionSeq) -> Va {
    seq.mean().map(Va::from).unwrap_or(Va { v: 0.0, a: 0.0 })
}

impl ServerFrame {
    pub fn error(code: ErrorCode, msg: impl Into<String>) -> Self {
        ServerFrame::Error { code, msg: msg.into() }
    }

    pub fn segment(step: &StepResult, song: &Song) -> Self {
        let ppq = DEFAULT_PPQ as f64;
        let notes = [(0u8, &step.texture.melody), (1u8, &step.texture.accompaniment)]
            .into_iter()
            .flat_map(|(track, notes)| {
                notes.iter().map(move |n| NoteFrame {
                    track,
                    pitch: n.pitch,
                    velocity: n.velocity,
                    start: n.start as f64 / ppq,
                    duration: n.duration as f64 / ppq,
                })
            })
            .collect();
        ServerFrame::Segment {
            bar_index: step.bar_index,
            notes,
            recognized: mean_va(&step.recognized),
            fused: mean_va(&step.fused),
            latency_ms: step.latency_ms,
            midi: base64::engine::general_purpose::STANDARD.encode(segment_midi(&step.texture, song)),
        }
    }

    pub fn metrics(report: &MetricReport, steps: usize) -> Self {
        ServerFrame::Metrics {
            steps,
            pcc: report.pcc,
            cec: report.cec,
            mctc: report.mctc,
            overall: report.overall,
            similarity: report.similarity,
            rtfit: report.rtfit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_frames_parse() {
        let f: ClientFrame = serde_json::from_str(r#"{"type":"target","v":0.5,"a":-0.25}"#).unwrap();
        assert_eq!(f, ClientFrame::Target { v: 0.5, a: -0.25 });
        let f: ClientFrame = serde_json::from_str(r#"{"type":"select_song","id":"demo"}"#).unwrap();
        assert_eq!(f, ClientFrame::SelectSong { id: Some("demo".into()), midi: None });
        let f: ClientFrame = serde_json::from_str(r#"{"type":"set_config","fusion":"median","granularity":"bar"}"#).unwrap();
        assert_eq!(f, ClientFrame::SetConfig { fusion: Some(FusionKind::Median), backend: None, granularity: Some(Granularity::Bar) });
        assert!(serde_json::from_str::<ClientFrame>(r#"{"type":"dance"}"#).is_err());
        assert!(serde_json::from_str::<ClientFrame>(r#"{"type":"target","v":"x","a":0}"#).is_err());
    }

    #[test]
    fn server_frames_roundtrip() {
        let frames = vec![
            ServerFrame::EndOfSong {},
            ServerFrame::error(ErrorCode::NoSong, "select a song first"),
            ServerFrame::Metrics { steps: 2, pcc: 0.1, cec: 0.2, mctc: 0.3, overall: 13.4, similarity: 7.0, rtfit: 2.0 },
        ];
        for f in frames {
            let s = serde_json::to_string(&f).unwrap();
            assert_eq!(serde_json::from_str::<ServerFrame>(&s).unwrap(), f);
        }
        assert_eq!(serde_json::to_string(&ServerFrame::EndOfSong {}).unwrap(), r#"{"type":"end_of_song"}"#);
        let e = serde_json::to_value(ServerFrame::error(ErrorCode::BadFrame, "x")).unwrap();
        assert_eq!(e["code"], "bad_frame");
    }
}
