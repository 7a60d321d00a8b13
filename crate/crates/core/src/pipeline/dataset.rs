use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    downsample, sample_every, DownsampledMelody, EmotionSeq, Granularity, HarmonySeq, MelodyGrid, Segment, TimeSignature,
    Tonality, SLOTS_PER_BEAT,
};

/// One serialized four-bar training unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPiece {
    /// Originating file, when known; consecutive pieces of one source form a song.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default)]
    pub index: usize,
    pub tonality: Tonality,
    #[serde(default)]
    pub time_signature: TimeSignature,
    pub melody: MelodyGrid,
    pub melody_ds: DownsampledMelody,
    pub harmony: HarmonySeq,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionSeq>,
}

impl DatasetPiece {
    pub fn from_segment(seg: &Segment, emotion: Option<EmotionSeq>) -> Self {
        DatasetPiece {
            source: None,
            index: 0,
            tonality: seg.tonality,
            time_signature: seg.time_signature,
            melody: seg.melody.clone(),
            melody_ds: downsample(&seg.melody, Granularity::Beat, seg.time_signature),
            harmony: seg.harmony.clone(),
            emotion,
        }
    }

    pub fn segment(&self) -> Result<Segment> {
        Segment::new(self.melody.clone(), self.harmony.clone(), self.tonality, self.time_signature)
    }

    /// Checks that every component agrees on the segment layout.
    pub fn validate(&self) -> Result<()> {
        let seg = self.segment()?;
        let stride = self.melody_ds.stride;
        if stride != SLOTS_PER_BEAT && stride != self.time_signature.slots_per_bar() {
            return Err(Error::Invalid(format!("unsupported downsample stride {stride}")));
        }
        if sample_every(&seg.melody, stride) != self.melody_ds {
            return Err(Error::Invalid("downsampled melody disagrees with melody".into()));
        }
        if let Some(e) = &self.emotion {
            if e.len() != seg.beats() {
                return Err(Error::LengthMismatch { expected: seg.beats(), actual: e.len() });
            }
        }
        Ok(())
    }
}

pub fn write_pieces<'a>(path: &Path, pieces: impl IntoIterator<Item = &'a DatasetPiece>) -> Result<usize> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0;
    for p in pieces {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Reads line-delimited pieces. Malformed lines are skipped and counted.
pub fn read_pieces(path: &Path) -> Result<(Vec<DatasetPiece>, usize)> {
    let reader = BufReader::new(File::open(path)?);
    let mut pieces = Vec::new();
    let mut skipped = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DatasetPiece>(&line).map_err(Error::from).and_then(|p| p.validate().map(|_| p)) {
            Ok(p) => pieces.push(p),
            Err(e) => {
                warn!("{}:{}: skipping malformed piece: {e}", path.display(), lineno + 1);
                skipped += 1;
            }
        }
    }
    Ok((pieces, skipped))
}
