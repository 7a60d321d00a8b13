use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed melody grid at slot {slot}: {reason}")]
    MalformedGrid { slot: usize, reason: &'static str },

    #[error("overlapping notes at sixteenth {onset}: melody must be monophonic")]
    Polyphony { onset: u32 },

    #[error("pitch {0} outside the playable range 21..=108")]
    PitchRange(u8),

    #[error("chord must hold 1 to 5 distinct pitches, got {0}")]
    ChordSize(usize),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("midi parse error at byte {offset}: {reason}")]
    MidiParse { offset: usize, reason: String },

    #[error("unknown emotion label {0:?}")]
    UnknownLabel(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sequence of {len} tokens exceeds the {limit}-token budget")]
    Budget { len: usize, limit: usize },

    #[error("song too short: {bars} bars, need at least 4")]
    SongTooShort { bars: usize },

    #[error("end of song")]
    EndOfSong,

    #[error("invalid parameter file: {0}")]
    ParamFile(String),

    #[error("{0}")]
    Invalid(String),

    #[error("transport: {0}")]
    Transport(String),

    #[error("neural backend: {0}")]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
