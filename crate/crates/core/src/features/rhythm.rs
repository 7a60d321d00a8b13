use serde::{Deserialize, Serialize};

use crate::model::{MelodyGrid, PitchToken};

/// Run-length view of a melody: each entry is a pitch (or rest) and its length in sixteenths.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RhythmPattern {
    pub entries: Vec<(Option<u8>, u32)>,
}

impl RhythmPattern {
    pub fn total(&self) -> u32 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn durations(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn pitches(&self) -> Vec<Option<u8>> {
        self.entries.iter().map(|e| e.0).collect()
    }
}

/// Whether a re-attacked equal pitch starts a new entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReattackRule {
    #[default]
    Merge,
    Split,
}

pub fn rhythm_pattern(melody: &MelodyGrid, rule: ReattackRule) -> RhythmPattern {
    let mut entries: Vec<(Option<u8>, u32)> = Vec::new();
    for (tok, sounding) in melody.tokens().iter().zip(melody.sounding()) {
        let boundary = rule == ReattackRule::Split && matches!(tok, PitchToken::Pitch(_));
        match entries.last_mut() {
            Some(last) if last.0 == sounding && !boundary => last.1 += 1,
            _ => entries.push((sounding, 1)),
        }
    }
    RhythmPattern { entries }
}
