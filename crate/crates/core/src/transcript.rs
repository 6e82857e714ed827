//! Parsed, timestamped instructions: the linguistic observation of a video.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ActionNode, EntityNode, TemporalSpan};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptAction {
    pub predicate: String,
    pub entities: Vec<EntityNode>,
    /// Caption time-stamp in frames.
    pub timestamp: TemporalSpan,
    pub yields_location: bool,
}

impl TranscriptAction {
    pub fn to_action_node(&self) -> ActionNode {
        ActionNode {
            predicate: self.predicate.clone(),
            entities: self.entities.clone(),
            yields_location: self.yields_location,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    /// Video length in frames.
    pub frames: usize,
    pub fps: f64,
    pub actions: Vec<TranscriptAction>,
}

impl Transcript {
    pub fn timestamps(&self) -> Vec<TemporalSpan> {
        self.actions.iter().map(|a| a.timestamp).collect()
    }

    /// Time-stamps lie within the video and are sorted by start frame.
    pub fn check(&self) -> Result<()> {
        for (i, a) in self.actions.iter().enumerate() {
            let ts = a.timestamp;
            if ts.end < ts.start || ts.end >= self.frames {
                return Err(Error::SpanOutOfBounds { action: i + 1, span: (ts.start, ts.end), frames: self.frames });
            }
        }
        if self.actions.windows(2).any(|w| w[1].timestamp.start < w[0].timestamp.start) {
            return Err(Error::InvalidGraph("transcript actions are not sorted by start time".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TranscriptDoc::from(self)).expect("transcript serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: TranscriptDoc = serde_json::from_str(s)?;
        Ok(doc.into())
    }
}

#[derive(Serialize, Deserialize)]
struct ActionDoc {
    predicate: String,
    entities: Vec<EntityNode>,
    timestamp: [usize; 2],
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    yields_location: bool,
}

#[derive(Serialize, Deserialize)]
struct TranscriptDoc {
    frames: usize,
    fps: f64,
    actions: Vec<ActionDoc>,
}

impl From<&Transcript> for TranscriptDoc {
    fn from(t: &Transcript) -> Self {
        TranscriptDoc {
            frames: t.frames,
            fps: t.fps,
            actions: t
                .actions
                .iter()
                .map(|a| ActionDoc {
                    predicate: a.predicate.clone(),
                    entities: a.entities.clone(),
                    timestamp: [a.timestamp.start, a.timestamp.end],
                    yields_location: a.yields_location,
                })
                .collect(),
        }
    }
}

impl From<TranscriptDoc> for Transcript {
    fn from(d: TranscriptDoc) -> Self {
        Transcript {
            frames: d.frames,
            fps: d.fps,
            actions: d
                .actions
                .into_iter()
                .map(|a| TranscriptAction {
                    predicate: a.predicate,
                    entities: a.entities,
                    timestamp: TemporalSpan::new(a.timestamp[0], a.timestamp[1]),
                    yields_location: a.yields_location,
                })
                .collect(),
        }
    }
}
