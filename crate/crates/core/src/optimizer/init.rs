use crate::error::{Error, Result};
use crate::graph::{ActionGraph, CompatibilityRule, SemanticType, TemporalSpan};
use crate::transcript::Transcript;

/// Sequential initialization. Each action's outcome is taken by the first
/// entity of the next action that may reference it; Location entities
/// otherwise point at the nearest earlier location-producing action;
/// everything else starts at a₀. Spans are the transcript time-stamps.
pub fn init_graph(transcript: &Transcript) -> Result<ActionGraph> {
    if transcript.actions.is_empty() {
        return Err(Error::EmptyTranscript);
    }
    let actions: Vec<_> = transcript.actions.iter().map(|a| a.to_action_node()).collect();
    let compat = CompatibilityRule::Typed;
    let mut origins = Vec::with_capacity(actions.len());
    for (k, action) in actions.iter().enumerate() {
        let i = k + 1;
        let location_source = (1..i).rev().find(|&o| actions[o - 1].yields_location).unwrap_or(0);
        let mut os: Vec<usize> =
            action.entities.iter().map(|e| if e.sem == SemanticType::Location { location_source } else { 0 }).collect();
        if i >= 2 {
            if let Some(j) = action.entities.iter().position(|e| compat.allows(&actions, e, i - 1)) {
                os[j] = i - 1;
            }
        }
        origins.push(os);
    }
    let spans = legalize_spans(&transcript.timestamps(), transcript.frames)?;
    Ok(ActionGraph::from_origins(actions, &origins).with_spans(spans))
}

/// Pushes each span past its predecessor so spans are disjoint and ordered,
/// keeping at least one frame per action.
pub fn legalize_spans(spans: &[TemporalSpan], frames: usize) -> Result<Vec<TemporalSpan>> {
    if frames < spans.len() {
        return Err(Error::TooFewFrames { actions: spans.len(), frames });
    }
    let n = spans.len();
    let mut out: Vec<TemporalSpan> = Vec::with_capacity(n);
    for (k, s) in spans.iter().enumerate() {
        // leave room for the remaining actions
        let latest = frames - (n - k);
        let mut start = s.start.min(latest);
        if let Some(prev) = out.last() {
            start = start.max(prev.end + 1);
        }
        let end = s.end.max(start).min(latest.max(start));
        out.push(TemporalSpan::new(start, end));
    }
    Ok(out)
}
