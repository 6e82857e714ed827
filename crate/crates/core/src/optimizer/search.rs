use serde::{Deserialize, Serialize};

use super::{Model, ScoreWeights, VideoScorer, VisualTerm};
use crate::error::Result;
use crate::graph::{ActionGraph, CompatibilityRule, MoveSet};
use crate::transcript::Transcript;
use crate::visual::FrameSequence;

/// Minimum gain for a move to count as an improvement.
const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub compat: CompatibilityRule,
    pub move_set: MoveSet,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { compat: CompatibilityRule::Typed, move_set: MoveSet::SwapsOnly }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub graph: ActionGraph,
    /// Objective before the first pass, then after every applied move.
    pub scores: Vec<f64>,
}

impl SearchOutcome {
    pub fn score(&self) -> f64 {
        *self.scores.last().expect("at least the starting score")
    }

    pub fn passes(&self) -> usize {
        self.scores.len() - 1
    }
}

impl VideoScorer<'_> {
    /// Best-improvement hill climbing over reference moves. Each pass applies
    /// the highest-scoring strictly improving move, earliest in enumeration
    /// order on ties; spans are never touched.
    pub fn local_search(&self, graph: &ActionGraph, config: &SearchConfig) -> Result<SearchOutcome> {
        let grounding = self.ground(graph)?;
        let mut current = graph.clone();
        let mut embeddings = self.embeddings(&current);
        let mut score = self.score(&current, &grounding, &embeddings);
        let mut scores = vec![score];
        let mut scratch = Vec::new();
        loop {
            let mut best: Option<(f64, crate::graph::Move, Vec<Vec<f64>>)> = None;
            for mv in current.enumerate_moves(config.compat, config.move_set) {
                current.apply_move_in_place(&mv)?;
                scratch.clone_from(&embeddings);
                self.refresh(&current, &mut scratch, mv.first_action());
                let s = self.score(&current, &grounding, &scratch);
                current.apply_move_in_place(&mv.reverse())?;
                let threshold = best.as_ref().map_or(score + IMPROVEMENT_EPS, |b| b.0);
                if s > threshold {
                    best = Some((s, mv, std::mem::take(&mut scratch)));
                }
            }
            match best {
                Some((s, mv, emb)) => {
                    current.apply_move_in_place(&mv)?;
                    embeddings = emb;
                    score = s;
                    scores.push(score);
                }
                None => break,
            }
        }
        Ok(SearchOutcome { graph: current, scores })
    }
}

/// Hill climbing under the embedding visual term (or linguistic only when
/// `frames` is absent).
pub fn local_search_references(
    graph: &ActionGraph,
    transcript: &Transcript,
    frames: Option<&FrameSequence>,
    model: &Model,
    weights: ScoreWeights,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    let term = if frames.is_some() { VisualTerm::Embedding } else { VisualTerm::None };
    VideoScorer::new(transcript, frames, model, weights, term)?.local_search(graph, config)
}
