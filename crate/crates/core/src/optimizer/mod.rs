//! Hard-EM inference: initialization, the joint objective, reference local
//! search, temporal alignment and the round driver.

mod align;
mod em;
mod init;
mod search;

use serde::{Deserialize, Serialize};

pub use align::{align_dp, brute_force_alignment, segmentation_score, AlignmentProblem, TIE_EPS};
pub use em::{run_em, EMConfig, EStepTrace, EmRun, EmbeddingKind, Mode, RoundRecord, VideoData};
pub use init::{init_graph, legalize_spans};
pub use search::{local_search_references, SearchConfig, SearchOutcome};

use crate::error::{Error, Result};
use crate::graph::ActionGraph;
use crate::linguistic::{LinguisticParams, TokenCache};
use crate::math::{dot, normalized};
use crate::transcript::Transcript;
use crate::visual::similarity::{pair_score, span_pair_sums};
use crate::visual::{FrameSequence, FrameSimilarity, VisualParams, WordEmbedder};

/// Weights on `log P(L|G)` and `log P(V|G)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub linguistic: f64,
    pub visual: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { linguistic: 0.5, visual: 0.5 }
    }
}

/// Which visual likelihood enters the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisualTerm {
    None,
    /// Frames against recursive graph embeddings.
    Embedding,
    /// Frame-to-frame similarity along reference edges.
    Similarity,
}

/// Everything the E-step scores with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    /// Word vectors seen by the linguistic model.
    pub embedder: WordEmbedder,
    pub linguistic: LinguisticParams,
    pub visual: Option<VisualParams>,
    pub similarity: Option<FrameSimilarity>,
}

impl Model {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Span-dependent parts of the score, fixed while references move.
#[derive(Clone, Debug)]
pub struct Grounding {
    temporal: f64,
    /// Embedding term: summed unit frame embeddings per label (0 = background).
    span_sums: Vec<Vec<f64>>,
    /// Similarity term: per linked-pair frame sums.
    pair_sums: Vec<Vec<f64>>,
}

/// Scores graphs of one video under a frozen model.
pub struct VideoScorer<'a> {
    transcript: &'a Transcript,
    frames: Option<&'a FrameSequence>,
    model: &'a Model,
    weights: ScoreWeights,
    term: VisualTerm,
    tokens: TokenCache<'a>,
    phi: Vec<Vec<f64>>,
}

impl<'a> VideoScorer<'a> {
    pub fn new(
        transcript: &'a Transcript,
        frames: Option<&'a FrameSequence>,
        model: &'a Model,
        weights: ScoreWeights,
        term: VisualTerm,
    ) -> Result<Self> {
        let tokens = TokenCache::new(
            &model.embedder,
            transcript.actions.iter().flat_map(|a| a.entities.iter().flat_map(|e| &e.tokens)),
        );
        let mut scorer = Self { transcript, frames, model, weights, term, tokens, phi: Vec::new() };
        if scorer.uses_visual() {
            let frames = frames.ok_or_else(|| Error::Config("visual term needs frames".into()))?;
            if frames.len() != transcript.frames {
                return Err(Error::FrameFormat(format!(
                    "transcript has {} frames, features have {}",
                    transcript.frames,
                    frames.len()
                )));
            }
            match term {
                VisualTerm::Embedding => {
                    let params =
                        model.visual.as_ref().ok_or_else(|| Error::Config("model has no visual parameters".into()))?;
                    scorer.phi = params.project_frames(frames);
                }
                VisualTerm::Similarity => {
                    if model.similarity.is_none() {
                        return Err(Error::Config("model has no frame similarity".into()));
                    }
                }
                VisualTerm::None => {}
            }
        }
        Ok(scorer)
    }

    pub fn weights(&self) -> ScoreWeights {
        self.weights
    }

    pub fn transcript(&self) -> &Transcript {
        self.transcript
    }

    fn uses_visual(&self) -> bool {
        self.weights.visual != 0.0 && self.term != VisualTerm::None
    }

    fn uses_embeddings(&self) -> bool {
        self.uses_visual() && self.term == VisualTerm::Embedding
    }

    fn visual_params(&self) -> &VisualParams {
        self.model.visual.as_ref().expect("checked in new")
    }

    /// Action embeddings when the embedding term is active, else empty.
    pub fn embeddings(&self, graph: &ActionGraph) -> Vec<Vec<f64>> {
        if self.uses_embeddings() {
            self.visual_params().action_embeddings(graph)
        } else {
            Vec::new()
        }
    }

    pub fn refresh(&self, graph: &ActionGraph, cache: &mut Vec<Vec<f64>>, first: usize) {
        if self.uses_embeddings() {
            self.visual_params().refresh_embeddings(graph, cache, first);
        }
    }

    pub fn ground(&self, graph: &ActionGraph) -> Result<Grounding> {
        if graph.num_actions() != self.transcript.actions.len() {
            return Err(Error::ActionCountMismatch {
                graph: graph.num_actions(),
                transcript: self.transcript.actions.len(),
            });
        }
        let ling = &self.model.linguistic;
        let mut g = Grounding { temporal: 0.0, span_sums: Vec::new(), pair_sums: Vec::new() };
        if let Some(spans) = &graph.spans {
            g.temporal = ling.temporal_score(&self.transcript.timestamps(), spans);
        }
        if !self.uses_visual() {
            return Ok(g);
        }
        let frames = self.frames.expect("checked in new");
        let spans = graph.spans.as_ref().ok_or(Error::Ungrounded)?;
        match self.term {
            VisualTerm::Embedding => {
                let labels = graph.frame_labels(frames.len())?;
                let d = self.visual_params().dim();
                let mut sums = vec![vec![0.0; d]; graph.num_actions() + 1];
                for (t, &l) in labels.iter().enumerate() {
                    crate::math::add_assign(&mut sums[l], &self.phi[t]);
                }
                g.span_sums = sums;
            }
            VisualTerm::Similarity => {
                let sim = self.model.similarity.as_ref().expect("checked in new");
                g.pair_sums = span_pair_sums(sim, frames, spans)?;
            }
            VisualTerm::None => {}
        }
        Ok(g)
    }

    fn visual_part(&self, graph: &ActionGraph, grounding: &Grounding, embeddings: &[Vec<f64>]) -> f64 {
        match self.term {
            VisualTerm::Embedding => {
                let p = self.visual_params();
                let mut total = dot(&grounding.span_sums[0], &normalized(&p.background));
                for (sums, f) in grounding.span_sums.iter().zip(embeddings).skip(1) {
                    total += dot(sums, &normalized(f));
                }
                total / p.tau
            }
            VisualTerm::Similarity => pair_score(&grounding.pair_sums, graph),
            VisualTerm::None => 0.0,
        }
    }

    /// Objective for `graph`, given its grounding and embeddings.
    pub fn score(&self, graph: &ActionGraph, grounding: &Grounding, embeddings: &[Vec<f64>]) -> f64 {
        let ling = self.model.linguistic.reference_score(graph, &self.tokens) + grounding.temporal;
        let mut total = self.weights.linguistic * ling;
        if self.uses_visual() {
            total += self.weights.visual * self.visual_part(graph, grounding, embeddings);
        }
        total
    }

    /// Objective from scratch.
    pub fn total(&self, graph: &ActionGraph) -> Result<f64> {
        let grounding = self.ground(graph)?;
        Ok(self.score(graph, &grounding, &self.embeddings(graph)))
    }

    /// Alignment subproblem for fixed references: per-frame, per-label
    /// weighted visual scores and the temporal weight per frame offset.
    pub fn alignment_problem(&self, graph: &ActionGraph) -> Result<AlignmentProblem> {
        let frames = self.frames.ok_or_else(|| Error::Config("alignment needs frames".into()))?;
        let n = graph.num_actions();
        let mut emission = vec![vec![0.0; n + 1]; frames.len()];
        if self.uses_embeddings() {
            let p = self.visual_params();
            let embeddings = self.embeddings(graph);
            let targets: Vec<Vec<f64>> = std::iter::once(normalized(&p.background))
                .chain(embeddings.iter().skip(1).map(|f| normalized(f)))
                .collect();
            for (t, row) in emission.iter_mut().enumerate() {
                for (i, target) in targets.iter().enumerate() {
                    row[i] = self.weights.visual * (dot(&self.phi[t], target) / p.tau);
                }
            }
        }
        let ling = &self.model.linguistic;
        Ok(AlignmentProblem {
            emission,
            timestamps: self.transcript.timestamps(),
            temporal_weight: self.weights.linguistic * ling.weights.temporal / ling.sigma,
        })
    }
}

/// `w_L · log P(L|G) + w_V · log P(V|G)` with the embedding visual term;
/// the visual term is omitted when `frames` is absent.
pub fn total_score(
    graph: &ActionGraph,
    transcript: &Transcript,
    frames: Option<&FrameSequence>,
    model: &Model,
    weights: ScoreWeights,
) -> Result<f64> {
    let term = if frames.is_some() { VisualTerm::Embedding } else { VisualTerm::None };
    VideoScorer::new(transcript, frames, model, weights, term)?.total(graph)
}
