//! Visual model: frames are scored against recursive action-graph
//! embeddings in a joint space.
//!
//! The embedding of action `i` feeds its predicate vector and, for every
//! entity, the entity's word vector plus the embedding of the action it
//! references through a [`SequenceEncoder`]:
//!
//! ```text
//! f(a_0) = 0
//! f(a_i) = g([W(pred_i), W(e_i1) + f(a_{r_i1}), W(e_i2) + f(a_{r_i2}), ...])
//! ```
//!
//! A frame's log-score under subgraph `H_i` is `cos(φ(x_t), f(a_i)) / τ`,
//! with `b_0` standing in for `f` on background frames. The normalizer is
//! shared by all hypotheses for a frame and is dropped.

mod embedder;
mod encoder;
mod frames;
pub mod similarity;
pub mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use embedder::WordEmbedder;
pub use encoder::{EncoderTape, SequenceEncoder};
pub use frames::{FrameSequence, FRAMES_MAGIC};
pub use similarity::{fes_score, rfes_score, FrameSimilarity};
pub use train::{train_triplets, TrainReport, TripletConfig};

use crate::error::{Error, Result};
use crate::graph::ActionGraph;
use crate::math::{add_assign, cosine, dot, matvec, norm, normalized};

pub const DEFAULT_EMBED_DIM: usize = 32;
pub const DEFAULT_TAU: f64 = 0.75;

/// Learnable parameters of the visual model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualParams {
    pub embedder: WordEmbedder,
    /// Trainable offsets added to the embedder's vectors.
    #[serde(with = "embedder::override_table")]
    pub word_deltas: BTreeMap<String, Vec<f64>>,
    pub encoder: SequenceEncoder,
    pub feature_dim: usize,
    /// `dim × feature_dim`, row-major.
    #[serde(with = "crate::codec::blob")]
    pub projection: Vec<f64>,
    #[serde(with = "crate::codec::blob")]
    pub background: Vec<f64>,
    pub tau: f64,
    /// When false, entities ignore their origins (plain sentence embedding).
    pub reference_aware: bool,
}

impl VisualParams {
    /// Encoder, projection and background drawn from uniform(-0.1, 0.1).
    pub fn init(embedder: WordEmbedder, feature_dim: usize, tau: f64, seed: u64) -> Self {
        Self::init_scaled(embedder, feature_dim, tau, 0.1, seed)
    }

    pub fn init_scaled(embedder: WordEmbedder, feature_dim: usize, tau: f64, scale: f64, seed: u64) -> Self {
        let dim = embedder.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = SequenceEncoder::init(dim, scale, rng.random());
        let projection = (0..dim * feature_dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        let background = (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        Self {
            embedder,
            word_deltas: BTreeMap::new(),
            encoder,
            feature_dim,
            projection,
            background,
            tau,
            reference_aware: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    pub fn word(&self, token: &str) -> Vec<f64> {
        let mut v = self.embedder.token(token);
        if let Some(delta) = self.word_deltas.get(token) {
            add_assign(&mut v, delta);
        }
        v
    }

    /// Mean of the surface's word vectors; zero for an implicit entity.
    pub fn surface(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        if tokens.is_empty() {
            return acc;
        }
        for t in tokens {
            add_assign(&mut acc, &self.word(t));
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|x| *x /= n);
        acc
    }

    /// Encoder inputs for action `i` (1-based) given the embeddings of all
    /// earlier actions.
    pub(crate) fn action_inputs(
        &self,
        graph: &ActionGraph,
        i: usize,
        origins: &[usize],
        earlier: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let action = &graph.actions[i - 1];
        let mut inputs = Vec::with_capacity(action.entities.len() + 1);
        inputs.push(self.word(&action.predicate));
        for (e, &o) in action.entities.iter().zip(origins) {
            let mut v = self.surface(&e.tokens);
            if self.reference_aware && o > 0 {
                add_assign(&mut v, &earlier[o]);
            }
            inputs.push(v);
        }
        inputs
    }

    /// `f(a_0), f(a_1), ..., f(a_N)`, each computed once.
    pub fn action_embeddings(&self, graph: &ActionGraph) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim()]];
        self.extend_embeddings(graph, &graph.origins(), &mut out);
        out
    }

    /// Recomputes `f(a_first..)` in place, keeping the cached prefix.
    pub fn refresh_embeddings(&self, graph: &ActionGraph, cache: &mut Vec<Vec<f64>>, first: usize) {
        cache.truncate(first.max(1));
        self.extend_embeddings(graph, &graph.origins(), cache);
    }

    fn extend_embeddings(&self, graph: &ActionGraph, origins: &[Vec<usize>], out: &mut Vec<Vec<f64>>) {
        for i in out.len()..=graph.num_actions() {
            let inputs = self.action_inputs(graph, i, &origins[i - 1], out);
            out.push(self.encoder.forward(&inputs));
        }
    }

    /// `f(a_i)` for `1 ≤ i ≤ |A|`.
    pub fn graph_embed(&self, graph: &ActionGraph, i: usize) -> Result<Vec<f64>> {
        if i == 0 || i > graph.num_actions() {
            return Err(Error::ActionOutOfRange { index: i, len: graph.num_actions() });
        }
        let prefix = graph.subgraph(i)?.to_graph();
        Ok(self.action_embeddings(&prefix).swap_remove(i))
    }

    /// Linear projection of a frame, scaled to unit length (zero stays zero).
    pub fn frame_embed(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.dim()];
        matvec(&self.projection, self.dim(), self.feature_dim, x, &mut u);
        normalized(&u)
    }

    pub fn project_frames(&self, frames: &FrameSequence) -> Vec<Vec<f64>> {
        (0..frames.len()).map(|t| self.frame_embed(&frames.row_f64(t))).collect()
    }

    /// Unnormalized `log P(x_t | H_i)`.
    pub fn frame_logp(&self, x: &[f64], graph: &ActionGraph, i: usize) -> Result<f64> {
        let target = if i == 0 { self.background.clone() } else { self.graph_embed(graph, i)? };
        Ok(cosine(&self.frame_embed(x), &target) / self.tau)
    }

    /// `Σ_t log P(x_t | H_{z̄_t})` over every frame.
    pub fn visual_score(&self, frames: &FrameSequence, graph: &ActionGraph) -> Result<f64> {
        let labels = graph.frame_labels(frames.len())?;
        let embeddings = self.action_embeddings(graph);
        let phi = self.project_frames(frames);
        Ok(FrameScores::new(self, &phi, &embeddings).labelled_sum(&labels))
    }
}

/// Per-frame scores `cos(φ_t, target_i)/τ` against a fixed set of targets,
/// with `target_0 = b_0`.
pub struct FrameScores {
    /// `scores[t][i]`
    pub scores: Vec<Vec<f64>>,
}

impl FrameScores {
    pub fn new(params: &VisualParams, phi: &[Vec<f64>], embeddings: &[Vec<f64>]) -> Self {
        let targets: Vec<Vec<f64>> = std::iter::once(normalized(&params.background))
            .chain(embeddings.iter().skip(1).map(|f| normalized(f)))
            .collect();
        let scores = phi
            .iter()
            .map(|p| targets.iter().map(|tgt| if norm(p) == 0.0 { 0.0 } else { dot(p, tgt) / params.tau }).collect())
            .collect();
        Self { scores }
    }

    pub fn labelled_sum(&self, labels: &[usize]) -> f64 {
        labels.iter().enumerate().map(|(t, &l)| self.scores[t][l]).sum()
    }
}
