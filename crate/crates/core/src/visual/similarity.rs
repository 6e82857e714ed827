//! Frame-to-frame similarity baselines.
//!
//! A graph is scored by how alike the frames of reference-linked actions
//! look: `Σ_{(o,i) linked} Σ_{t ∈ span(o)} Σ_{u ∈ span(i)} log s(x_t, x_u)`
//! with `s = (1 + cos)/2` floored at [`MIN_SIMILARITY`]. The frozen variant
//! keeps its initial projection; the trained variant is refit on frame
//! triplets drawn from the current graphs.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{Adam, AdamSlots};
use super::FrameSequence;
use crate::error::{Error, Result};
use crate::graph::{ActionGraph, TemporalSpan};
use crate::math::{cosine, cosine_grad_acc, dot, matvec, normalized, outer_acc};

pub const MIN_SIMILARITY: f64 = 1e-6;

/// Linear frame projection used by the similarity baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSimilarity {
    pub feature_dim: usize,
    pub dim: usize,
    #[serde(with = "crate::codec::blob")]
    pub projection: Vec<f64>,
}

impl FrameSimilarity {
    pub fn init(feature_dim: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..dim * feature_dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        Self { feature_dim, dim, projection }
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        matvec(&self.projection, self.dim, self.feature_dim, x, &mut u);
        u
    }

    pub fn embed_frames(&self, frames: &FrameSequence) -> Vec<Vec<f64>> {
        (0..frames.len()).map(|t| normalized(&self.project(&frames.row_f64(t)))).collect()
    }

    pub fn similarity(&self, a: &[f64], b: &[f64]) -> f64 {
        shifted(cosine(&self.project(a), &self.project(b)))
    }
}

fn shifted(cos: f64) -> f64 {
    ((1.0 + cos) / 2.0).max(MIN_SIMILARITY)
}

/// Distinct `(origin, action)` pairs joined by a reference, origin ≥ 1.
pub fn linked_pairs(graph: &ActionGraph) -> BTreeSet<(usize, usize)> {
    graph.references.iter().filter(|r| r.origin >= 1).map(|r| (r.origin, r.action)).collect()
}

/// `sums[o][i]` = `Σ_{t ∈ span(o), u ∈ span(i)} log s(x_t, x_u)` for
/// `o < i`, so a graph's score is a lookup per linked pair.
pub fn span_pair_sums(sim: &FrameSimilarity, frames: &FrameSequence, spans: &[TemporalSpan]) -> Result<Vec<Vec<f64>>> {
    for (i, s) in spans.iter().enumerate() {
        if s.end >= frames.len() {
            return Err(Error::SpanOutOfBounds { action: i + 1, span: (s.start, s.end), frames: frames.len() });
        }
    }
    let phi = sim.embed_frames(frames);
    let n = spans.len();
    let mut sums = vec![vec![0.0; n + 1]; n + 1];
    for o in 1..=n {
        for i in o + 1..=n {
            let mut acc = 0.0;
            for t in spans[o - 1].start..=spans[o - 1].end {
                for u in spans[i - 1].start..=spans[i - 1].end {
                    acc += shifted(dot(&phi[t], &phi[u])).ln();
                }
            }
            sums[o][i] = acc;
        }
    }
    Ok(sums)
}

pub fn pair_score(sums: &[Vec<f64>], graph: &ActionGraph) -> f64 {
    linked_pairs(graph).into_iter().map(|(o, i)| sums[o][i]).sum()
}

fn grounded_score(sim: &FrameSimilarity, frames: &FrameSequence, graph: &ActionGraph) -> Result<f64> {
    let spans = graph.spans.as_ref().ok_or(Error::Ungrounded)?;
    Ok(pair_score(&span_pair_sums(sim, frames, spans)?, graph))
}

/// Score under the frozen initial projection.
pub fn rfes_score(sim: &FrameSimilarity, frames: &FrameSequence, graph: &ActionGraph) -> Result<f64> {
    grounded_score(sim, frames, graph)
}

/// Score under a projection refit with [`train_similarity`].
pub fn fes_score(sim: &FrameSimilarity, frames: &FrameSequence, graph: &ActionGraph) -> Result<f64> {
    grounded_score(sim, frames, graph)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub margin: f64,
    /// Triplets drawn per linked pair.
    pub samples_per_pair: usize,
    pub seed: u64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { steps: 30, learning_rate: 0.001, margin: 0.2, samples_per_pair: 4, seed: 0 }
    }
}

/// Refits the projection so that frames of linked actions are closer than
/// frames of unlinked ones. Returns the updated similarity and the loss
/// before each step.
pub fn train_similarity(
    sim: &FrameSimilarity,
    videos: &[(&ActionGraph, &FrameSequence)],
    config: &SimilarityConfig,
) -> Result<(FrameSimilarity, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // (video, anchor, positive, negative)
    let mut triplets = Vec::new();
    for (v, (graph, frames)) in videos.iter().enumerate() {
        let spans = graph.spans.as_ref().ok_or(Error::Ungrounded)?;
        let labels = graph.frame_labels(frames.len())?;
        let pairs = linked_pairs(graph);
        for &(o, i) in &pairs {
            let others: Vec<usize> = (0..frames.len())
                .filter(|&t| {
                    let l = labels[t];
                    l != o && l != i && !pairs.contains(&(l.min(i), l.max(i)))
                })
                .collect();
            if others.is_empty() {
                continue;
            }
            let (so, si) = (spans[o - 1], spans[i - 1]);
            for _ in 0..config.samples_per_pair {
                let a = rng.random_range(si.start..=si.end);
                let p = rng.random_range(so.start..=so.end);
                let n = *others.choose(&mut rng).expect("nonempty");
                triplets.push((v, a, p, n));
            }
        }
    }
    let mut out = sim.clone();
    let mut losses = Vec::with_capacity(config.steps);
    if triplets.is_empty() {
        return Ok((out, losses));
    }
    let rows: Vec<Vec<Vec<f64>>> = videos.iter().map(|(_, f)| (0..f.len()).map(|t| f.row_f64(t)).collect()).collect();
    let scale = 1.0 / triplets.len() as f64;
    let mut adam = Adam::new(config.learning_rate);
    let mut slots = AdamSlots::default();
    for _ in 0..config.steps {
        let mut grad = vec![0.0; out.projection.len()];
        let mut loss = 0.0;
        for &(v, a, p, n) in &triplets {
            let (xa, xp, xn) = (&rows[v][a], &rows[v][p], &rows[v][n]);
            let (ua, up, un) = (out.project(xa), out.project(xp), out.project(xn));
            let l = config.margin - cosine(&ua, &up) + cosine(&ua, &un);
            if l <= 0.0 {
                continue;
            }
            loss += l * scale;
            let d = out.dim;
            let (mut da, mut dp, mut dn) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            cosine_grad_acc(&ua, &up, -scale, &mut da, &mut dp);
            cosine_grad_acc(&ua, &un, scale, &mut da, &mut dn);
            outer_acc(&mut grad, out.feature_dim, &da, xa);
            outer_acc(&mut grad, out.feature_dim, &dp, xp);
            outer_acc(&mut grad, out.feature_dim, &dn, xn);
        }
        losses.push(loss);
        adam.tick();
        slots.step(&adam, "projection", &mut out.projection, &grad);
    }
    Ok((out, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ActionNode, EntityNode, SemanticType, SyntacticType};

    fn food(t: &[&str]) -> EntityNode {
        EntityNode::new(SyntacticType::Dobj, SemanticType::Food, t)
    }

    fn two_actions(origin: usize) -> ActionGraph {
        ActionGraph::from_origins(
            vec![ActionNode::new("chop", vec![food(&["onion"])]), ActionNode::new("fry", vec![food(&["it"])])],
            &[vec![0], vec![origin]],
        )
        .with_spans(vec![TemporalSpan::new(0, 1), TemporalSpan::new(2, 3)])
    }

    fn frames() -> FrameSequence {
        FrameSequence::from_rows(
            &[vec![1.0, 0.0, 0.2], vec![0.8, 0.3, 0.0], vec![0.0, 1.0, -0.5], vec![-0.4, 0.2, 1.0]],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn raw_only_graph_scores_zero() {
        let sim = FrameSimilarity::init(3, 4, 1);
        assert_eq!(rfes_score(&sim, &frames(), &two_actions(0)).unwrap(), 0.0);
    }

    #[test]
    fn identical_frames_score_zero() {
        let sim = FrameSimilarity::init(3, 4, 1);
        let same = FrameSequence::from_rows(&vec![vec![0.3, -0.2, 0.9]; 4], 1.0).unwrap();
        assert!(rfes_score(&sim, &same, &two_actions(1)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn linked_pair_is_four_term_sum() {
        let sim = FrameSimilarity::init(3, 4, 2);
        let f = frames();
        let mut expect = 0.0;
        for t in 0..2 {
            for u in 2..4 {
                expect += sim.similarity(&f.row_f64(t), &f.row_f64(u)).ln();
            }
        }
        let got = rfes_score(&sim, &f, &two_actions(1)).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn duplicate_links_count_once() {
        let g = ActionGraph::from_origins(
            vec![
                ActionNode::new("chop", vec![food(&["onion"])]),
                ActionNode::new("mix", vec![food(&["it"]), food(&[])]),
            ],
            &[vec![0], vec![1, 1]],
        )
        .with_spans(vec![TemporalSpan::new(0, 1), TemporalSpan::new(2, 3)]);
        let sim = FrameSimilarity::init(3, 4, 3);
        let a = rfes_score(&sim, &frames(), &g).unwrap();
        let b = rfes_score(&sim, &frames(), &two_actions(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_pulls_linked_frames_together() {
        let g = two_actions(1).with_spans(vec![TemporalSpan::new(0, 1), TemporalSpan::new(4, 5)]);
        // linked spans look unlike each other, background looks like action 2
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.9, 0.1, 0.0],
            vec![0.0, 0.3, 1.0],
            vec![0.1, 0.2, 0.9],
            vec![0.0, 0.0, 1.0],
            vec![0.1, 0.0, 0.9],
        ];
        let f = FrameSequence::from_rows(&rows, 1.0).unwrap();
        let cfg = SimilarityConfig { steps: 200, learning_rate: 0.01, ..Default::default() };
        let sim = FrameSimilarity::init(3, 4, 4);
        let (trained, losses) = train_similarity(&sim, &[(&g, &f)], &cfg).unwrap();
        assert!(losses[0] > 0.0);
        assert!(losses.last().unwrap() < &(0.5 * losses[0]), "{losses:?}");
        assert_ne!(trained, sim);
    }
}
