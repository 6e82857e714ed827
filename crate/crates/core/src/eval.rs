//! Reference and alignment metrics, and the random-perturbation baseline.
//!
//! Every entity has exactly one predicted and one gold reference, so
//! reference precision and recall coincide with accuracy unless some
//! predictions abstain. Alignment F1 is micro-averaged over frames
//! (background frames are never positives); IOU is averaged over actions.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ActionGraph, CompatibilityRule, EntityId, MoveSet, TemporalSpan};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Reference edge counts, additive over videos.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReferenceCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl ReferenceCounts {
    pub fn add(&mut self, other: ReferenceCounts) {
        self.correct += other.correct;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn prf(&self) -> Prf {
        let precision = ratio(self.correct, self.predicted);
        let recall = ratio(self.correct, self.gold);
        Prf { precision, recall, f1: harmonic(precision, recall) }
    }
}

fn check_skeleton(predicted: &ActionGraph, gold: &ActionGraph) -> Result<()> {
    if predicted.num_actions() != gold.num_actions() {
        return Err(Error::SkeletonMismatch(format!("{} vs {} actions", predicted.num_actions(), gold.num_actions())));
    }
    for (i, (a, b)) in predicted.actions.iter().zip(&gold.actions).enumerate() {
        if a.entities.len() != b.entities.len() {
            return Err(Error::SkeletonMismatch(format!(
                "action {} has {} vs {} entities",
                i + 1,
                a.entities.len(),
                b.entities.len()
            )));
        }
    }
    Ok(())
}

/// Counts with some predicted references withheld.
pub fn reference_counts_abstaining(
    predicted: &ActionGraph,
    abstained: &BTreeSet<EntityId>,
    gold: &ActionGraph,
) -> Result<ReferenceCounts> {
    check_skeleton(predicted, gold)?;
    let mut c = ReferenceCounts::default();
    for id in gold.entity_ids() {
        c.gold += 1;
        if abstained.contains(&id) {
            continue;
        }
        c.predicted += 1;
        if predicted.origin(id) == gold.origin(id) {
            c.correct += 1;
        }
    }
    Ok(c)
}

pub fn reference_counts(predicted: &ActionGraph, gold: &ActionGraph) -> Result<ReferenceCounts> {
    reference_counts_abstaining(predicted, &BTreeSet::new(), gold)
}

pub fn reference_prf(predicted: &ActionGraph, gold: &ActionGraph) -> Result<Prf> {
    Ok(reference_counts(predicted, gold)?.prf())
}

/// Frame and span overlap counts, additive over videos.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlignmentCounts {
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
    pub iou_sum: f64,
    pub actions: usize,
}

impl AlignmentCounts {
    pub fn add(&mut self, other: AlignmentCounts) {
        self.true_positive += other.true_positive;
        self.predicted += other.predicted;
        self.gold += other.gold;
        self.iou_sum += other.iou_sum;
        self.actions += other.actions;
    }

    pub fn f1(&self) -> f64 {
        harmonic(ratio(self.true_positive, self.predicted), ratio(self.true_positive, self.gold))
    }

    pub fn iou(&self) -> f64 {
        if self.actions == 0 {
            0.0
        } else {
            self.iou_sum / self.actions as f64
        }
    }
}

fn labels(spans: &[TemporalSpan], frames: usize) -> Vec<usize> {
    let mut out = vec![0; frames];
    for (k, s) in spans.iter().enumerate() {
        for l in out.iter_mut().take(s.end.min(frames.saturating_sub(1)) + 1).skip(s.start) {
            *l = k + 1;
        }
    }
    out
}

fn span_iou(a: TemporalSpan, b: TemporalSpan) -> f64 {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

pub fn alignment_counts(predicted: &[TemporalSpan], gold: &[TemporalSpan], frames: usize) -> Result<AlignmentCounts> {
    if predicted.len() != gold.len() {
        return Err(Error::SkeletonMismatch(format!("{} vs {} spans", predicted.len(), gold.len())));
    }
    let p = labels(predicted, frames);
    let g = labels(gold, frames);
    let mut c = AlignmentCounts { actions: gold.len(), ..Default::default() };
    for (a, b) in p.iter().zip(&g) {
        if *a != 0 {
            c.predicted += 1;
        }
        if *b != 0 {
            c.gold += 1;
        }
        if *a != 0 && a == b {
            c.true_positive += 1;
        }
    }
    c.iou_sum = predicted.iter().zip(gold).map(|(&a, &b)| span_iou(a, b)).sum();
    Ok(c)
}

/// `(F1, IOU)` of predicted spans against gold spans.
pub fn alignment_f1_iou(predicted: &[TemporalSpan], gold: &[TemporalSpan], frames: usize) -> Result<(f64, f64)> {
    let c = alignment_counts(predicted, gold, frames)?;
    Ok((c.f1(), c.iou()))
}

/// Applies up to `k` uniformly chosen legal moves.
pub fn random_perturbation(
    graph: &ActionGraph,
    k: usize,
    compat: CompatibilityRule,
    move_set: MoveSet,
    rng: &mut impl Rng,
) -> Result<ActionGraph> {
    let mut g = graph.clone();
    for _ in 0..k {
        let moves = g.enumerate_moves(compat, move_set);
        let Some(mv) = moves.choose(rng) else { break };
        g.apply_move_in_place(mv)?;
    }
    Ok(g)
}

/// Metric values for one video or a whole corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub reference: ReferenceCounts,
    pub alignment: Option<AlignmentCounts>,
}

impl Metrics {
    pub fn add(&mut self, other: &Metrics) {
        self.reference.add(other.reference);
        match (&mut self.alignment, other.alignment) {
            (Some(a), Some(b)) => a.add(b),
            (None, Some(b)) => self.alignment = Some(b),
            _ => {}
        }
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let prf = self.reference.prf();
        let mut out = vec![("ref_precision", prf.precision), ("ref_recall", prf.recall), ("ref_f1", prf.f1)];
        if let Some(a) = self.alignment {
            out.push(("align_f1", a.f1()));
            out.push(("align_iou", a.iou()));
        }
        out
    }
}

/// Per-video metrics and their corpus aggregate (micro over edges and
/// frames, mean IOU over all actions).
pub fn evaluate(predicted: &[ActionGraph], gold: &[ActionGraph], frames: &[usize]) -> Result<(Vec<Metrics>, Metrics)> {
    if predicted.len() != gold.len() || frames.len() != gold.len() {
        return Err(Error::SkeletonMismatch(format!("{} predicted vs {} gold graphs", predicted.len(), gold.len())));
    }
    let mut per = Vec::with_capacity(gold.len());
    let mut all = Metrics::default();
    for ((p, g), &t) in predicted.iter().zip(gold).zip(frames) {
        let alignment = match (&p.spans, &g.spans) {
            (Some(ps), Some(gs)) => Some(alignment_counts(ps, gs, t)?),
            _ => None,
        };
        let m = Metrics { reference: reference_counts(p, g)?, alignment };
        all.add(&m);
        per.push(m);
    }
    Ok((per, all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ActionNode, EntityNode, SemanticType, SyntacticType};
    use rand::SeedableRng;

    fn food() -> EntityNode {
        EntityNode::new(SyntacticType::Dobj, SemanticType::Food, &["x"])
    }

    fn graph(origins: &[Vec<usize>]) -> ActionGraph {
        let actions = origins.iter().map(|o| ActionNode::new("mix", vec![food(); o.len()])).collect();
        ActionGraph::from_origins(actions, origins)
    }

    #[test]
    fn prf_examples() {
        let gold = graph(&[vec![0], vec![1], vec![2, 0]]);
        assert_eq!(reference_prf(&gold, &gold).unwrap().f1, 1.0);
        let wrong = graph(&[vec![0], vec![0], vec![1, 1]]);
        let p = reference_prf(&wrong, &gold).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.25, 0.25, 0.25));
        let three = graph(&[vec![0], vec![1], vec![1, 0]]);
        let p = reference_prf(&three, &gold).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.75, 0.75, 0.75));
        let gold = graph(&[vec![], vec![1], vec![2, 0]]);
        let all_wrong = graph(&[vec![], vec![0], vec![1, 2]]);
        assert_eq!(reference_prf(&all_wrong, &gold).unwrap().f1, 0.0);
        assert!(reference_prf(&graph(&[vec![0]]), &gold).is_err());
    }

    #[test]
    fn abstaining_separates_precision_and_recall() {
        let gold = graph(&[vec![0], vec![1], vec![2, 0]]);
        let abstain = BTreeSet::from([EntityId::new(3, 1)]);
        let p = reference_counts_abstaining(&gold, &abstain, &gold).unwrap().prf();
        assert_eq!(p.precision, 1.0);
        assert_eq!(p.recall, 0.75);
    }

    #[test]
    fn alignment_examples() {
        let a = [TemporalSpan::new(0, 9)];
        assert_eq!(alignment_f1_iou(&a, &a, 20).unwrap(), (1.0, 1.0));
        assert_eq!(alignment_f1_iou(&a, &[TemporalSpan::new(10, 19)], 20).unwrap(), (0.0, 0.0));
        let (_, iou) = alignment_f1_iou(&a, &[TemporalSpan::new(5, 14)], 20).unwrap();
        assert!((iou - 5.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn zero_moves_is_identity() {
        let g = graph(&[vec![0], vec![1], vec![2, 0]]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let out = random_perturbation(&g, 0, CompatibilityRule::Typed, MoveSet::SwapsAndReassign, &mut rng).unwrap();
        assert_eq!(out, g);
    }
}
