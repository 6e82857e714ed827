//! Linguistic model: how plausible a graph's references are given the
//! transcript.
//!
//! The score is a weighted sum of four per-entity or per-action terms:
//!
//! * verb signature: `log P(syn, sem, origin is a₀ | predicate)` from
//!   Laplace-smoothed counts, with a corpus-wide fallback for unseen verbs;
//! * part-composite: `-Σ_k m_k (μ_k - w_k)²`, where `μ` is the mean word
//!   vector of the raw food tokens gathered transitively below the origin
//!   and `w` the entity's surface vector;
//! * raw food: a logistic classifier on the surface vector predicting
//!   whether a food entity references a₀;
//! * temporal: `-(|Δstart| + |Δend|) / σ` between transcript time-stamp and
//!   grounded span.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ActionGraph, ActionNode, EntityId, EntityNode, SemanticType, SyntacticType, TemporalSpan};
use crate::math::{dot, sigmoid, softplus};
use crate::transcript::Transcript;
use crate::visual::WordEmbedder;

/// Number of verb-signature cells: syn × sem × origin-is-a₀.
pub const SIGNATURE_CELLS: usize = 2 * 3 * 2;

pub fn signature_cell(entity: &EntityNode, origin: usize) -> usize {
    let syn = match entity.syn {
        SyntacticType::Dobj => 0,
        SyntacticType::Pp => 1,
    };
    let sem = match entity.sem {
        SemanticType::Food => 0,
        SemanticType::Location => 1,
        SemanticType::Other => 2,
    };
    syn * 6 + sem * 2 + usize::from(origin == 0)
}

/// Source of word vectors. Implemented by [`WordEmbedder`] and by caches.
pub trait TokenVectors {
    fn dim(&self) -> usize;
    fn vector(&self, token: &str) -> Vec<f64>;

    fn surface(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        if tokens.is_empty() {
            return acc;
        }
        for t in tokens {
            crate::math::add_assign(&mut acc, &self.vector(t));
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|x| *x /= n);
        acc
    }
}

impl TokenVectors for WordEmbedder {
    fn dim(&self) -> usize {
        WordEmbedder::dim(self)
    }

    fn vector(&self, token: &str) -> Vec<f64> {
        self.token(token)
    }
}

/// Precomputed vectors for a fixed vocabulary; unknown tokens fall through
/// to the embedder.
#[derive(Clone, Debug)]
pub struct TokenCache<'a> {
    embedder: &'a WordEmbedder,
    table: BTreeMap<String, Vec<f64>>,
}

impl<'a> TokenCache<'a> {
    pub fn new<'t>(embedder: &'a WordEmbedder, tokens: impl IntoIterator<Item = &'t String>) -> Self {
        let table = tokens.into_iter().map(|t| (t.clone(), embedder.token(t))).collect();
        Self { embedder, table }
    }

    pub fn for_graph(embedder: &'a WordEmbedder, graph: &ActionGraph) -> Self {
        Self::new(embedder, graph.actions.iter().flat_map(|a| a.entities.iter().flat_map(|e| &e.tokens)))
    }
}

impl TokenVectors for TokenCache<'_> {
    fn dim(&self) -> usize {
        self.embedder.dim()
    }

    fn vector(&self, token: &str) -> Vec<f64> {
        match self.table.get(token) {
            Some(v) => v.clone(),
            None => self.embedder.token(token),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubModelWeights {
    pub verb_signature: f64,
    pub part_composite: f64,
    pub raw_food: f64,
    pub temporal: f64,
}

impl Default for SubModelWeights {
    fn default() -> Self {
        Self { verb_signature: 1.0, part_composite: 1.0, raw_food: 1.0, temporal: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinguisticConfig {
    /// Temporal scale in frames.
    pub sigma: f64,
    pub alpha: f64,
    /// Part-composite score when the origin has no gatherable ingredients.
    pub empty_floor: f64,
    pub weights: SubModelWeights,
    pub metric_steps: usize,
    pub metric_learning_rate: f64,
    pub metric_margin: f64,
    /// Pull of the metric towards all-ones.
    pub metric_l2: f64,
    pub raw_steps: usize,
    pub raw_learning_rate: f64,
    pub raw_l2: f64,
    pub seed: u64,
}

impl Default for LinguisticConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            alpha: 1.0,
            empty_floor: -10.0,
            weights: SubModelWeights::default(),
            metric_steps: 200,
            metric_learning_rate: 0.05,
            metric_margin: 0.1,
            metric_l2: 0.01,
            raw_steps: 200,
            raw_learning_rate: 0.5,
            raw_l2: 0.001,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinguisticParams {
    /// Raw counts per predicate, indexed by [`signature_cell`].
    pub verb_counts: BTreeMap<String, Vec<f64>>,
    /// Counts over every predicate; used for unseen verbs.
    pub background_counts: Vec<f64>,
    pub alpha: f64,
    /// Diagonal metric weights, all ≥ 0.
    pub metric: Vec<f64>,
    pub raw_weights: Vec<f64>,
    pub raw_bias: f64,
    pub sigma: f64,
    pub empty_floor: f64,
    pub weights: SubModelWeights,
}

impl LinguisticParams {
    /// Uninformative model: empty counts, identity metric, zero classifier.
    pub fn uniform(dim: usize, config: &LinguisticConfig) -> Self {
        Self {
            verb_counts: BTreeMap::new(),
            background_counts: vec![0.0; SIGNATURE_CELLS],
            alpha: config.alpha,
            metric: vec![1.0; dim],
            raw_weights: vec![0.0; dim],
            raw_bias: 0.0,
            sigma: config.sigma,
            empty_floor: config.empty_floor,
            weights: config.weights.clone(),
        }
    }

    /// Smoothed `P(cell | predicate)`.
    pub fn signature_prob(&self, predicate: &str, cell: usize) -> f64 {
        let counts = self.verb_counts.get(predicate).unwrap_or(&self.background_counts);
        let total: f64 = counts.iter().sum();
        (counts[cell] + self.alpha) / (total + self.alpha * SIGNATURE_CELLS as f64)
    }

    pub fn verb_signature_logp(&self, action: &ActionNode, origins: &[usize]) -> f64 {
        action
            .entities
            .iter()
            .zip(origins)
            .map(|(e, &o)| self.signature_prob(&action.predicate, signature_cell(e, o)).ln())
            .sum()
    }

    pub fn metric_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.metric.iter().zip(a.iter().zip(b)).map(|(m, (x, y))| m * (x - y) * (x - y)).sum()
    }

    pub fn part_composite_logp(
        &self,
        graph: &ActionGraph,
        entity: EntityId,
        vectors: &impl TokenVectors,
    ) -> Result<f64> {
        let e = graph.entity(entity).ok_or(Error::UnknownEntity(entity))?;
        let origin = graph.origin(entity).ok_or(Error::UnknownEntity(entity))?;
        Ok(self.part_composite_term(graph, &graph.origins(), e, origin, vectors))
    }

    pub fn part_composite_term(
        &self,
        graph: &ActionGraph,
        origins: &[Vec<usize>],
        e: &EntityNode,
        origin: usize,
        vectors: &impl TokenVectors,
    ) -> f64 {
        if origin == 0 || e.is_implicit() || e.sem != SemanticType::Food {
            return 0.0;
        }
        let gathered = gather_ingredients(graph, origins, origin);
        if gathered.is_empty() {
            return self.empty_floor;
        }
        let mean = mean_vector(&gathered, vectors);
        -self.metric_distance(&mean, &vectors.surface(&e.tokens))
    }

    pub fn raw_food_logit(&self, features: &[f64]) -> f64 {
        dot(&self.raw_weights, features) + self.raw_bias
    }

    pub fn raw_food_logp(&self, entity: &EntityNode, origin_is_a0: bool, vectors: &impl TokenVectors) -> f64 {
        if entity.sem != SemanticType::Food {
            return 0.0;
        }
        let z = self.raw_food_logit(&vectors.surface(&entity.tokens));
        if origin_is_a0 {
            -softplus(-z)
        } else {
            -softplus(z)
        }
    }

    pub fn temporal_logp(&self, z_l: TemporalSpan, z: TemporalSpan) -> f64 {
        let ds = z_l.start.abs_diff(z.start) as f64;
        let de = z_l.end.abs_diff(z.end) as f64;
        -(ds + de) / self.sigma
    }

    /// Reference-dependent part of the score: verb signature, part-composite
    /// and raw food, weighted.
    pub fn reference_score(&self, graph: &ActionGraph, vectors: &impl TokenVectors) -> f64 {
        let origins = graph.origins();
        let w = &self.weights;
        let mut total = 0.0;
        for (i, action) in graph.actions.iter().enumerate() {
            let os = &origins[i];
            total += w.verb_signature * self.verb_signature_logp(action, os);
            for (e, &o) in action.entities.iter().zip(os) {
                if w.part_composite != 0.0 {
                    total += w.part_composite * self.part_composite_term(graph, &origins, e, o, vectors);
                }
                if w.raw_food != 0.0 {
                    total += w.raw_food * self.raw_food_logp(e, o == 0, vectors);
                }
            }
        }
        total
    }

    /// Weighted temporal term over all actions.
    pub fn temporal_score(&self, timestamps: &[TemporalSpan], spans: &[TemporalSpan]) -> f64 {
        self.weights.temporal * timestamps.iter().zip(spans).map(|(&zl, &z)| self.temporal_logp(zl, z)).sum::<f64>()
    }

    /// `log P(L | G)` up to a constant. The temporal term is omitted for an
    /// ungrounded graph.
    pub fn linguistic_score(
        &self,
        graph: &ActionGraph,
        transcript: &Transcript,
        vectors: &impl TokenVectors,
    ) -> Result<f64> {
        if graph.num_actions() != transcript.actions.len() {
            return Err(Error::ActionCountMismatch {
                graph: graph.num_actions(),
                transcript: transcript.actions.len(),
            });
        }
        let mut total = self.reference_score(graph, vectors);
        if let Some(spans) = &graph.spans {
            total += self.temporal_score(&transcript.timestamps(), spans);
        }
        Ok(total)
    }
}

/// Raw food tokens reachable from `action` through Food entities: entities
/// referencing a₀ contribute their tokens; the rest recurse into their
/// origin.
pub fn gather_ingredients(graph: &ActionGraph, origins: &[Vec<usize>], action: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![action];
    let mut seen = BTreeSet::new();
    while let Some(a) = stack.pop() {
        if a == 0 || !seen.insert(a) {
            continue;
        }
        for (e, &o) in graph.actions[a - 1].entities.iter().zip(&origins[a - 1]) {
            if e.sem != SemanticType::Food {
                continue;
            }
            if o == 0 {
                out.extend(e.tokens.iter().cloned());
            } else {
                stack.push(o);
            }
        }
    }
    out
}

fn mean_vector(tokens: &BTreeSet<String>, vectors: &impl TokenVectors) -> Vec<f64> {
    let mut acc = vec![0.0; vectors.dim()];
    for t in tokens {
        crate::math::add_assign(&mut acc, &vectors.vector(t));
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|x| *x /= n);
    acc
}

/// Diagonal metric fit by projected gradient descent on
/// `max(0, margin + d(pos) - d(neg))`, averaged over pairs, plus
/// `l2 · |m - 1|²`. Returns the metric and the hinge loss before each step.
pub fn fit_metric(
    positives: &[(Vec<f64>, Vec<f64>)],
    negatives: &[(Vec<f64>, Vec<f64>)],
    dim: usize,
    config: &LinguisticConfig,
) -> (Vec<f64>, Vec<f64>) {
    let mut m = vec![1.0; dim];
    let mut losses = Vec::with_capacity(config.metric_steps);
    let n = positives.len().min(negatives.len());
    if n == 0 {
        return (m, losses);
    }
    let sq = |(a, b): &(Vec<f64>, Vec<f64>)| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect() };
    let pos: Vec<Vec<f64>> = positives[..n].iter().map(sq).collect();
    let neg: Vec<Vec<f64>> = negatives[..n].iter().map(sq).collect();
    for _ in 0..config.metric_steps {
        let mut grad: Vec<f64> = m.iter().map(|mk| 2.0 * config.metric_l2 * (mk - 1.0)).collect();
        let mut loss = 0.0;
        for (p, q) in pos.iter().zip(&neg) {
            let l = config.metric_margin + dot(&m, p) - dot(&m, q);
            if l > 0.0 {
                loss += l / n as f64;
                for k in 0..dim {
                    grad[k] += (p[k] - q[k]) / n as f64;
                }
            }
        }
        losses.push(loss);
        for k in 0..dim {
            m[k] = (m[k] - config.metric_learning_rate * grad[k]).max(0.0);
        }
    }
    (m, losses)
}

/// Logistic regression by full-batch gradient descent with L2 on weights.
pub fn fit_logistic(features: &[Vec<f64>], labels: &[bool], dim: usize, config: &LinguisticConfig) -> (Vec<f64>, f64) {
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    if features.is_empty() {
        return (w, b);
    }
    let n = features.len() as f64;
    for _ in 0..config.raw_steps {
        let mut gw: Vec<f64> = w.iter().map(|x| config.raw_l2 * x).collect();
        let mut gb = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let p = sigmoid(dot(&w, x) + b);
            let err = (p - f64::from(u8::from(y))) / n;
            crate::math::axpy(&mut gw, err, x);
            gb += err;
        }
        crate::math::axpy(&mut w, -config.raw_learning_rate, &gw);
        b -= config.raw_learning_rate * gb;
    }
    (w, b)
}

/// Refits counts, metric and raw-food classifier from the current graphs.
pub fn fit_linguistic(
    graphs: &[&ActionGraph],
    embedder: &WordEmbedder,
    config: &LinguisticConfig,
) -> Result<LinguisticParams> {
    if graphs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dim = embedder.dim();
    let mut params = LinguisticParams::uniform(dim, config);
    let mut raw_x = Vec::new();
    let mut raw_y = Vec::new();
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for g in graphs {
        if !g.is_valid() {
            return Err(Error::InvalidGraph(format!("{:?}", g.validate())));
        }
        let vectors = TokenCache::for_graph(embedder, g);
        let origins = g.origins();
        for (i, action) in g.actions.iter().enumerate() {
            let counts =
                params.verb_counts.entry(action.predicate.clone()).or_insert_with(|| vec![0.0; SIGNATURE_CELLS]);
            for (e, &o) in action.entities.iter().zip(&origins[i]) {
                let cell = signature_cell(e, o);
                counts[cell] += 1.0;
                params.background_counts[cell] += 1.0;
                if e.sem == SemanticType::Food {
                    raw_x.push(vectors.surface(&e.tokens));
                    raw_y.push(o == 0);
                    if o > 0 && !e.is_implicit() {
                        let gathered = gather_ingredients(g, &origins, o);
                        if !gathered.is_empty() {
                            pairs.push((mean_vector(&gathered, &vectors), vectors.surface(&e.tokens)));
                        }
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let negatives: Vec<(Vec<f64>, Vec<f64>)> = if pairs.len() >= 2 {
        (0..pairs.len())
            .map(|k| {
                let other = loop {
                    let c = pairs.choose(&mut rng).expect("nonempty");
                    if !std::ptr::eq(c, &pairs[k]) {
                        break c;
                    }
                };
                (other.0.clone(), pairs[k].1.clone())
            })
            .collect()
    } else {
        Vec::new()
    };
    params.metric = fit_metric(&pairs, &negatives, dim, config).0;
    let (w, b) = fit_logistic(&raw_x, &raw_y, dim, config);
    params.raw_weights = w;
    params.raw_bias = b;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn food(t: &[&str]) -> EntityNode {
        EntityNode::new(SyntacticType::Dobj, SemanticType::Food, t)
    }

    fn cfg() -> LinguisticConfig {
        LinguisticConfig::default()
    }

    struct Fixed(BTreeMap<String, Vec<f64>>);

    impl TokenVectors for Fixed {
        fn dim(&self) -> usize {
            2
        }
        fn vector(&self, t: &str) -> Vec<f64> {
            self.0.get(t).cloned().unwrap_or(vec![0.0, 0.0])
        }
    }

    fn mixture_graph() -> ActionGraph {
        ActionGraph::from_origins(
            vec![
                ActionNode::new("mix", vec![food(&["oil"]), food(&["salt"])]),
                ActionNode::new("pour", vec![food(&["mixture"])]),
            ],
            &[vec![0, 0], vec![1]],
        )
    }

    fn fixed(mixture: [f64; 2]) -> Fixed {
        Fixed(BTreeMap::from([
            ("oil".to_string(), vec![1.0, 0.0]),
            ("salt".to_string(), vec![0.0, 1.0]),
            ("mixture".to_string(), mixture.to_vec()),
        ]))
    }

    #[test]
    fn unseen_predicate_uses_background() {
        let mut p = LinguisticParams::uniform(2, &cfg());
        p.background_counts[3] = 5.0;
        p.verb_counts.insert("add".into(), vec![1.0; SIGNATURE_CELLS]);
        let a = ActionNode::new("zorch", vec![food(&["x"])]);
        let expect = p.signature_prob("__none__", signature_cell(&a.entities[0], 2)).ln();
        assert_eq!(p.verb_signature_logp(&a, &[2]), expect);
        assert_eq!(p.verb_signature_logp(&ActionNode::new("add", vec![]), &[]), 0.0);
    }

    #[test]
    fn signature_probabilities_sum_to_one() {
        let mut p = LinguisticParams::uniform(2, &cfg());
        p.verb_counts.insert("add".into(), (0..12).map(f64::from).collect());
        let s: f64 = (0..SIGNATURE_CELLS).map(|c| p.signature_prob("add", c)).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!((0..SIGNATURE_CELLS).all(|c| p.signature_prob("add", c) > 0.0));
    }

    #[test]
    fn part_composite_zero_at_mean() {
        let p = LinguisticParams::uniform(2, &cfg());
        let g = mixture_graph();
        let v = fixed([0.5, 0.5]);
        assert_eq!(p.part_composite_logp(&g, EntityId::new(2, 1), &v).unwrap(), 0.0);
        assert_eq!(p.part_composite_logp(&g, EntityId::new(1, 1), &v).unwrap(), 0.0);
    }

    #[test]
    fn part_composite_weighted_displacement() {
        let mut p = LinguisticParams::uniform(2, &cfg());
        p.metric = vec![4.0, 1.0];
        let g = mixture_graph();
        let got = p.part_composite_logp(&g, EntityId::new(2, 1), &fixed([1.5, 0.5])).unwrap();
        assert!((got + 4.0).abs() < 1e-12);
    }

    #[test]
    fn part_composite_recurses_and_floors() {
        let p = LinguisticParams::uniform(2, &cfg());
        let g = ActionGraph::from_origins(
            vec![
                ActionNode::new("mix", vec![food(&["oil"]), food(&["salt"])]),
                ActionNode::new("stir", vec![food(&[])]),
                ActionNode::new("pour", vec![food(&["mixture"])]),
            ],
            &[vec![0, 0], vec![1], vec![2]],
        );
        let v = fixed([0.5, 0.5]);
        assert_eq!(p.part_composite_logp(&g, EntityId::new(3, 1), &v).unwrap(), 0.0);
        // implicit entity is inapplicable
        assert_eq!(p.part_composite_logp(&g, EntityId::new(2, 1), &v).unwrap(), 0.0);
        let mut loc = EntityNode::new(SyntacticType::Pp, SemanticType::Location, &["oven"]);
        let preheat = ActionNode { yields_location: true, ..ActionNode::new("preheat", vec![loc.clone()]) };
        loc.sem = SemanticType::Food;
        let g = ActionGraph::from_origins(vec![preheat, ActionNode::new("bake", vec![loc])], &[vec![0], vec![1]]);
        assert_eq!(p.part_composite_logp(&g, EntityId::new(2, 1), &v).unwrap(), -10.0);
    }

    #[test]
    fn raw_food_branches() {
        let p = LinguisticParams::uniform(2, &cfg());
        let v = fixed([0.0, 0.0]);
        let half = 0.5f64.ln();
        assert!((p.raw_food_logp(&food(&["oil"]), true, &v) - half).abs() < 1e-12);
        assert!((p.raw_food_logp(&food(&["oil"]), false, &v) - half).abs() < 1e-12);
        let loc = EntityNode::new(SyntacticType::Pp, SemanticType::Location, &["pan"]);
        assert_eq!(p.raw_food_logp(&loc, true, &v), 0.0);
    }

    #[test]
    fn temporal_examples() {
        let mut p = LinguisticParams::uniform(2, &cfg());
        let z = TemporalSpan::new(10, 20);
        assert_eq!(p.temporal_logp(z, z), 0.0);
        let off = TemporalSpan::new(13, 27);
        assert!((p.temporal_logp(z, off) + 1.0).abs() < 1e-12);
        p.sigma = 20.0;
        assert!((p.temporal_logp(z, off) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn fitted_raw_classifier_learns_all_raw() {
        let emb = WordEmbedder::new(8, 3);
        let g = ActionGraph::from_origins(
            vec![
                ActionNode::new("mix", vec![food(&["flour"]), food(&["water"])]),
                ActionNode::new("add", vec![food(&["sugar"])]),
            ],
            &[vec![0, 0], vec![0]],
        );
        let p = fit_linguistic(&[&g], &emb, &cfg()).unwrap();
        for a in &g.actions {
            for e in &a.entities {
                assert!(p.raw_food_logp(e, true, &emb) > 0.5f64.ln());
            }
        }
        assert!(matches!(fit_linguistic(&[], &emb, &cfg()), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn metric_fit_separates_pairs() {
        // positives differ only in dim 0, negatives only in dim 1; the
        // identity metric ranks every pair the wrong way round
        let pos: Vec<_> = (0..20).map(|k| (vec![0.0, 0.0], vec![0.5 + 0.01 * k as f64, 0.0])).collect();
        let neg: Vec<_> = (0..20).map(|k| (vec![0.0, 0.0], vec![0.0, 0.1 + 0.01 * k as f64])).collect();
        let (m, losses) = fit_metric(&pos, &neg, 2, &LinguisticConfig { metric_steps: 500, ..cfg() });
        assert!(m.iter().all(|&x| x >= 0.0));
        let final_loss: f64 = pos
            .iter()
            .zip(&neg)
            .map(|(p, q)| {
                let d = |(a, b): &(Vec<f64>, Vec<f64>)| -> f64 { (0..2).map(|k| m[k] * (a[k] - b[k]).powi(2)).sum() };
                (0.1 + d(p) - d(q)).max(0.0)
            })
            .sum::<f64>()
            / 20.0;
        assert!(final_loss < 0.1, "{final_loss}");
        assert!(losses[0] > final_loss);
    }
}
