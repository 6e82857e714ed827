//! Properties of the recursive action-graph embedding over seeded random
//! graphs and parameters. Each check returns the first violation.

use std::collections::BTreeSet;

use rand::Rng;
use refgraph::graph::{ActionGraph, CompatibilityRule, EntityId, EntityNode, MoveSet, SemanticType, SyntacticType};
use refgraph::visual::{FrameScores, FrameSequence, VisualParams, WordEmbedder};

use super::{random_graph, rng};

const DIM: usize = 6;
const FEATURES: usize = 5;

pub fn params(seed: u64) -> VisualParams {
    let mut p = VisualParams::init_scaled(WordEmbedder::new(DIM, seed), FEATURES, 0.75, 0.5, seed);
    let mut r = rng(seed ^ 0x5eed);
    for w in ["oil", "egg", "mix"] {
        p.word_deltas.insert(w.into(), (0..DIM).map(|_| r.random_range(-0.3..0.3)).collect());
    }
    p
}

/// `f(a_i)` by direct recursion, no caching.
pub fn naive(p: &VisualParams, g: &ActionGraph, i: usize) -> Vec<f64> {
    if i == 0 {
        return vec![0.0; p.dim()];
    }
    let a = &g.actions[i - 1];
    let mut inputs = vec![p.word(&a.predicate)];
    for (s, e) in a.entities.iter().enumerate() {
        let mut v = p.surface(&e.tokens);
        let o = g.origin(EntityId { action: i, slot: s + 1 }).unwrap();
        if o > 0 {
            for (x, y) in v.iter_mut().zip(naive(p, g, o)) {
                *x += y;
            }
        }
        inputs.push(v);
    }
    p.encoder.forward(&inputs)
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Action `i` and every action that transitively consumes its outcome.
pub fn downstream(g: &ActionGraph, i: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::from([i]);
    for j in i + 1..=g.num_actions() {
        let uses = (1..=g.actions[j - 1].entities.len())
            .any(|s| out.contains(&g.origin(EntityId { action: j, slot: s }).unwrap()));
        if uses {
            out.insert(j);
        }
    }
    out
}

fn graph(seed: u64, actions: std::ops::RangeInclusive<usize>) -> (ActionGraph, rand_chacha::ChaCha8Rng) {
    let mut r = rng(seed);
    let n = r.random_range(actions);
    (random_graph(&mut r, n, 3), r)
}

/// Re-pointing one reference between origins with distinct embeddings
/// changes `f` of its action and of every transitive consumer, and nothing
/// upstream. Returns how many seeds had such a move.
pub fn sensitivity(seeds: u64) -> Result<usize, String> {
    let mut checked = 0;
    for seed in 0..seeds {
        let (g, mut r) = graph(seed, 2..=6);
        let p = params(seed);
        let f = p.action_embeddings(&g);
        let moves: Vec<_> = g
            .enumerate_moves(CompatibilityRule::Unconstrained, MoveSet::SwapsAndReassign)
            .into_iter()
            .filter(|m| !m.is_swap())
            .collect();
        if moves.is_empty() {
            continue;
        }
        let mv = &moves[r.random_range(0..moves.len())];
        let c = mv.changes()[0];
        if max_diff(&f[c.old], &f[c.new]) <= 1e-6 {
            continue;
        }
        let f2 = p.action_embeddings(&g.apply_move(mv).unwrap());
        for j in downstream(&g, c.entity.action) {
            if max_diff(&f[j], &f2[j]) <= 1e-6 {
                return Err(format!("seed {seed}: f(a_{j}) unchanged"));
            }
        }
        if (1..c.entity.action).any(|j| f[j] != f2[j]) {
            return Err(format!("seed {seed}: an upstream embedding changed"));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Action 1 is duplicated as action 2; exchanging every reference to the
/// two copies leaves all embeddings unchanged.
pub fn insensitivity(seeds: u64) -> Result<(), String> {
    for seed in 0..seeds {
        let (g, _) = graph(seed, 1..=5);
        let mut actions = vec![g.actions[0].clone(), g.actions[0].clone()];
        actions.extend(g.actions[1..].iter().cloned());
        let mut origins: Vec<Vec<usize>> = vec![vec![0; g.actions[0].entities.len()]; 2];
        for (i, a) in g.actions.iter().enumerate().skip(1) {
            let os = (1..=a.entities.len())
                .map(|s| match g.origin(EntityId { action: i + 1, slot: s }).unwrap() {
                    0 => 0,
                    o => o + 1,
                })
                .collect();
            origins.push(os);
        }
        // A final consumer of the first copy, so there is always a reference to exchange.
        let mut node = g.actions[0].clone();
        node.predicate = "mix".into();
        if node.entities.is_empty() {
            node.entities.push(EntityNode::new(SyntacticType::Dobj, SemanticType::Food, &["mixture"]));
        }
        origins.push(vec![1; node.entities.len()]);
        actions.push(node);

        let flipped: Vec<Vec<usize>> = origins
            .iter()
            .map(|os| {
                os.iter()
                    .map(|&o| match o {
                        1 => 2,
                        2 => 1,
                        o => o,
                    })
                    .collect()
            })
            .collect();
        let before = ActionGraph::from_origins(actions.clone(), &origins);
        let after = ActionGraph::from_origins(actions, &flipped);
        if !before.is_valid() || !after.is_valid() || before.references == after.references {
            return Err(format!("seed {seed}: bad construction"));
        }
        let p = params(seed);
        let (f1, f2) = (p.action_embeddings(&before), p.action_embeddings(&after));
        if f1[1] != f1[2] {
            return Err(format!("seed {seed}: copies embed differently"));
        }
        for j in 1..f1.len() {
            if max_diff(&f1[j], &f2[j]) > 1e-12 {
                return Err(format!("seed {seed}: f(a_{j}) moved"));
            }
        }
    }
    Ok(())
}

/// Cached, per-action and naive recursions agree, and an incremental
/// refresh after a move matches a full recomputation.
pub fn memoization(seeds: u64) -> Result<(), String> {
    for seed in 0..seeds {
        let (g, _) = graph(seed, 1..=6);
        let p = params(seed);
        let memo = p.action_embeddings(&g);
        for (i, m) in memo.iter().enumerate().skip(1) {
            let want = naive(&p, &g, i);
            let single = p.graph_embed(&g, i).map_err(|e| e.to_string())?;
            if max_diff(m, &want) > 1e-9 || max_diff(&single, &want) > 1e-9 {
                return Err(format!("seed {seed}, action {i}: memoized and naive differ"));
            }
        }
        for mv in g.enumerate_moves(CompatibilityRule::Typed, MoveSet::SwapsAndReassign).iter().take(5) {
            let h = g.apply_move(mv).unwrap();
            let first = mv.changes().iter().map(|c| c.entity.action).min().unwrap();
            let mut cache = memo.clone();
            p.refresh_embeddings(&h, &mut cache, first);
            let full = p.action_embeddings(&h);
            if cache.len() != full.len() || cache.iter().zip(&full).any(|(a, b)| max_diff(a, b) > 1e-9) {
                return Err(format!("seed {seed}: refresh from action {first} is stale"));
            }
        }
    }
    Ok(())
}

/// The score of an all-background labelling does not see references.
pub fn background_invariance(seeds: u64) -> Result<(), String> {
    for seed in 0..seeds {
        let (g, mut r) = graph(seed, 1..=5);
        let p = params(seed);
        let t_len = r.random_range(1..=8);
        let rows: Vec<Vec<f64>> =
            (0..t_len).map(|_| (0..FEATURES).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let frames = FrameSequence::from_rows(&rows, 1.0).unwrap();
        let phi = p.project_frames(&frames);
        let labels = vec![0; t_len];
        let base = FrameScores::new(&p, &phi, &p.action_embeddings(&g)).labelled_sum(&labels);
        for mv in g.enumerate_moves(CompatibilityRule::Unconstrained, MoveSet::SwapsAndReassign) {
            let h = g.apply_move(&mv).unwrap();
            let s = FrameScores::new(&p, &phi, &p.action_embeddings(&h)).labelled_sum(&labels);
            if s.to_bits() != base.to_bits() {
                return Err(format!("seed {seed}: background score moved"));
            }
        }
    }
    Ok(())
}
