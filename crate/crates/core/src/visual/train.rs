//! Triplet-loss training of the visual model.
//!
//! Each frame inside an action span yields two triplets: the positive is the
//! frame's own subgraph `H_i`; one negative is `H_i` with a random legal move
//! applied inside it, the other is a different subgraph `H_j` (or the
//! background vector). Background frames use `b_0` as positive and a random
//! action as negative. The loss is the mean of
//! `max(0, m - cos(x, H+) + cos(x, H-))` and is minimized with Adam through
//! the frame projection, the encoder, the background vector and per-token
//! word offsets.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EncoderTape, FrameSequence, VisualParams};
use crate::error::{Error, Result};
use crate::graph::{ActionGraph, CompatibilityRule, MoveSet};
use crate::math::{add_assign, axpy, cosine, cosine_grad_acc, derive_seed, matvec, outer_acc};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub seed: u64,
    pub compat: CompatibilityRule,
    pub move_set: MoveSet,
    /// Distinct perturbed subgraphs drawn per action span.
    pub perturbations_per_span: usize,
    pub jobs: usize,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            learning_rate: 0.01,
            margin: 0.2,
            seed: 0,
            compat: CompatibilityRule::Typed,
            move_set: MoveSet::SwapsOnly,
            perturbations_per_span: 2,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Loss before each step, then after the last one.
    pub losses: Vec<f64>,
    pub triplets: usize,
}

#[derive(Clone, Copy)]
pub struct TrainingVideo<'a> {
    pub graph: &'a ActionGraph,
    pub frames: &'a FrameSequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Target {
    Background,
    Action { graph: usize, action: usize },
}

#[derive(Clone, Copy, Debug)]
struct Triplet {
    frame: usize,
    pos: Target,
    neg: Target,
}

#[derive(Clone, Debug)]
struct VideoTriplets {
    /// `graphs[0]` is the current graph, the rest are perturbations.
    graphs: Vec<ActionGraph>,
    /// Highest action whose embedding each graph needs.
    depth: Vec<usize>,
    triplets: Vec<Triplet>,
}

/// A frozen sample of triplets over a set of videos.
#[derive(Clone, Debug)]
pub struct TripletSet {
    videos: Vec<VideoTriplets>,
    count: usize,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

pub fn sample_triplets(videos: &[TrainingVideo<'_>], config: &TripletConfig, seed: u64) -> Result<TripletSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(videos.len());
    let mut count = 0;
    let mut positives = 0;
    for v in videos {
        let labels = v.graph.frame_labels(v.frames.len())?;
        let n = v.graph.num_actions();
        let moves = v.graph.enumerate_moves(config.compat, config.move_set);
        let mut graphs = vec![v.graph.clone()];
        let mut depth = vec![n];
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for (i, pool) in pools.iter_mut().enumerate().skip(1) {
            let inside: Vec<_> = moves.iter().filter(|m| m.changes().iter().all(|c| c.entity.action <= i)).collect();
            let k = config.perturbations_per_span.min(inside.len());
            for mv in inside.choose_multiple(&mut rng, k) {
                graphs.push(v.graph.apply_move(mv)?);
                depth.push(i);
                pool.push(graphs.len() - 1);
            }
        }
        let mut triplets = Vec::new();
        for (t, &i) in labels.iter().enumerate() {
            if i >= 1 {
                positives += 1;
                let pos = Target::Action { graph: 0, action: i };
                if let Some(&g) = pools[i].choose(&mut rng) {
                    triplets.push(Triplet { frame: t, pos, neg: Target::Action { graph: g, action: i } });
                }
                let mut j = rng.random_range(0..n);
                if j >= i {
                    j += 1;
                }
                let neg = if j == 0 { Target::Background } else { Target::Action { graph: 0, action: j } };
                triplets.push(Triplet { frame: t, pos, neg });
            } else if n >= 1 {
                let j = rng.random_range(1..=n);
                triplets.push(Triplet {
                    frame: t,
                    pos: Target::Background,
                    neg: Target::Action { graph: 0, action: j },
                });
            }
        }
        count += triplets.len();
        out.push(VideoTriplets { graphs, depth, triplets });
    }
    if positives == 0 {
        return Err(Error::NoPositivePairs);
    }
    Ok(TripletSet { videos: out, count })
}

/// Gradient of the mean triplet loss, shaped like [`VisualParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct VisualGrad {
    pub encoder: Vec<f64>,
    pub projection: Vec<f64>,
    pub background: Vec<f64>,
    pub words: BTreeMap<String, Vec<f64>>,
}

impl VisualGrad {
    fn zeros(p: &VisualParams) -> Self {
        Self {
            encoder: vec![0.0; p.encoder.params().len()],
            projection: vec![0.0; p.projection.len()],
            background: vec![0.0; p.dim()],
            words: BTreeMap::new(),
        }
    }

    fn add(&mut self, other: &VisualGrad) {
        add_assign(&mut self.encoder, &other.encoder);
        add_assign(&mut self.projection, &other.projection);
        add_assign(&mut self.background, &other.background);
        for (k, v) in &other.words {
            match self.words.get_mut(k) {
                Some(acc) => add_assign(acc, v),
                None => {
                    self.words.insert(k.clone(), v.clone());
                }
            }
        }
    }

    fn word_acc(&mut self, token: &str, scale: f64, g: &[f64]) {
        let acc = self.words.entry(token.to_string()).or_insert_with(|| vec![0.0; g.len()]);
        axpy(acc, scale, g);
    }
}

struct GraphTape {
    embeddings: Vec<Vec<f64>>,
    tapes: Vec<Option<EncoderTape>>,
}

fn forward_graph(params: &VisualParams, graph: &ActionGraph, depth: usize) -> GraphTape {
    let origins = graph.origins();
    let mut embeddings = vec![vec![0.0; params.dim()]];
    let mut tapes = vec![None];
    for i in 1..=depth {
        let inputs = params.action_inputs(graph, i, &origins[i - 1], &embeddings);
        let (h, tape) = params.encoder.forward_with_tape(&inputs);
        embeddings.push(h);
        tapes.push(Some(tape));
    }
    GraphTape { embeddings, tapes }
}

fn backward_graph(
    params: &VisualParams,
    graph: &ActionGraph,
    tape: &GraphTape,
    mut d_embed: Vec<Vec<f64>>,
    grad: &mut VisualGrad,
) {
    let origins = graph.origins();
    for i in (1..tape.embeddings.len()).rev() {
        if d_embed[i].iter().all(|&x| x == 0.0) {
            continue;
        }
        let step_tape = tape.tapes[i].as_ref().expect("tape for computed action");
        let d_inputs = params.encoder.backward(step_tape, &d_embed[i], &mut grad.encoder);
        let action = &graph.actions[i - 1];
        grad.word_acc(&action.predicate, 1.0, &d_inputs[0]);
        for (j, e) in action.entities.iter().enumerate() {
            let d = &d_inputs[j + 1];
            if !e.tokens.is_empty() {
                let scale = 1.0 / e.tokens.len() as f64;
                for tok in &e.tokens {
                    grad.word_acc(tok, scale, d);
                }
            }
            let o = origins[i - 1][j];
            if params.reference_aware && o > 0 {
                let (head, tail) = d_embed.split_at_mut(i);
                let _ = tail;
                add_assign(&mut head[o], d);
            }
        }
    }
}

fn video_loss_grad(
    params: &VisualParams,
    video: &TrainingVideo<'_>,
    set: &VideoTriplets,
    margin: f64,
    scale: f64,
    want_grad: bool,
) -> (f64, Option<VisualGrad>) {
    let d = params.dim();
    let tapes: Vec<GraphTape> =
        set.graphs.iter().zip(&set.depth).map(|(g, &depth)| forward_graph(params, g, depth)).collect();
    let mut projected: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for tr in &set.triplets {
        projected.entry(tr.frame).or_insert_with(|| {
            let x = video.frames.row_f64(tr.frame);
            let mut u = vec![0.0; d];
            matvec(&params.projection, d, params.feature_dim, &x, &mut u);
            (x, u)
        });
    }

    let target = |t: Target| -> &[f64] {
        match t {
            Target::Background => &params.background,
            Target::Action { graph, action } => &tapes[graph].embeddings[action],
        }
    };

    let mut loss = 0.0;
    let mut grad = want_grad.then(|| VisualGrad::zeros(params));
    let mut d_embed: Vec<Vec<Vec<f64>>> = tapes.iter().map(|t| vec![vec![0.0; d]; t.embeddings.len()]).collect();
    let mut d_u: BTreeMap<usize, Vec<f64>> = BTreeMap::new();

    for tr in &set.triplets {
        let (_, u) = &projected[&tr.frame];
        let vp = target(tr.pos);
        let vn = target(tr.neg);
        let l = margin - cosine(u, vp) + cosine(u, vn);
        if l <= 0.0 {
            continue;
        }
        loss += l * scale;
        if let Some(grad) = grad.as_mut() {
            let du = d_u.entry(tr.frame).or_insert_with(|| vec![0.0; d]);
            let mut dvp = vec![0.0; d];
            let mut dvn = vec![0.0; d];
            cosine_grad_acc(u, vp, -scale, du, &mut dvp);
            cosine_grad_acc(u, vn, scale, du, &mut dvn);
            for (t, dv) in [(tr.pos, dvp), (tr.neg, dvn)] {
                match t {
                    Target::Background => add_assign(&mut grad.background, &dv),
                    Target::Action { graph, action } => add_assign(&mut d_embed[graph][action], &dv),
                }
            }
        }
    }

    if let Some(grad) = grad.as_mut() {
        for (t, du) in &d_u {
            let (x, _) = &projected[t];
            outer_acc(&mut grad.projection, params.feature_dim, du, x);
        }
        for ((g, tape), de) in set.graphs.iter().zip(&tapes).zip(d_embed) {
            backward_graph(params, g, tape, de, grad);
        }
    }
    (loss, grad)
}

fn loss_and_grad(
    params: &VisualParams,
    videos: &[TrainingVideo<'_>],
    set: &TripletSet,
    margin: f64,
    want_grad: bool,
    pool: Option<&rayon::ThreadPool>,
) -> (f64, Option<VisualGrad>) {
    let scale = 1.0 / set.count.max(1) as f64;
    let work = |k: usize| video_loss_grad(params, &videos[k], &set.videos[k], margin, scale, want_grad);
    let parts: Vec<(f64, Option<VisualGrad>)> = match pool {
        Some(pool) => pool.install(|| (0..videos.len()).into_par_iter().map(work).collect()),
        None => (0..videos.len()).map(work).collect(),
    };
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| VisualGrad::zeros(params));
    for (l, g) in parts {
        loss += l;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add(&g);
        }
    }
    (loss, grad)
}

/// Mean hinge loss over a frozen triplet set.
pub fn triplet_loss(params: &VisualParams, videos: &[TrainingVideo<'_>], set: &TripletSet, margin: f64) -> f64 {
    loss_and_grad(params, videos, set, margin, false, None).0
}

pub fn triplet_loss_and_grad(
    params: &VisualParams,
    videos: &[TrainingVideo<'_>],
    set: &TripletSet,
    margin: f64,
) -> (f64, VisualGrad) {
    let (l, g) = loss_and_grad(params, videos, set, margin, true, None);
    (l, g.expect("gradient requested"))
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Clone, Debug)]
pub(crate) struct Adam {
    lr: f64,
    t: i32,
}

impl Adam {
    pub(crate) fn new(lr: f64) -> Self {
        Self { lr, t: 0 }
    }

    pub(crate) fn tick(&mut self) {
        self.t += 1;
    }

    fn update(&self, params: &mut [f64], grad: &[f64], mom: &mut Moments) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for k in 0..params.len() {
            mom.m[k] = B1 * mom.m[k] + (1.0 - B1) * grad[k];
            mom.v[k] = B2 * mom.v[k] + (1.0 - B2) * grad[k] * grad[k];
            let mh = mom.m[k] / c1;
            let vh = mom.v[k] / c2;
            params[k] -= self.lr * mh / (vh.sqrt() + EPS);
        }
    }
}

/// Per-parameter Adam moments, with a slot per trainable slice.
#[derive(Clone, Debug, Default)]
pub(crate) struct AdamSlots {
    slots: BTreeMap<String, Moments>,
}

impl AdamSlots {
    pub(crate) fn step(&mut self, adam: &Adam, key: &str, params: &mut [f64], grad: &[f64]) {
        let mom = self.slots.entry(key.to_string()).or_insert_with(|| Moments::new(params.len()));
        adam.update(params, grad, mom);
    }
}

fn apply_grad(params: &mut VisualParams, grad: &VisualGrad, adam: &Adam, slots: &mut AdamSlots) {
    slots.step(adam, "encoder", params.encoder.params_mut(), &grad.encoder);
    slots.step(adam, "projection", &mut params.projection, &grad.projection);
    slots.step(adam, "background", &mut params.background, &grad.background);
    let dim = params.dim();
    for (tok, g) in &grad.words {
        let key = format!("word:{tok}");
        if !params.word_deltas.contains_key(tok) && g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let delta = params.word_deltas.entry(tok.clone()).or_insert_with(|| vec![0.0; dim]);
        slots.step(adam, &key, delta, g);
    }
}

fn thread_pool(jobs: usize) -> Result<Option<rayon::ThreadPool>> {
    (jobs > 1)
        .then(|| rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Config(e.to_string())))
        .transpose()
}

/// Full-batch Adam. Triplets are resampled before every step.
pub fn train_triplets(
    params: &VisualParams,
    videos: &[TrainingVideo<'_>],
    config: &TripletConfig,
) -> Result<(VisualParams, TrainReport)> {
    let epoch_seed = |step: usize| derive_seed(config.seed, 0, step as u64);
    let mut set = sample_triplets(videos, config, epoch_seed(0))?;
    let pool = thread_pool(config.jobs)?;
    let mut out = params.clone();
    let mut report = TrainReport { losses: Vec::with_capacity(config.steps + 1), triplets: set.len() };
    let mut adam = Adam::new(config.learning_rate);
    let mut slots = AdamSlots::default();
    for step in 0..config.steps {
        if step > 0 {
            set = sample_triplets(videos, config, epoch_seed(step))?;
        }
        let (loss, grad) = loss_and_grad(&out, videos, &set, config.margin, true, pool.as_ref());
        report.losses.push(loss);
        adam.tick();
        apply_grad(&mut out, &grad.expect("gradient requested"), &adam, &mut slots);
    }
    report.losses.push(loss_and_grad(&out, videos, &set, config.margin, false, pool.as_ref()).0);
    Ok((out, report))
}

/// Full-batch Adam on one frozen triplet set.
pub fn train_on_set(
    params: &VisualParams,
    videos: &[TrainingVideo<'_>],
    set: &TripletSet,
    config: &TripletConfig,
) -> Result<(VisualParams, TrainReport)> {
    let pool = thread_pool(config.jobs)?;
    let mut out = params.clone();
    let mut report = TrainReport { losses: Vec::with_capacity(config.steps + 1), triplets: set.len() };
    let mut adam = Adam::new(config.learning_rate);
    let mut slots = AdamSlots::default();
    for _ in 0..config.steps {
        let (loss, grad) = loss_and_grad(&out, videos, set, config.margin, true, pool.as_ref());
        report.losses.push(loss);
        adam.tick();
        apply_grad(&mut out, &grad.expect("gradient requested"), &adam, &mut slots);
    }
    report.losses.push(loss_and_grad(&out, videos, set, config.margin, false, pool.as_ref()).0);
    Ok((out, report))
}
