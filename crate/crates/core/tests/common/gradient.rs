//! Triplet-loss gradients against central finite differences.

use refgraph::graph::{ActionGraph, ActionNode, EntityNode, SemanticType, SyntacticType, TemporalSpan};
use refgraph::visual::train::{sample_triplets, triplet_loss, triplet_loss_and_grad, TrainingVideo};
use refgraph::visual::{FrameSequence, TripletConfig, VisualParams, WordEmbedder};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
/// Below this magnitude both values are compared absolutely.
const FLOOR: f64 = 1e-6;
const WORD_DIM: usize = 5;

/// Two actions, three frames: one per action and one background frame.
pub fn toy(seed: u64) -> (ActionGraph, FrameSequence, VisualParams) {
    let food = |t: &[&str]| EntityNode::new(SyntacticType::Dobj, SemanticType::Food, t);
    let g = ActionGraph::from_origins(
        vec![
            ActionNode::new("mix", vec![food(&["oil"]), food(&["salt"])]),
            ActionNode::new("pour", vec![food(&["mixture"]), food(&[]), food(&["salad", "leaf"])]),
        ],
        &[vec![0, 0], vec![1, 0, 0]],
    )
    .with_spans(vec![TemporalSpan::new(0, 0), TemporalSpan::new(2, 2)]);
    let mut r = super::rng(seed);
    let rows: Vec<Vec<f64>> =
        (0..3).map(|_| (0..6).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect()).collect();
    let frames = FrameSequence::from_rows(&rows, 1.0).unwrap();
    let mut p = VisualParams::init_scaled(WordEmbedder::new(WORD_DIM, seed), 6, 0.75, 0.5, seed);
    p.word_deltas.insert("oil".into(), vec![0.1, -0.2, 0.05, 0.0, 0.3]);
    (g, frames, p)
}

fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)).fold(0.0, f64::max)
}

/// Finite-difference oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Oracle {
    /// Central differences with step `H`.
    Central,
    /// Richardson extrapolation of central differences at `H` and `H/2`;
    /// error falls as `H^4`.
    Richardson,
}

/// Worst relative error per parameter group on the toy corpus.
pub fn errors(seed: u64, margin: f64, oracle: Oracle) -> Vec<(&'static str, f64)> {
    let (g, f, mut p) = toy(seed);
    let videos = [TrainingVideo { graph: &g, frames: &f }];
    let set = sample_triplets(&videos, &TripletConfig::default(), seed).unwrap();
    let (_, grad) = triplet_loss_and_grad(&p, &videos, &set, margin);
    assert!(grad.words.contains_key("oil") && grad.words.contains_key("pour"));
    // Every token the encoder reads gets a delta so it can be perturbed.
    for tok in grad.words.keys() {
        p.word_deltas.entry(tok.clone()).or_insert_with(|| vec![0.0; WORD_DIM]);
    }
    let loss = |q: &VisualParams| triplet_loss(q, &videos, &set, margin);
    let numeric = |get: &dyn Fn(&mut VisualParams) -> &mut [f64], n: usize| -> Vec<f64> {
        let central = |k: usize, h: f64| {
            let mut a = p.clone();
            get(&mut a)[k] += h;
            let mut b = p.clone();
            get(&mut b)[k] -= h;
            (loss(&a) - loss(&b)) / (2.0 * h)
        };
        (0..n)
            .map(|k| match oracle {
                Oracle::Central => central(k, H),
                Oracle::Richardson => (4.0 * central(k, H / 2.0) - central(k, H)) / 3.0,
            })
            .collect()
    };
    let mut out = vec![
        ("encoder", max_rel_error(&grad.encoder, &numeric(&|q| q.encoder.params_mut(), p.encoder.params().len()))),
        ("projection", max_rel_error(&grad.projection, &numeric(&|q| &mut q.projection[..], p.projection.len()))),
        ("background", max_rel_error(&grad.background, &numeric(&|q| &mut q.background[..], p.background.len()))),
    ];
    let mut words = 0.0f64;
    for (tok, gw) in &grad.words {
        let t = tok.clone();
        let num = numeric(&move |q| &mut q.word_deltas.get_mut(&t).unwrap()[..], gw.len());
        words = words.max(max_rel_error(gw, &num));
    }
    out.push(("word deltas", words));
    out
}
