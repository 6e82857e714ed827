#![allow(dead_code)]

pub mod alignment;
pub mod embedding;
pub mod gradient;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refgraph::graph::{
    ActionGraph, ActionNode, CompatibilityRule, EntityId, EntityNode, MoveSet, SemanticType, SyntacticType,
    TemporalSpan,
};
use refgraph::simulator::SimConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const WORDS: [&str; 8] = ["oil", "salt", "tomato", "onion", "flour", "egg", "it", "mixture"];
const VERBS: [&str; 5] = ["mix", "chop", "add", "bake", "stir"];

/// A valid graph with `actions` actions and up to `max_entities` entities
/// per action. Some actions yield locations and some entities are
/// locations, implicit or multi-token.
pub fn random_graph(rng: &mut impl Rng, actions: usize, max_entities: usize) -> ActionGraph {
    let mut nodes = Vec::with_capacity(actions);
    let mut origins = Vec::with_capacity(actions);
    for i in 1..=actions {
        let k = rng.random_range(0..=max_entities);
        let mut entities = Vec::with_capacity(k);
        let mut os = Vec::with_capacity(k);
        for _ in 0..k {
            let sem = match rng.random_range(0..10) {
                0 | 1 => SemanticType::Location,
                2 => SemanticType::Other,
                _ => SemanticType::Food,
            };
            let syn = if rng.random_bool(0.5) { SyntacticType::Dobj } else { SyntacticType::Pp };
            let tokens: Vec<&str> = match rng.random_range(0..6) {
                0 => vec![],
                1 => vec![WORDS[rng.random_range(0..WORDS.len())], WORDS[rng.random_range(0..WORDS.len())]],
                _ => vec![WORDS[rng.random_range(0..WORDS.len())]],
            };
            let node = EntityNode::new(syn, sem, &tokens);
            let legal: Vec<usize> = (0..i).filter(|&o| allows(&nodes, &node, o, CompatibilityRule::Typed)).collect();
            os.push(legal[rng.random_range(0..legal.len())]);
            entities.push(node);
        }
        let mut node = ActionNode::new(VERBS[rng.random_range(0..VERBS.len())], entities);
        node.yields_location = rng.random_bool(0.3);
        nodes.push(node);
        origins.push(os);
    }
    ActionGraph::from_origins(nodes, &origins)
}

/// Adds `actions` disjoint spans in order inside `frames` frames.
pub fn random_spans(rng: &mut impl Rng, actions: usize, frames: usize) -> Vec<TemporalSpan> {
    assert!(frames >= actions);
    let mut cuts: BTreeSet<usize> = BTreeSet::new();
    while cuts.len() < 2 * actions {
        cuts.insert(rng.random_range(0..frames + actions));
    }
    // Map sorted distinct points in 0..T+N to ordered inclusive spans.
    let c: Vec<usize> = cuts.into_iter().collect();
    (0..actions)
        .map(|k| {
            let s = c[2 * k] - k;
            let e = (c[2 * k + 1] - k - 1).max(s);
            TemporalSpan::new(s, e)
        })
        .collect()
}

/// Compatibility, restated from its definition.
pub fn allows(actions: &[ActionNode], entity: &EntityNode, origin: usize, rule: CompatibilityRule) -> bool {
    if origin == 0 || rule == CompatibilityRule::Unconstrained {
        return true;
    }
    match entity.sem {
        SemanticType::Location => actions[origin - 1].yields_location,
        _ => true,
    }
}

/// A move as the set of `(entity, old, new)` changes it makes.
pub type Edit = BTreeSet<(EntityId, usize, usize)>;

pub fn edit_of(m: &refgraph::graph::Move) -> Edit {
    m.changes().iter().map(|c| (c.entity, c.old, c.new)).collect()
}

/// Every legal neighbour, by exhaustive enumeration of entity pairs and
/// origins.
pub fn brute_force_moves(graph: &ActionGraph, rule: CompatibilityRule, set: MoveSet) -> BTreeSet<Edit> {
    let mut out = BTreeSet::new();
    let ids: Vec<EntityId> = graph.entity_ids().collect();
    let ent = |id: EntityId| &graph.actions[id.action - 1].entities[id.slot - 1];
    let org = |id: EntityId| graph.origin(id).unwrap();
    for (x, &a) in ids.iter().enumerate() {
        for &b in &ids[x + 1..] {
            let (oa, ob) = (org(a), org(b));
            if oa == ob || ob >= a.action || oa >= b.action {
                continue;
            }
            if allows(&graph.actions, ent(a), ob, rule) && allows(&graph.actions, ent(b), oa, rule) {
                out.insert([(a, oa, ob), (b, ob, oa)].into_iter().collect());
            }
        }
    }
    if set == MoveSet::SwapsAndReassign {
        for &a in &ids {
            for o in 0..a.action {
                if o != org(a) && allows(&graph.actions, ent(a), o, rule) {
                    out.insert([(a, org(a), o)].into_iter().collect());
                }
            }
        }
    }
    out
}

/// Every legal reference assignment of `graph`'s skeleton.
pub fn all_assignments(graph: &ActionGraph, rule: CompatibilityRule) -> Vec<ActionGraph> {
    let ids: Vec<EntityId> = graph.entity_ids().collect();
    let options: Vec<Vec<usize>> = ids
        .iter()
        .map(|id| {
            let e = &graph.actions[id.action - 1].entities[id.slot - 1];
            (0..id.action).filter(|&o| allows(&graph.actions, e, o, rule)).collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut pick = vec![0usize; ids.len()];
    loop {
        let mut origins: Vec<Vec<usize>> = graph.actions.iter().map(|a| vec![0; a.entities.len()]).collect();
        for (k, id) in ids.iter().enumerate() {
            origins[id.action - 1][id.slot - 1] = options[k][pick[k]];
        }
        let mut g = ActionGraph::from_origins(graph.actions.clone(), &origins);
        g.spans = graph.spans.clone();
        out.push(g);
        let mut k = 0;
        loop {
            if k == ids.len() {
                return out;
            }
            pick[k] += 1;
            if pick[k] < options[k].len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

/// A few short videos; cheap enough for exhaustive checks.
pub fn small_sim(videos: usize, seed: u64) -> SimConfig {
    SimConfig {
        videos,
        seed,
        min_actions: 2,
        max_actions: 3,
        min_action_frames: 2,
        max_action_frames: 4,
        min_background_frames: 0,
        max_background_frames: 2,
        feature_dim: 8,
        ..SimConfig::default()
    }
}

/// Instances for checking hill climbing against exhaustive search: short
/// simulated videos with at most `max_entities` entities, scored by a
/// linguistic model fitted to their gold graphs and a random visual model.
pub struct SearchInstances {
    pub corpus: refgraph::simulator::SimCorpus,
    pub model: refgraph::optimizer::Model,
    pub picked: Vec<usize>,
}

pub fn search_instances(count: usize, max_entities: usize, seed: u64) -> SearchInstances {
    use refgraph::linguistic::{fit_linguistic, LinguisticConfig};
    use refgraph::optimizer::Model;
    use refgraph::visual::{VisualParams, DEFAULT_TAU};

    let corpus = refgraph::simulator::generate(&small_sim(3 * count, seed)).unwrap();
    let golds: Vec<&ActionGraph> = corpus.videos.iter().map(|v| &v.gold).collect();
    let linguistic =
        fit_linguistic(&golds, &corpus.embedder, &LinguisticConfig { sigma: 4.0, ..Default::default() }).unwrap();
    let visual = VisualParams::init(corpus.embedder.clone(), corpus.config.feature_dim, DEFAULT_TAU, seed);
    let picked: Vec<usize> = (0..corpus.videos.len())
        .filter(|&k| {
            let n = corpus.videos[k].gold.num_entities();
            (1..=max_entities).contains(&n)
        })
        .take(count)
        .collect();
    assert_eq!(picked.len(), count, "not enough small videos");
    let model = Model { embedder: corpus.embedder.clone(), linguistic, visual: Some(visual), similarity: None };
    SearchInstances { corpus, model, picked }
}

pub struct OracleReport {
    pub instances: usize,
    /// Final score within 5% of `|optimum|` below the optimum.
    pub near_optimal: usize,
    /// No single move improves the final graph.
    pub local_optima: usize,
    pub exact: usize,
}

/// Hill climbing from the sequential initialization versus the best of all
/// legal reference assignments, under the joint objective.
pub fn local_search_oracle(inst: &SearchInstances) -> OracleReport {
    use refgraph::optimizer::{init_graph, ScoreWeights, SearchConfig, VideoScorer, VisualTerm};

    let mut r = OracleReport { instances: 0, near_optimal: 0, local_optima: 0, exact: 0 };
    let config = SearchConfig { compat: CompatibilityRule::Typed, move_set: MoveSet::SwapsAndReassign };
    for &k in &inst.picked {
        let v = &inst.corpus.videos[k];
        let scorer = VideoScorer::new(
            &v.transcript,
            Some(&v.frames),
            &inst.model,
            ScoreWeights::default(),
            VisualTerm::Embedding,
        )
        .unwrap();
        let start = init_graph(&v.transcript).unwrap();
        let out = scorer.local_search(&start, &config).unwrap();
        let fin = scorer.total(&out.graph).unwrap();
        let best = all_assignments(&start, CompatibilityRule::Typed)
            .iter()
            .map(|g| scorer.total(g).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        r.instances += 1;
        if best - fin <= 0.05 * best.abs() {
            r.near_optimal += 1;
        }
        if best - fin <= 1e-9 * (1.0 + best.abs()) {
            r.exact += 1;
        }
        let improvable = out
            .graph
            .enumerate_moves(config.compat, config.move_set)
            .iter()
            .any(|m| scorer.total(&out.graph.apply_move(m).unwrap()).unwrap() > fin + 1e-9 * (1.0 + fin.abs()));
        if !improvable {
            r.local_optima += 1;
        }
    }
    r
}

/// The learner's view of a simulated corpus, gold included.
pub fn videos_of(corpus: &refgraph::simulator::SimCorpus) -> Vec<refgraph::optimizer::VideoData> {
    corpus
        .videos
        .iter()
        .map(|v| refgraph::optimizer::VideoData {
            transcript: v.transcript.clone(),
            frames: Some(v.frames.clone()),
            gold: Some(v.gold.clone()),
        })
        .collect()
}
