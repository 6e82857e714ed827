//! Synthetic instructional videos.
//!
//! A gold recipe graph is sampled from a small verb/ingredient lexicon,
//! rendered into an ambiguous transcript (pronouns, dropped arguments,
//! renamed intermediate products, jittered time-stamps) and into frame
//! features produced by a hidden teacher embedding of each gold subgraph.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ActionGraph, ActionNode, EntityNode, SemanticType, SyntacticType, TemporalSpan};
use crate::math::{derive_seed, fnv1a, normalized};
use crate::optimizer::legalize_spans;
use crate::transcript::{Transcript, TranscriptAction};
use crate::visual::{FrameSequence, SequenceEncoder, VisualParams, WordEmbedder};

const TAG_VIDEO: u64 = 10;
const TAG_FRAMES: u64 = 11;
const TAG_EMBEDDER: u64 = 12;
const TAG_TEACHER: u64 = 13;

/// One argument of a verb signature. Food arguments are filled by the
/// generator; other arguments always carry `token`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub syn: SyntacticType,
    pub sem: SemanticType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbSpec {
    pub predicate: String,
    pub args: Vec<ArgSpec>,
    #[serde(default)]
    pub yields_location: bool,
    /// Base word for renamed outcomes of this verb.
    pub outcome_name: String,
}

impl VerbSpec {
    fn food_slots(&self) -> Vec<usize> {
        (0..self.args.len()).filter(|&j| self.args[j].sem == SemanticType::Food).collect()
    }

    fn location(&self) -> Option<&str> {
        self.args.iter().find(|a| a.sem == SemanticType::Location).and_then(|a| a.token.as_deref())
    }
}

fn food(syn: SyntacticType) -> ArgSpec {
    ArgSpec { syn, sem: SemanticType::Food, token: None }
}

fn fixed(syn: SyntacticType, sem: SemanticType, token: &str) -> ArgSpec {
    ArgSpec { syn, sem, token: Some(token.to_string()) }
}

pub fn default_verbs() -> Vec<VerbSpec> {
    use SemanticType::{Location, Other};
    use SyntacticType::{Dobj, Pp};
    let verb = |p: &str, args: Vec<ArgSpec>, name: &str| VerbSpec {
        predicate: p.to_string(),
        args,
        yields_location: false,
        outcome_name: name.to_string(),
    };
    let mut out = Vec::new();
    for (p, n) in [("chop", "pieces"), ("cut", "chunks"), ("slice", "slices"), ("dice", "cubes"), ("peel", "peeled")] {
        out.push(verb(p, vec![food(Dobj)], n));
    }
    for (p, n) in [("mix", "mixture"), ("stir", "sauce"), ("whisk", "batter")] {
        out.push(verb(p, vec![food(Dobj), food(Pp)], n));
    }
    out.push(verb("combine", vec![food(Dobj), food(Dobj), fixed(Pp, Location, "bowl")], "dough"));
    for (p, n) in [("add", "blend"), ("pour", "dressing"), ("season", "seasoned")] {
        out.push(verb(p, vec![food(Dobj), food(Pp)], n));
    }
    for (p, n) in [("cook", "cooked"), ("fry", "fried")] {
        out.push(verb(p, vec![food(Dobj), fixed(Pp, Location, "pan")], n));
    }
    out.push(verb("bake", vec![food(Dobj), fixed(Pp, Location, "oven")], "baked"));
    out.push(verb("serve", vec![food(Dobj), fixed(Pp, Other, "plate")], "dish"));
    out.push(verb("boil", vec![food(Dobj)], "broth"));
    for (p, loc) in [("preheat", "oven"), ("heat", "pan")] {
        out.push(VerbSpec { yields_location: true, ..verb(p, vec![fixed(Dobj, Location, loc)], loc) });
    }
    out
}

pub fn default_ingredients() -> Vec<String> {
    [
        "flour", "sugar", "egg", "butter", "milk", "salt", "pepper", "oil", "onion", "garlic", "tomato", "potato",
        "carrot", "lettuce", "yogurt", "lemon", "rice", "chicken", "cheese", "water", "vinegar", "honey", "basil",
        "cream",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub videos: usize,
    pub seed: u64,
    pub fps: f64,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub min_action_frames: usize,
    pub max_action_frames: usize,
    pub min_background_frames: usize,
    pub max_background_frames: usize,
    /// Time-stamp offsets are uniform integers in `[-2·jitter, 2·jitter]` frames.
    pub jitter: f64,
    pub p_rename: f64,
    pub p_pronoun: f64,
    pub p_implicit: f64,
    /// Chance a recipe opens by preparing a location (oven, pan).
    pub p_location: f64,
    /// Per-dimension standard deviation of frame noise.
    pub noise: f64,
    /// Weight of a renamed product's own direction against its ingredients.
    pub rename_spread: f64,
    /// Uniform init range of the teacher's encoder.
    pub teacher_scale: f64,
    pub ingredients: Vec<String>,
    pub verbs: Vec<VerbSpec>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            videos: 200,
            seed: 7,
            fps: 1.0,
            feature_dim: 64,
            embed_dim: crate::visual::DEFAULT_EMBED_DIM,
            min_actions: 4,
            max_actions: 7,
            min_action_frames: 6,
            max_action_frames: 12,
            min_background_frames: 2,
            max_background_frames: 6,
            jitter: 3.0,
            p_rename: 0.25,
            p_pronoun: 0.3,
            p_implicit: 0.15,
            p_location: 0.3,
            noise: 0.3,
            rename_spread: 0.3,
            teacher_scale: 0.5,
            ingredients: default_ingredients(),
            verbs: default_verbs(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.videos == 0 {
            return bad("videos must be at least 1");
        }
        if self.min_actions == 0 || self.min_actions > self.max_actions {
            return bad("action range must satisfy 1 ≤ min ≤ max");
        }
        if self.min_action_frames == 0 || self.min_action_frames > self.max_action_frames {
            return bad("frames-per-action range must satisfy 1 ≤ min ≤ max");
        }
        if self.min_background_frames > self.max_background_frames {
            return bad("background range must satisfy min ≤ max");
        }
        for (name, p) in [
            ("p_rename", self.p_rename),
            ("p_pronoun", self.p_pronoun),
            ("p_implicit", self.p_implicit),
            ("p_location", self.p_location),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.noise < 0.0 || self.jitter < 0.0 || self.fps <= 0.0 {
            return bad("noise and jitter must be ≥ 0 and fps > 0");
        }
        if self.feature_dim == 0 || self.embed_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.ingredients.is_empty() {
            return bad("ingredient lexicon is empty");
        }
        let food_verbs = self.verbs.iter().filter(|v| !v.yields_location && !v.food_slots().is_empty());
        if food_verbs.clone().count() == 0 || !food_verbs.clone().any(|v| v.food_slots().len() >= 2) {
            return bad("verb lexicon needs food verbs, including one with two food arguments");
        }
        Ok(())
    }

    fn food_verbs(&self) -> Vec<&VerbSpec> {
        self.verbs.iter().filter(|v| !v.yields_location && !v.food_slots().is_empty()).collect()
    }
}

/// A sampled recipe: gold graph with canonical surfaces and gold spans.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldVideo {
    pub graph: ActionGraph,
    pub frames: usize,
    /// Outcome base name of each action's verb.
    pub outcome_names: Vec<String>,
}

/// Samples a connected recipe: every outcome but the last is consumed,
/// and a location prepared up front is used later.
pub fn gen_graph(config: &SimConfig, rng: &mut impl Rng) -> GoldVideo {
    let n = rng.random_range(config.min_actions..=config.max_actions);
    let food_verbs = config.food_verbs();
    let two_slot: Vec<&VerbSpec> = food_verbs.iter().copied().filter(|v| v.food_slots().len() >= 2).collect();

    let mut verbs: Vec<&VerbSpec> = Vec::with_capacity(n);
    let mut origins: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut tokens: Vec<Vec<Vec<String>>> = Vec::with_capacity(n);

    // optional location preparation as the first action
    let preparers: Vec<&VerbSpec> = config
        .verbs
        .iter()
        .filter(|v| v.yields_location && v.location().is_some())
        .filter(|p| food_verbs.iter().any(|f| f.location() == p.location()))
        .collect();
    let mut location: Option<(usize, String)> = None;
    if n >= 3 && !preparers.is_empty() && rng.random::<f64>() < config.p_location {
        let p = *preparers.choose(rng).expect("nonempty");
        let tok = p.location().expect("filtered").to_string();
        verbs.push(p);
        origins.push(vec![0; p.args.len()]);
        tokens.push(p.args.iter().map(|a| a.token.iter().cloned().collect()).collect());
        location = Some((1, tok));
    }
    let first_food = verbs.len() + 1;
    // where the prepared location gets used: any food action but the last
    let consumer = location.as_ref().map(|_| rng.random_range(first_food..n));

    let mut pantry = config.ingredients.clone();
    pantry.shuffle(rng);
    let mut pantry = pantry.into_iter().cycle();
    let mut unconsumed: Vec<usize> = Vec::new();

    for i in first_food..=n {
        let last = i == n;
        let verb: &VerbSpec = if Some(i) == consumer {
            let tok = &location.as_ref().expect("consumer implies location").1;
            let users: Vec<&VerbSpec> =
                food_verbs.iter().copied().filter(|v| v.location() == Some(tok.as_str())).collect();
            users.choose(rng).expect("preparer has a user")
        } else if last && unconsumed.len() >= 2 {
            two_slot.choose(rng).expect("validated")
        } else {
            food_verbs.choose(rng).expect("validated")
        };
        let slots = verb.food_slots();
        let branch = !last && i > first_food && unconsumed.len() <= 1 && i + 2 <= n && rng.random_bool(0.25);
        let take = if i == first_food || branch {
            0
        } else if last {
            unconsumed.len().min(slots.len())
        } else {
            rng.random_range(1..=slots.len().min(unconsumed.len()))
        };
        unconsumed.shuffle(rng);
        let consumed: Vec<usize> = unconsumed.drain(..take).collect();
        let mut receiving = slots.clone();
        receiving.shuffle(rng);

        let mut os = vec![0; verb.args.len()];
        let mut ts: Vec<Vec<String>> = verb.args.iter().map(|a| a.token.iter().cloned().collect()).collect();
        for (&slot, &o) in receiving.iter().zip(&consumed) {
            os[slot] = o;
        }
        for &slot in &slots {
            if os[slot] == 0 {
                ts[slot] = vec![pantry.next().expect("cycle")];
            }
        }
        if let Some((src, tok)) = &location {
            for (j, a) in verb.args.iter().enumerate() {
                if a.sem == SemanticType::Location && a.token.as_deref() == Some(tok.as_str()) {
                    os[j] = *src;
                }
            }
        }
        unconsumed.push(i);
        verbs.push(verb);
        origins.push(os);
        tokens.push(ts);
    }

    // canonical surface of an outcome: its main (first food) ingredient
    let mut main: Vec<String> = vec![String::new(); n + 1];
    for i in 1..=n {
        let v = verbs[i - 1];
        let first = v.food_slots().first().copied();
        main[i] = match first {
            Some(j) if origins[i - 1][j] == 0 => tokens[i - 1][j][0].clone(),
            Some(j) => main[origins[i - 1][j]].clone(),
            None => v.location().unwrap_or(&v.predicate).to_string(),
        };
        for j in v.food_slots() {
            let o = origins[i - 1][j];
            if o != 0 {
                tokens[i - 1][j] = vec![main[o].clone()];
            }
        }
    }

    let actions: Vec<ActionNode> = verbs
        .iter()
        .zip(&tokens)
        .map(|(v, ts)| ActionNode {
            predicate: v.predicate.clone(),
            entities: v
                .args
                .iter()
                .zip(ts)
                .map(|(a, t)| EntityNode { syn: a.syn, sem: a.sem, tokens: t.clone() })
                .collect(),
            yields_location: v.yields_location,
        })
        .collect();

    let mut spans = Vec::with_capacity(n);
    let mut t = 0;
    for _ in 0..n {
        t += rng.random_range(config.min_background_frames..=config.max_background_frames);
        let len = rng.random_range(config.min_action_frames..=config.max_action_frames);
        spans.push(TemporalSpan::new(t, t + len - 1));
        t += len;
    }
    t += rng.random_range(config.min_background_frames..=config.max_background_frames);

    GoldVideo {
        graph: ActionGraph::from_origins(actions, &origins).with_spans(spans),
        frames: t,
        outcome_names: verbs.iter().map(|v| v.outcome_name.clone()).collect(),
    }
}

/// Food tokens that reach `action` from a₀, following gold references.
fn ingredients_of(graph: &ActionGraph, origins: &[Vec<usize>], action: usize) -> BTreeSet<String> {
    crate::linguistic::gather_ingredients(graph, origins, action)
}

/// Name and vector for a renamed outcome: the verb's base name tagged by
/// its ingredient set, embedded near the ingredients' mean.
pub fn derived_name(
    base: &str,
    ingredients: &BTreeSet<String>,
    embedder: &WordEmbedder,
    spread: f64,
) -> (String, Vec<f64>) {
    let key: Vec<&str> = ingredients.iter().map(String::as_str).collect();
    let name = format!("{base}-{:08x}", fnv1a(key.join("+").as_bytes()) as u32);
    let mut v = vec![0.0; embedder.dim()];
    for t in ingredients {
        crate::math::add_assign(&mut v, &embedder.hashed(t));
    }
    let mean = normalized(&v);
    let mut out = mean;
    crate::math::axpy(&mut out, spread, &embedder.hashed(&name));
    (name, normalized(&out))
}

/// A rendered transcript plus vectors for any renamed outcomes it uses.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub transcript: Transcript,
    /// Gold graph carrying the rendered surfaces.
    pub gold: ActionGraph,
    pub new_words: BTreeMap<String, Vec<f64>>,
}

/// Applies referring-expression ambiguity to product mentions and jitters
/// time-stamps. Raw mentions and locations keep their surfaces.
pub fn render_transcript(
    gold: &GoldVideo,
    config: &SimConfig,
    embedder: &WordEmbedder,
    rng: &mut impl Rng,
) -> Result<Rendered> {
    let g = &gold.graph;
    let origins = g.origins();
    let mut actions = g.actions.clone();
    let mut new_words = BTreeMap::new();
    for (i, action) in actions.iter_mut().enumerate() {
        for (e, &o) in action.entities.iter_mut().zip(&origins[i]) {
            if o == 0 || e.sem != SemanticType::Food {
                continue;
            }
            if rng.random::<f64>() < config.p_pronoun {
                e.tokens = vec!["it".to_string()];
            } else if rng.random::<f64>() < config.p_implicit {
                e.tokens.clear();
            } else if rng.random::<f64>() < config.p_rename {
                let ings = ingredients_of(g, &origins, o);
                if !ings.is_empty() {
                    let (name, v) = derived_name(&gold.outcome_names[o - 1], &ings, embedder, config.rename_spread);
                    e.tokens = vec![name.clone()];
                    new_words.insert(name, v);
                }
            }
        }
    }

    let spans = g.spans.as_ref().ok_or(Error::Ungrounded)?;
    let reach = (2.0 * config.jitter).round() as i64;
    let last = gold.frames as i64 - 1;
    let jittered: Vec<TemporalSpan> = spans
        .iter()
        .map(|s| {
            let mut shift = |x: usize| -> usize {
                let d = if reach > 0 { rng.random_range(-reach..=reach) } else { 0 };
                (x as i64 + d).clamp(0, last) as usize
            };
            let a = shift(s.start);
            let b = shift(s.end);
            TemporalSpan::new(a.min(b), a.max(b))
        })
        .collect();
    let timestamps = legalize_spans(&jittered, gold.frames)?;

    let transcript = Transcript {
        frames: gold.frames,
        fps: config.fps,
        actions: actions
            .iter()
            .zip(&timestamps)
            .map(|(a, &ts)| TranscriptAction {
                predicate: a.predicate.clone(),
                entities: a.entities.clone(),
                timestamp: ts,
                yields_location: a.yields_location,
            })
            .collect(),
    };
    let gold_graph = ActionGraph { actions, references: g.references.clone(), spans: g.spans.clone() };
    Ok(Rendered { transcript, gold: gold_graph, new_words })
}

/// Hidden embedding used to render frames. Shares word vectors with the
/// learner, nothing else.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub params: VisualParams,
    /// `feature_dim × embed_dim`, row-major.
    pub lift: Vec<f64>,
}

impl Teacher {
    pub fn new(embedder: WordEmbedder, config: &SimConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = embedder.dim();
        let mut params = VisualParams::init(embedder, config.feature_dim, 1.0, rng.random());
        params.encoder = SequenceEncoder::init(d, config.teacher_scale, rng.random());
        params.background = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lift = (0..config.feature_dim * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { params, lift }
    }

    /// Noise-free feature for each label (0 = background).
    pub fn prototypes(&self, graph: &ActionGraph) -> Vec<Vec<f64>> {
        let d = self.params.dim();
        let dd = self.lift.len() / d;
        let emb = self.params.action_embeddings(graph);
        std::iter::once(normalized(&self.params.background))
            .chain(emb.iter().skip(1).map(|f| normalized(f)))
            .map(|f| {
                let mut x = vec![0.0; dd];
                crate::math::matvec(&self.lift, dd, d, &f, &mut x);
                x
            })
            .collect()
    }
}

/// Frames for a grounded gold graph: the teacher prototype of each frame's
/// label plus isotropic Gaussian noise.
pub fn render_frames(
    gold: &ActionGraph,
    frames: usize,
    teacher: &Teacher,
    config: &SimConfig,
    rng: &mut impl Rng,
) -> Result<FrameSequence> {
    let labels = gold.frame_labels(frames)?;
    let protos = teacher.prototypes(gold);
    let mut features = Vec::with_capacity(frames * config.feature_dim);
    for &l in &labels {
        for &v in &protos[l] {
            let eps: f64 = StandardNormal.sample(rng);
            features.push((v + config.noise * eps) as f32);
        }
    }
    FrameSequence::new(features, config.feature_dim, config.fps as f32, 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimVideo {
    pub transcript: Transcript,
    pub frames: FrameSequence,
    pub gold: ActionGraph,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimCorpus {
    pub config: SimConfig,
    /// Word vectors, including every renamed outcome.
    pub embedder: WordEmbedder,
    pub videos: Vec<SimVideo>,
}

/// Generates the full corpus. Every video draws from its own seed stream,
/// so the result does not depend on `jobs`.
pub fn generate(config: &SimConfig) -> Result<SimCorpus> {
    generate_with_jobs(config, 1)
}

pub fn generate_with_jobs(config: &SimConfig, jobs: usize) -> Result<SimCorpus> {
    config.validate()?;
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| Error::Config(e.to_string()))?;
    let base = WordEmbedder::new(config.embed_dim, derive_seed(config.seed, TAG_EMBEDDER, 0));
    let rendered: Vec<(usize, Rendered)> = pool.install(|| {
        (0..config.videos)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_VIDEO, k as u64));
                let gold = gen_graph(config, &mut rng);
                render_transcript(&gold, config, &base, &mut rng).map(|r| (gold.frames, r))
            })
            .collect::<Result<_>>()
    })?;
    let words: BTreeMap<String, Vec<f64>> =
        rendered.iter().flat_map(|(_, r)| r.new_words.iter().map(|(k, v)| (k.clone(), v.clone()))).collect();
    let embedder = base.with_overrides(words);
    let teacher = Teacher::new(embedder.clone(), config, derive_seed(config.seed, TAG_TEACHER, 0));
    let videos: Vec<SimVideo> = pool.install(|| {
        rendered
            .into_par_iter()
            .enumerate()
            .map(|(k, (frames, r))| {
                let seed = derive_seed(config.seed, TAG_FRAMES, k as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut fs = render_frames(&r.gold, frames, &teacher, config, &mut rng)?;
                fs.seed = seed;
                Ok(SimVideo { transcript: r.transcript, frames: fs, gold: r.gold })
            })
            .collect::<Result<_>>()
    })?;
    Ok(SimCorpus { config: config.clone(), embedder, videos })
}
