//! The hard-EM round driver.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Model, ScoreWeights, SearchConfig, VideoScorer, VisualTerm};
use crate::error::{Error, Result};
use crate::eval::random_perturbation;
use crate::graph::{ActionGraph, CompatibilityRule, MoveSet};
use crate::linguistic::{fit_linguistic, LinguisticConfig};
use crate::math::derive_seed;
use crate::transcript::Transcript;
use crate::visual::similarity::{train_similarity, SimilarityConfig};
use crate::visual::train::{train_triplets, TrainingVideo, TripletConfig};
use crate::visual::{FrameSequence, FrameSimilarity, VisualParams, WordEmbedder};

const TAG_VISUAL_INIT: u64 = 1;
const TAG_SIMILARITY_INIT: u64 = 2;
const TAG_TRIPLETS: u64 = 3;
const TAG_LINGUISTIC: u64 = 4;
const TAG_PERTURB: u64 = 5;
const TAG_SIMILARITY_TRAIN: u64 = 6;

/// Pipeline variants, from the trivial baselines to the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sequential,
    Random,
    Visual,
    Linguistic,
    Rfes,
    Fes,
    NoAlign,
    Full,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Sequential,
        Mode::Random,
        Mode::Visual,
        Mode::Linguistic,
        Mode::Rfes,
        Mode::Fes,
        Mode::NoAlign,
        Mode::Full,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Sequential => "sequential",
            Mode::Random => "random",
            Mode::Visual => "visual",
            Mode::Linguistic => "linguistic",
            Mode::Rfes => "rfes",
            Mode::Fes => "fes",
            Mode::NoAlign => "no-align",
            Mode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// Whether EM runs at all.
    pub fn is_iterative(&self) -> bool {
        !matches!(self, Mode::Sequential | Mode::Random)
    }

    pub fn weights(&self) -> ScoreWeights {
        match self {
            Mode::Visual => ScoreWeights { linguistic: 0.0, visual: 1.0 },
            Mode::Linguistic | Mode::Sequential | Mode::Random => ScoreWeights { linguistic: 0.5, visual: 0.0 },
            _ => ScoreWeights::default(),
        }
    }

    pub fn visual_term(&self) -> VisualTerm {
        match self {
            Mode::Visual | Mode::NoAlign | Mode::Full => VisualTerm::Embedding,
            Mode::Rfes | Mode::Fes => VisualTerm::Similarity,
            _ => VisualTerm::None,
        }
    }

    pub fn aligns(&self) -> bool {
        *self == Mode::Full
    }

    pub fn needs_frames(&self) -> bool {
        self.visual_term() != VisualTerm::None
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Word composition used by the graph embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    /// Entities add the embedding of the action they reference.
    #[default]
    Reference,
    /// Entities contribute their words only.
    Stripped,
}

impl EmbeddingKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reference" => Some(Self::Reference),
            "stripped" => Some(Self::Stripped),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Reference => "reference",
            Self::Stripped => "stripped",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EMConfig {
    pub mode: Mode,
    pub rounds: usize,
    /// Triplet-loss (or similarity) steps per M-step.
    pub m_step_steps: usize,
    pub learning_rate: f64,
    /// Temporal scale in seconds; converted with the corpus frame rate.
    pub sigma_seconds: f64,
    pub tau: f64,
    pub margin: f64,
    pub move_set: MoveSet,
    pub compat: CompatibilityRule,
    pub seed: u64,
    pub embedding: EmbeddingKind,
    pub perturbations_per_span: usize,
    /// Leading rounds scored without the visual term. The visual model is
    /// first fitted to the graphs these rounds produce.
    pub visual_warmup_rounds: usize,
    /// Moves applied by the random-perturbation baseline.
    pub random_moves: usize,
    /// Overrides the mode's weights.
    pub weights: Option<ScoreWeights>,
    /// Overrides the mode's alignment switch.
    pub align: Option<bool>,
    pub linguistic: LinguisticConfig,
    pub jobs: usize,
}

impl Default for EMConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            rounds: 10,
            m_step_steps: 30,
            learning_rate: 0.01,
            sigma_seconds: 10.0,
            tau: crate::visual::DEFAULT_TAU,
            margin: 0.2,
            move_set: MoveSet::SwapsOnly,
            compat: CompatibilityRule::Typed,
            seed: 0,
            embedding: EmbeddingKind::Reference,
            perturbations_per_span: 2,
            visual_warmup_rounds: 3,
            random_moves: 10,
            weights: None,
            align: None,
            linguistic: LinguisticConfig::default(),
            jobs: 1,
        }
    }
}

impl EMConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn weights(&self) -> ScoreWeights {
        self.weights.unwrap_or_else(|| self.mode.weights())
    }

    pub fn aligns(&self) -> bool {
        self.align.unwrap_or_else(|| self.mode.aligns())
    }

    /// Rounds `1..=n` run with the visual weight at zero.
    pub fn warmup(&self) -> usize {
        if self.mode.visual_term() == VisualTerm::None {
            0
        } else {
            self.visual_warmup_rounds
        }
    }

    /// Weights used by the E-step of `round`.
    pub fn round_weights(&self, round: usize) -> ScoreWeights {
        let w = self.weights();
        if round <= self.warmup() {
            ScoreWeights { visual: 0.0, ..w }
        } else {
            w
        }
    }

    fn search(&self) -> SearchConfig {
        SearchConfig { compat: self.compat, move_set: self.move_set }
    }
}

/// One video: transcript, optional frames and optional gold graph.
#[derive(Clone, Debug)]
pub struct VideoData {
    pub transcript: Transcript,
    pub frames: Option<FrameSequence>,
    pub gold: Option<ActionGraph>,
}

/// Corpus objective during one E-step: before search, after each
/// local-search pass (videos advance in lockstep; finished videos hold
/// their score) and after alignment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EStepTrace {
    pub start: f64,
    pub passes: Vec<f64>,
    pub after_alignment: Option<f64>,
}

impl EStepTrace {
    /// All recorded values in order.
    pub fn sequence(&self) -> Vec<f64> {
        std::iter::once(self.start).chain(self.passes.iter().copied()).chain(self.after_alignment).collect()
    }

    pub fn end(&self) -> f64 {
        *self.sequence().last().expect("start is always present")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub graphs: Vec<ActionGraph>,
    /// Model after this round's M-step (or the current one if it was skipped).
    pub model: Model,
    /// Corpus objective after the E-step under the model it was run with.
    pub objective: Option<f64>,
    pub trace: Option<EStepTrace>,
    pub changed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmRun {
    pub rounds: Vec<RoundRecord>,
}

impl EmRun {
    pub fn last(&self) -> &RoundRecord {
        self.rounds.last().expect("round 0 is always recorded")
    }
}

struct Context<'a> {
    videos: &'a [VideoData],
    embedder: &'a WordEmbedder,
    config: &'a EMConfig,
    pool: Option<rayon::ThreadPool>,
}

impl Context<'_> {
    fn map_videos<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        match &self.pool {
            Some(pool) => pool.install(|| (0..self.videos.len()).into_par_iter().map(&f).collect()),
            None => (0..self.videos.len()).map(f).collect(),
        }
    }

    fn frames(&self, k: usize) -> Result<&FrameSequence> {
        self.videos[k].frames.as_ref().ok_or_else(|| Error::Config(format!("video {k} has no frames")))
    }

    fn linguistic_config(&self, round: usize) -> LinguisticConfig {
        let fps = self.videos[0].transcript.fps;
        LinguisticConfig {
            sigma: self.config.sigma_seconds * fps,
            seed: derive_seed(self.config.seed, TAG_LINGUISTIC, round as u64),
            ..self.config.linguistic.clone()
        }
    }

    fn initial_model(&self) -> Result<Model> {
        let cfg = self.config;
        let term = cfg.mode.visual_term();
        let feature_dim = if term != VisualTerm::None { Some(self.frames(0)?.dim()) } else { None };
        let visual = match (term, feature_dim) {
            (VisualTerm::Embedding, Some(d)) => {
                let mut p =
                    VisualParams::init(self.embedder.clone(), d, cfg.tau, derive_seed(cfg.seed, TAG_VISUAL_INIT, 0));
                p.reference_aware = cfg.embedding == EmbeddingKind::Reference;
                Some(p)
            }
            _ => None,
        };
        let similarity = match (term, feature_dim) {
            (VisualTerm::Similarity, Some(d)) => {
                Some(FrameSimilarity::init(d, self.embedder.dim(), derive_seed(cfg.seed, TAG_SIMILARITY_INIT, 0)))
            }
            _ => None,
        };
        Ok(Model {
            embedder: self.embedder.clone(),
            linguistic: crate::linguistic::LinguisticParams::uniform(self.embedder.dim(), &self.linguistic_config(0)),
            visual,
            similarity,
        })
    }

    fn m_step(&self, graphs: &[ActionGraph], prev: &Model, round: usize) -> Result<Model> {
        let cfg = self.config;
        let refs: Vec<&ActionGraph> = graphs.iter().collect();
        let linguistic = fit_linguistic(&refs, self.embedder, &self.linguistic_config(round))?;
        let mut model = Model { linguistic, ..prev.clone() };
        if round < cfg.warmup() {
            return Ok(model);
        }
        match cfg.mode.visual_term() {
            VisualTerm::Embedding => {
                let frames: Vec<&FrameSequence> = (0..graphs.len()).map(|k| self.frames(k)).collect::<Result<_>>()?;
                let training: Vec<TrainingVideo<'_>> =
                    graphs.iter().zip(&frames).map(|(graph, frames)| TrainingVideo { graph, frames }).collect();
                let tc = TripletConfig {
                    steps: cfg.m_step_steps,
                    learning_rate: cfg.learning_rate,
                    margin: cfg.margin,
                    seed: derive_seed(cfg.seed, TAG_TRIPLETS, round as u64),
                    compat: cfg.compat,
                    move_set: cfg.move_set,
                    perturbations_per_span: cfg.perturbations_per_span,
                    jobs: cfg.jobs,
                };
                let params = prev.visual.as_ref().expect("embedding mode has visual params");
                model.visual = Some(train_triplets(params, &training, &tc)?.0);
            }
            VisualTerm::Similarity if cfg.mode == Mode::Fes => {
                let frames: Vec<&FrameSequence> = (0..graphs.len()).map(|k| self.frames(k)).collect::<Result<_>>()?;
                let pairs: Vec<(&ActionGraph, &FrameSequence)> = graphs.iter().zip(frames).collect();
                let sc = SimilarityConfig {
                    steps: cfg.m_step_steps,
                    learning_rate: cfg.learning_rate,
                    margin: cfg.margin,
                    seed: derive_seed(cfg.seed, TAG_SIMILARITY_TRAIN, round as u64),
                    ..SimilarityConfig::default()
                };
                let sim = prev.similarity.as_ref().expect("similarity mode has a similarity");
                model.similarity = Some(train_similarity(sim, &pairs, &sc)?.0);
            }
            _ => {}
        }
        Ok(model)
    }

    fn scorer<'m>(&'m self, k: usize, model: &'m Model, round: usize) -> Result<VideoScorer<'m>> {
        let v = &self.videos[k];
        let term = self.config.mode.visual_term();
        let weights = self.config.round_weights(round);
        let frames = if term != VisualTerm::None && weights.visual != 0.0 { Some(self.frames(k)?) } else { None };
        let frames = frames.or(if self.config.aligns() { v.frames.as_ref() } else { None });
        VideoScorer::new(&v.transcript, frames, model, weights, term)
    }

    fn objective(&self, graphs: &[ActionGraph], model: &Model, round: usize) -> Result<f64> {
        let scores = self.map_videos(|k| self.scorer(k, model, round)?.total(&graphs[k]))?;
        Ok(scores.iter().sum())
    }

    fn e_step(&self, graphs: &[ActionGraph], model: &Model, round: usize) -> Result<(Vec<ActionGraph>, EStepTrace)> {
        let search = self.config.search();
        let align = self.config.aligns();
        let per_video = self.map_videos(|k| {
            let scorer = self.scorer(k, model, round)?;
            let out = scorer.local_search(&graphs[k], &search)?;
            if !align {
                return Ok((out.graph, out.scores, None));
            }
            let before = out.score();
            let aligned = scorer.align(&out.graph)?;
            let after = scorer.total(&aligned)?;
            if after >= before {
                Ok((aligned, out.scores, Some(after)))
            } else {
                Ok((out.graph, out.scores, Some(before)))
            }
        })?;
        let passes = per_video.iter().map(|v| v.1.len() - 1).max().unwrap_or(0);
        let mut trace = EStepTrace {
            start: per_video.iter().map(|v| v.1[0]).sum(),
            passes: Vec::with_capacity(passes),
            after_alignment: None,
        };
        for p in 1..=passes {
            trace.passes.push(per_video.iter().map(|v| v.1[p.min(v.1.len() - 1)]).sum());
        }
        if align {
            trace.after_alignment = Some(per_video.iter().map(|v| v.2.expect("aligned")).sum());
        }
        Ok((per_video.into_iter().map(|v| v.0).collect(), trace))
    }
}

/// Runs the configured pipeline. Round 0 holds the initial graphs; each
/// later round holds the graphs after its E-step.
pub fn run_em(videos: &[VideoData], embedder: &WordEmbedder, config: &EMConfig) -> Result<EmRun> {
    if videos.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let pool = (config.jobs > 1)
        .then(|| {
            rayon::ThreadPoolBuilder::new().num_threads(config.jobs).build().map_err(|e| Error::Config(e.to_string()))
        })
        .transpose()?;
    let ctx = Context { videos, embedder, config, pool };

    let mut graphs = ctx.map_videos(|k| super::init_graph(&videos[k].transcript))?;
    if config.mode == Mode::Random {
        graphs = graphs
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_PERTURB, k as u64));
                random_perturbation(g, config.random_moves, config.compat, config.move_set, &mut rng)
            })
            .collect::<Result<_>>()?;
    }
    let initial = ctx.initial_model()?;
    if !config.mode.is_iterative() {
        return Ok(EmRun {
            rounds: vec![RoundRecord { round: 0, graphs, model: initial, objective: None, trace: None, changed: 0 }],
        });
    }

    let mut model = initial;
    let mut prev_objective = ctx.objective(&graphs, &model, 1)?;
    let mut rounds = vec![RoundRecord {
        round: 0,
        graphs: graphs.clone(),
        model: model.clone(),
        objective: Some(prev_objective),
        trace: None,
        changed: 0,
    }];
    let warmup = config.warmup();
    for round in 1..=config.rounds {
        let (next, trace) = ctx.e_step(&graphs, &model, round)?;
        let changed = next.iter().zip(&graphs).filter(|(a, b)| a != b).count();
        let objective = trace.end();
        graphs = next;
        let settled = round > warmup;
        if changed == 0 && settled {
            rounds.push(RoundRecord {
                round,
                graphs: graphs.clone(),
                model: model.clone(),
                objective: Some(objective),
                trace: Some(trace),
                changed,
            });
            break;
        }
        model = ctx.m_step(&graphs, &model, round)?;
        rounds.push(RoundRecord {
            round,
            graphs: graphs.clone(),
            model: model.clone(),
            objective: Some(objective),
            trace: Some(trace),
            changed,
        });
        // The objective changes form when the visual term switches on.
        let comparable = round != warmup + 1 || warmup == 0;
        let rel = (objective - prev_objective).abs() / prev_objective.abs().max(1.0);
        prev_objective = objective;
        if settled && comparable && rel < 1e-6 {
            break;
        }
    }
    Ok(EmRun { rounds })
}
