//! `refgraph`: corpus generation, training, evaluation and baseline ladders.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use refgraph::eval::{evaluate, Metrics};
use refgraph::graph::{ActionGraph, MoveSet};
use refgraph::io::{self, Corpus};
use refgraph::optimizer::{run_em, EMConfig, EmRun, EmbeddingKind, Mode, ScoreWeights};
use refgraph::simulator::{generate_with_jobs, SimConfig};
use serde::{Deserialize, Serialize};

const RUN_MANIFEST: &str = "run.manifest.json";
const METRICS_FILE: &str = "metrics.csv";
const TABLE_COLUMNS: [&str; 5] = ["ref_precision", "ref_recall", "ref_f1", "align_f1", "align_iou"];

#[derive(Parser)]
#[command(name = "refgraph", version, about = "Unsupervised reference resolution for instructional videos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Run one pipeline variant on a corpus.
    Train(TrainArgs),
    /// Score every variant found in a run directory against gold.
    Eval(EvalArgs),
    /// Train every variant, then evaluate them.
    Ladder(LadderArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    videos: u64,
    #[arg(long, env = "REFGRAPH_SEED", default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    min_actions: usize,
    #[arg(long, default_value_t = 7)]
    max_actions: usize,
    /// Time-stamp jitter scale in frames.
    #[arg(long, default_value_t = 3.0)]
    jitter: f64,
    /// Per-dimension frame noise.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0.25)]
    p_rename: f64,
    #[arg(long, default_value_t = 0.3)]
    p_pronoun: f64,
    #[arg(long, default_value_t = 0.15)]
    p_implicit: f64,
    #[arg(long, default_value_t = 0.3)]
    p_location: f64,
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    /// Init range of the hidden frame renderer's encoder.
    #[arg(long, default_value_t = 0.5)]
    teacher_scale: f64,
    /// How far renamed products sit from their ingredients.
    #[arg(long, default_value_t = 0.3)]
    rename_spread: f64,
    #[arg(long, default_value_t = 1.0)]
    fps: f64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    #[arg(long, env = "REFGRAPH_SEED", default_value_t = 0)]
    seed: u64,
    /// reference (graph-aware) or stripped (words only).
    #[arg(long, default_value = "reference", value_parser = parse_embedding)]
    embedding: EmbeddingKind,
    /// swaps+reassign or swaps-only.
    #[arg(long, default_value = "swaps-only", value_parser = parse_move_set)]
    moves: MoveSet,
    /// Triplet-training steps per M-step.
    #[arg(long, default_value_t = EMConfig::default().m_step_steps)]
    m_step_steps: usize,
    #[arg(long, default_value_t = EMConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = EMConfig::default().sigma_seconds)]
    sigma_seconds: f64,
    /// Temperature of the visual frame score.
    #[arg(long, default_value_t = EMConfig::default().tau)]
    tau: f64,
    /// Rounds run before the visual term is switched on.
    #[arg(long, default_value_t = EMConfig::default().visual_warmup_rounds)]
    warmup_rounds: usize,
    /// Override the linguistic weight of the mode.
    #[arg(long)]
    w_linguistic: Option<f64>,
    /// Override the visual weight of the mode.
    #[arg(long)]
    w_visual: Option<f64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory; results go to `<out>/<mode>/`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "full", value_parser = parse_mode)]
    mode: Mode,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct LadderArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Mode::ALL.iter().map(|m| m.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_embedding(s: &str) -> Result<EmbeddingKind, String> {
    EmbeddingKind::parse(s).ok_or_else(|| "expected reference or stripped".to_string())
}

fn parse_move_set(s: &str) -> Result<MoveSet, String> {
    MoveSet::parse(s).ok_or_else(|| "expected swaps+reassign or swaps-only".to_string())
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    mode: Mode,
    seed: u64,
    corpus: PathBuf,
    config: EMConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricRow {
    run: String,
    round: usize,
    video: String,
    metric: String,
    value: f64,
}

fn em_config(mode: Mode, m: &ModelArgs) -> EMConfig {
    let mut cfg = EMConfig::for_mode(mode);
    cfg.rounds = m.rounds;
    cfg.seed = m.seed;
    cfg.embedding = m.embedding;
    cfg.move_set = m.moves;
    cfg.m_step_steps = m.m_step_steps;
    cfg.learning_rate = m.learning_rate;
    cfg.sigma_seconds = m.sigma_seconds;
    cfg.tau = m.tau;
    cfg.visual_warmup_rounds = m.warmup_rounds;
    cfg.jobs = m.jobs;
    if m.w_linguistic.is_some() || m.w_visual.is_some() {
        let base = mode.weights();
        cfg.weights = Some(ScoreWeights {
            linguistic: m.w_linguistic.unwrap_or(base.linguistic),
            visual: m.w_visual.unwrap_or(base.visual),
        });
    }
    cfg
}

fn round_dir(run: &Path, round: usize) -> PathBuf {
    run.join(format!("round_{round:02}"))
}

fn graph_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("{}.graph.json", io::video_stem(k)))
}

fn metric_rows(run: &str, round: usize, per: &[Metrics], all: &Metrics) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    let mut push = |video: String, m: &Metrics| {
        for (name, value) in m.values() {
            rows.push(MetricRow { run: run.to_string(), round, video: video.clone(), metric: name.to_string(), value });
        }
    };
    for (k, m) in per.iter().enumerate() {
        push(io::video_stem(k), m);
    }
    push("ALL".to_string(), all);
    rows
}

fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_run(dir: &Path, corpus_dir: &Path, corpus: &Corpus, cfg: &EMConfig, run: &EmRun) -> Result<()> {
    io::create_dir(dir)?;
    let manifest =
        RunManifest { mode: cfg.mode, seed: cfg.seed, corpus: corpus_dir.to_path_buf(), config: cfg.clone() };
    io::write_text(&dir.join(RUN_MANIFEST), &serde_json::to_string_pretty(&manifest)?)?;
    let gold = corpus.gold();
    let frames = corpus.frame_counts();
    let name = cfg.mode.as_str();
    let mut rows = Vec::new();
    for rec in &run.rounds {
        let rd = round_dir(dir, rec.round);
        io::create_dir(&rd)?;
        io::write_text(&rd.join("model.json"), &rec.model.to_json())?;
        for (k, g) in rec.graphs.iter().enumerate() {
            io::write_text(&graph_path(&rd, k), &g.to_json())?;
        }
        if let Some(gold) = &gold {
            let (per, all) = evaluate(&rec.graphs, gold, &frames)?;
            rows.extend(metric_rows(name, rec.round, &per, &all));
        }
        for (metric, value) in [("objective", rec.objective), ("changed", Some(rec.changed as f64))] {
            if let Some(value) = value {
                rows.push(MetricRow {
                    run: name.to_string(),
                    round: rec.round,
                    video: "ALL".to_string(),
                    metric: metric.to_string(),
                    value,
                });
            }
        }
    }
    write_metrics(&dir.join(METRICS_FILE), &rows)
}

fn train(corpus_dir: &Path, out: &Path, mode: Mode, model: &ModelArgs) -> Result<()> {
    let corpus = io::read_corpus(corpus_dir, mode.needs_frames())?;
    let cfg = em_config(mode, model);
    let run = run_em(&corpus.videos, &corpus.embedder, &cfg)?;
    let last = run.last();
    eprintln!(
        "{mode}: {} round(s), objective {}",
        last.round,
        last.objective.map_or("n/a".to_string(), |o| format!("{o:.4}"))
    );
    write_run(&out.join(mode.as_str()), corpus_dir, &corpus, &cfg, &run)
}

/// Highest `round_XX` directory under `dir`.
fn last_round(dir: &Path) -> Result<Option<usize>> {
    let mut best = None;
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let name = entry?.file_name();
        let round = name.to_str().and_then(|s| s.strip_prefix("round_")).and_then(|s| s.parse::<usize>().ok());
        if round > best {
            best = round;
        }
    }
    Ok(best)
}

fn eval(run: &Path, corpus_dir: &Path) -> Result<()> {
    let corpus = io::read_corpus(corpus_dir, false)?;
    let Some(gold) = corpus.gold() else {
        bail!("corpus {} has no gold graphs", corpus_dir.display());
    };
    let frames = corpus.frame_counts();
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for mode in Mode::ALL {
        let dir = run.join(mode.as_str());
        if !dir.is_dir() {
            continue;
        }
        let Some(round) = last_round(&dir)? else { continue };
        let rd = round_dir(&dir, round);
        let predicted = (0..gold.len())
            .map(|k| Ok(ActionGraph::from_json(&io::read_text(&graph_path(&rd, k))?)?))
            .collect::<Result<Vec<_>>>()?;
        let (per, all) = evaluate(&predicted, &gold, &frames)?;
        rows.extend(metric_rows(mode.as_str(), round, &per, &all));
        table.push((mode, all));
    }
    if table.is_empty() {
        bail!("no runs found under {}", run.display());
    }
    write_metrics(&run.join(METRICS_FILE), &rows)?;
    print!("{}", render_table(&table));
    Ok(())
}

fn render_table(rows: &[(Mode, Metrics)]) -> String {
    let mut out = format!("{:<12}", "mode");
    for c in TABLE_COLUMNS {
        out += &format!(" {c:>13}");
    }
    out.push('\n');
    for (mode, m) in rows {
        let values = m.values();
        out += &format!("{:<12}", mode.as_str());
        for c in TABLE_COLUMNS {
            match values.iter().find(|v| v.0 == c) {
                Some((_, v)) => out += &format!(" {v:>13.3}"),
                None => out += &format!(" {:>13}", "-"),
            }
        }
        out.push('\n');
    }
    out
}

fn gen(args: &GenArgs) -> Result<()> {
    let config = SimConfig {
        videos: args.videos as usize,
        seed: args.seed,
        fps: args.fps,
        feature_dim: args.feature_dim,
        min_actions: args.min_actions,
        max_actions: args.max_actions,
        jitter: args.jitter,
        noise: args.noise,
        p_rename: args.p_rename,
        p_pronoun: args.p_pronoun,
        p_implicit: args.p_implicit,
        p_location: args.p_location,
        teacher_scale: args.teacher_scale,
        rename_spread: args.rename_spread,
        ..SimConfig::default()
    };
    let corpus = generate_with_jobs(&config, args.jobs)?;
    io::write_corpus(&args.out, &corpus)?;
    eprintln!("wrote {} videos to {}", corpus.videos.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Train(a) => train(&a.corpus, &a.out, a.mode, &a.model),
        Command::Eval(a) => eval(&a.run, &a.corpus),
        Command::Ladder(a) => {
            for mode in Mode::ALL {
                train(&a.corpus, &a.out, mode, &a.model)?;
            }
            eval(&a.out, &a.corpus)
        }
    }
}

/// 3 for inputs that parse but do not fit together, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use refgraph::Error as E;
    match err.downcast_ref::<E>() {
        Some(
            E::SkeletonMismatch(_)
            | E::ActionCountMismatch { .. }
            | E::TooFewFrames { .. }
            | E::SpanOutOfBounds { .. }
            | E::InvalidGraph(_)
            | E::Ungrounded,
        ) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
