mod common;

use common::{small_sim, videos_of};
use refgraph::optimizer::{init_graph, run_em, EMConfig, EmRun, Mode, ScoreWeights, VideoData};
use refgraph::simulator::generate;
use refgraph::visual::WordEmbedder;

fn corpus(videos: usize, seed: u64) -> (Vec<VideoData>, WordEmbedder) {
    let c = generate(&small_sim(videos, seed)).unwrap();
    (videos_of(&c), c.embedder)
}

fn run(videos: &[VideoData], emb: &WordEmbedder, cfg: EMConfig) -> EmRun {
    run_em(videos, emb, &cfg).unwrap()
}

fn quick(mode: Mode) -> EMConfig {
    EMConfig { rounds: 6, m_step_steps: 5, visual_warmup_rounds: 1, ..EMConfig::for_mode(mode) }
}

#[test]
fn round_zero_is_the_sequential_initialization() {
    let (videos, emb) = corpus(15, 1);
    let init: Vec<_> = videos.iter().map(|v| init_graph(&v.transcript).unwrap()).collect();
    for mode in [Mode::Sequential, Mode::Linguistic, Mode::Full] {
        assert_eq!(run(&videos, &emb, quick(mode)).rounds[0].graphs, init, "{mode}");
    }
    let seq = run(&videos, &emb, quick(Mode::Sequential));
    assert_eq!(seq.rounds.len(), 1);
    let random = run(&videos, &emb, quick(Mode::Random));
    assert_eq!(random.rounds.len(), 1);
    assert_ne!(random.last().graphs, init);
    assert!(random.last().graphs.iter().all(|g| g.is_valid()));
}

#[test]
fn zero_rounds_leaves_the_initialization() {
    let (videos, emb) = corpus(10, 2);
    let r = run(&videos, &emb, EMConfig { rounds: 0, ..quick(Mode::Full) });
    assert_eq!(r.rounds.len(), 1);
    assert_eq!(r.last().graphs, run(&videos, &emb, quick(Mode::Sequential)).last().graphs);
}

#[test]
fn zero_visual_weight_without_alignment_is_the_linguistic_pipeline() {
    let (videos, emb) = corpus(20, 3);
    let ling = run(&videos, &emb, quick(Mode::Linguistic));
    let cfg =
        EMConfig { weights: Some(ScoreWeights { visual: 0.0, ..Mode::Linguistic.weights() }), ..quick(Mode::NoAlign) };
    let blind = run(&videos, &emb, cfg);
    assert_eq!(blind.last().graphs, ling.last().graphs);
    for (a, b) in blind.rounds.iter().zip(&ling.rounds) {
        assert_eq!(a.graphs, b.graphs, "round {}", a.round);
    }
}

#[test]
fn e_step_objective_never_decreases() {
    let (videos, emb) = corpus(20, 4);
    for mode in [Mode::Visual, Mode::Linguistic, Mode::Rfes, Mode::Fes, Mode::NoAlign, Mode::Full] {
        for (jobs, tol) in [(1, 1e-9), (3, 1e-6)] {
            let r = run(&videos, &emb, EMConfig { jobs, ..quick(mode) });
            assert!(r.rounds.len() >= 2, "{mode}");
            assert!(r.rounds[1..].iter().any(|rec| !rec.trace.as_ref().unwrap().passes.is_empty()));
            for rec in &r.rounds[1..] {
                let seq = rec.trace.as_ref().unwrap().sequence();
                for w in seq.windows(2) {
                    assert!(w[1] >= w[0] - tol * (1.0 + w[0].abs()), "{mode} round {}: {seq:?}", rec.round);
                }
                assert_eq!(rec.trace.as_ref().unwrap().after_alignment.is_some(), mode == Mode::Full);
            }
        }
    }
}

#[test]
fn linguistic_mode_runs_without_frames() {
    let (mut videos, emb) = corpus(10, 5);
    let with = run(&videos, &emb, quick(Mode::Linguistic));
    videos.iter_mut().for_each(|v| v.frames = None);
    assert_eq!(run(&videos, &emb, quick(Mode::Linguistic)).last().graphs, with.last().graphs);
    assert!(run_em(&videos, &emb, &quick(Mode::Full)).is_err());
}

#[test]
fn empty_corpus_is_an_error() {
    assert!(run_em(&[], &WordEmbedder::new(4, 0), &quick(Mode::Full)).is_err());
}

#[test]
fn graphs_stay_valid_and_keep_their_skeletons() {
    let (videos, emb) = corpus(15, 6);
    for mode in [Mode::Full, Mode::Fes, Mode::Visual] {
        let r = run(&videos, &emb, quick(mode));
        for rec in &r.rounds {
            for (g, v) in rec.graphs.iter().zip(&videos) {
                assert!(g.is_valid(), "{mode}: {:?}", g.validate());
                let skeleton: Vec<_> = v.transcript.actions.iter().map(|a| a.to_action_node()).collect();
                assert_eq!(g.actions, skeleton);
                assert!(g.spans.as_ref().unwrap().last().unwrap().end < v.transcript.frames);
            }
        }
        // Without alignment the spans stay at the transcript time-stamps.
        if !mode.aligns() {
            for (g, v) in r.last().graphs.iter().zip(&videos) {
                assert_eq!(g.spans, init_graph(&v.transcript).unwrap().spans);
            }
        }
    }
}
