//! Exhaustive segmentation oracle for the alignment DP.

use rand::Rng;
use refgraph::graph::TemporalSpan;
use refgraph::optimizer::{brute_force_alignment, AlignmentProblem, TIE_EPS};

pub fn objective(p: &AlignmentProblem, spans: &[TemporalSpan]) -> f64 {
    let t_len = p.emission.len();
    let mut total = 0.0;
    for t in 0..t_len {
        let label = spans.iter().position(|s| s.contains(t)).map_or(0, |k| k + 1);
        total += p.emission[t][label];
    }
    for (s, z) in spans.iter().zip(&p.timestamps) {
        total -= p.temporal_weight * (s.start.abs_diff(z.start) + s.end.abs_diff(z.end)) as f64;
    }
    total
}

/// All ordered disjoint segmentations of `0..t_len` into `n` spans, in
/// lexicographic order of `(start_1, end_1, start_2, ...)`.
pub fn segmentations(t_len: usize, n: usize) -> Vec<Vec<TemporalSpan>> {
    fn go(from: usize, t_len: usize, left: usize, cur: &mut Vec<TemporalSpan>, out: &mut Vec<Vec<TemporalSpan>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for s in from..t_len {
            for e in s..t_len {
                if t_len - (e + 1) < left - 1 {
                    break;
                }
                cur.push(TemporalSpan::new(s, e));
                go(e + 1, t_len, left - 1, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(0, t_len, n, &mut Vec::new(), &mut out);
    out
}

/// The first segmentation, in lexicographic order, within `TIE_EPS` of the best.
pub fn oracle(p: &AlignmentProblem) -> (Vec<TemporalSpan>, f64) {
    let all = segmentations(p.emission.len(), p.timestamps.len());
    let best = all.iter().map(|s| objective(p, s)).fold(f64::NEG_INFINITY, f64::max);
    let first = all.into_iter().find(|s| objective(p, s) >= best - TIE_EPS).unwrap();
    let v = objective(p, &first);
    (first, v)
}

/// Emissions on a coarse grid half the time, so exact ties are common.
pub fn random_problem(r: &mut impl Rng) -> AlignmentProblem {
    let n = r.random_range(1..=3);
    let t_len = r.random_range(n..=12);
    let coarse = r.random_bool(0.5);
    let emission = (0..t_len)
        .map(|_| {
            (0..=n).map(|_| if coarse { r.random_range(-2..=2) as f64 } else { r.random_range(-3.0..3.0) }).collect()
        })
        .collect();
    AlignmentProblem {
        emission,
        timestamps: super::random_spans(r, n, t_len),
        temporal_weight: [0.0, 0.25, 0.5, 1.0][r.random_range(0..4)],
    }
}

/// Runs `trials` random problems through the DP and the exhaustive oracle.
/// Returns the first disagreement.
pub fn dp_trials(trials: usize, seed: u64) -> Result<(), String> {
    let mut r = super::rng(seed);
    for trial in 0..trials {
        let p = random_problem(&mut r);
        let (spans, score) = p.solve().map_err(|e| format!("trial {trial}: {e}"))?;
        let (want, want_score) = oracle(&p);
        if spans != want {
            return Err(format!("trial {trial}: spans {spans:?}, expected {want:?}"));
        }
        if (score - want_score).abs() > 1e-12 {
            return Err(format!("trial {trial}: score {score} vs {want_score}"));
        }
        let (bf, bf_score) = brute_force_alignment(&p).map_err(|e| e.to_string())?;
        if bf != spans || bf_score.to_bits() != score.to_bits() {
            return Err(format!("trial {trial}: built-in brute force disagrees"));
        }
    }
    Ok(())
}
