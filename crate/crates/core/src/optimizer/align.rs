//! Exact temporal alignment for fixed references.
//!
//! Labels `z̄_1..T` take values in `{0, 1, …, N}`; action `i` occupies one
//! contiguous interval, intervals appear in action order, and background
//! may fill any gap. The objective is
//! `Σ_t emission[t][z̄_t] - w · Σ_i (|start_i - S_i| + |end_i - E_i|)`
//! for transcript time-stamps `(S_i, E_i)`.
//!
//! Suffix recurrences, with `R_i(t)` the best score of frames `t..` when
//! actions `i..` are still unplaced and `Q_i(t)` the same when action `i`
//! covers frame `t`:
//!
//! ```text
//! R_{N+1}(t) = Σ_{u ≥ t} bg(u)
//! R_i(t)     = max(bg(t) + R_i(t+1), start_i(t) + Q_i(t))
//! Q_i(t)     = e_i(t) + max(end_i(t) + R_{i+1}(t+1), Q_i(t+1))
//! ```
//!
//! Ties are broken towards the lexicographically smallest
//! `(start_1, end_1, start_2, …)` by preferring, when reconstructing front
//! to back, to start and to end as early as possible among choices within
//! [`TIE_EPS`] of the optimum.

use super::VideoScorer;
use crate::error::{Error, Result};
use crate::graph::{ActionGraph, TemporalSpan};

pub const TIE_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentProblem {
    /// `emission[t][i]`, label 0 is background.
    pub emission: Vec<Vec<f64>>,
    pub timestamps: Vec<TemporalSpan>,
    /// Penalty per frame of time-stamp offset.
    pub temporal_weight: f64,
}

impl AlignmentProblem {
    fn frames(&self) -> usize {
        self.emission.len()
    }

    fn actions(&self) -> usize {
        self.timestamps.len()
    }

    fn start_term(&self, i: usize, t: usize) -> f64 {
        -self.temporal_weight * t.abs_diff(self.timestamps[i - 1].start) as f64
    }

    fn end_term(&self, i: usize, t: usize) -> f64 {
        -self.temporal_weight * t.abs_diff(self.timestamps[i - 1].end) as f64
    }

    /// Optimal spans and their objective.
    pub fn solve(&self) -> Result<(Vec<TemporalSpan>, f64)> {
        let t_len = self.frames();
        let n = self.actions();
        if t_len < n {
            return Err(Error::TooFewFrames { actions: n, frames: t_len });
        }
        let neg = f64::NEG_INFINITY;
        // r[i][t], q[i][t] for i in 1..=n+1, t in 0..=T
        let mut r = vec![vec![neg; t_len + 1]; n + 2];
        let mut q = vec![vec![neg; t_len + 1]; n + 2];
        r[n + 1][t_len] = 0.0;
        for t in (0..t_len).rev() {
            r[n + 1][t] = self.emission[t][0] + r[n + 1][t + 1];
        }
        for i in (1..=n).rev() {
            for t in (0..t_len).rev() {
                let stop = self.end_term(i, t) + r[i + 1][t + 1];
                q[i][t] = self.emission[t][i] + stop.max(q[i][t + 1]);
                let skip = self.emission[t][0] + r[i][t + 1];
                let start = self.start_term(i, t) + q[i][t];
                r[i][t] = skip.max(start);
            }
        }
        let best = r[1][0];

        let mut spans = Vec::with_capacity(n);
        let mut t = 0;
        for i in 1..=n {
            while self.start_term(i, t) + q[i][t] < r[i][t] - TIE_EPS {
                t += 1;
            }
            let start = t;
            while self.end_term(i, t) + r[i + 1][t + 1] < q[i][t] - self.emission[t][i] - TIE_EPS {
                t += 1;
            }
            spans.push(TemporalSpan::new(start, t));
            t += 1;
        }
        debug_assert!((segmentation_score(self, &spans) - best).abs() <= 1e-6 * (1.0 + best.abs()));
        let score = segmentation_score(self, &spans);
        Ok((spans, score))
    }
}

/// Objective of a given segmentation.
pub fn segmentation_score(problem: &AlignmentProblem, spans: &[TemporalSpan]) -> f64 {
    let mut labels = vec![0; problem.frames()];
    for (k, s) in spans.iter().enumerate() {
        for l in &mut labels[s.start..=s.end] {
            *l = k + 1;
        }
    }
    let mut total: f64 = labels.iter().enumerate().map(|(t, &l)| problem.emission[t][l]).sum();
    for (k, s) in spans.iter().enumerate() {
        total += problem.start_term(k + 1, s.start) + problem.end_term(k + 1, s.end);
    }
    total
}

/// Every legal segmentation, scored; the lexicographically smallest within
/// [`TIE_EPS`] of the maximum wins. Exponential; for tests and small inputs.
pub fn brute_force_alignment(problem: &AlignmentProblem) -> Result<(Vec<TemporalSpan>, f64)> {
    let n = problem.actions();
    if problem.frames() < n {
        return Err(Error::TooFewFrames { actions: n, frames: problem.frames() });
    }
    let mut all = Vec::new();
    let mut cur = Vec::with_capacity(n);
    enumerate(problem.frames(), n, 0, &mut cur, &mut all);
    let scored: Vec<(Vec<TemporalSpan>, f64)> = all
        .into_iter()
        .map(|s| {
            let v = segmentation_score(problem, &s);
            (s, v)
        })
        .collect();
    let max = scored.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let key = |s: &[TemporalSpan]| -> Vec<usize> { s.iter().flat_map(|x| [x.start, x.end]).collect() };
    let winner = scored
        .into_iter()
        .filter(|x| x.1 >= max - TIE_EPS)
        .min_by(|a, b| key(&a.0).cmp(&key(&b.0)))
        .expect("at least one segmentation");
    Ok(winner)
}

fn enumerate(t_len: usize, n: usize, from: usize, cur: &mut Vec<TemporalSpan>, out: &mut Vec<Vec<TemporalSpan>>) {
    if cur.len() == n {
        out.push(cur.clone());
        return;
    }
    let left = n - cur.len() - 1;
    for s in from..t_len.saturating_sub(left) {
        for e in s..t_len - left {
            cur.push(TemporalSpan::new(s, e));
            enumerate(t_len, n, e + 1, cur, out);
            cur.pop();
        }
    }
}

impl VideoScorer<'_> {
    /// Re-grounds `graph` with the optimal spans; references are unchanged.
    pub fn align(&self, graph: &ActionGraph) -> Result<ActionGraph> {
        let (spans, _) = self.alignment_problem(graph)?.solve()?;
        Ok(graph.clone().with_spans(spans))
    }
}

/// Optimal spans for `graph` under `scorer`'s model.
pub fn align_dp(graph: &ActionGraph, scorer: &VideoScorer<'_>) -> Result<ActionGraph> {
    scorer.align(graph)
}
