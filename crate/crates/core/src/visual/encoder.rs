//! Single-layer gated recurrent unit that folds a list of vectors into its
//! final hidden state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{matvec, matvec_t_acc, outer_acc, sigmoid};

/// GRU with input and hidden size `dim`.
///
/// Parameters are stored flat, gate by gate (update `z`, reset `r`,
/// candidate `h`), each as `W` (dim×dim), `U` (dim×dim), `b` (dim):
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// c = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ c
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEncoder {
    dim: usize,
    #[serde(with = "crate::codec::blob")]
    params: Vec<f64>,
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct EncoderTape {
    steps: Vec<StepTape>,
}

#[derive(Clone, Debug)]
struct StepTape {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Gate {
    Update = 0,
    Reset = 1,
    Candidate = 2,
}

impl SequenceEncoder {
    pub fn num_params_for(dim: usize) -> usize {
        3 * (2 * dim * dim + dim)
    }

    /// Parameters drawn uniformly from `(-scale, scale)`.
    pub fn init(dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..Self::num_params_for(dim)).map(|_| rng.random_range(-scale..scale)).collect();
        Self { dim, params }
    }

    pub fn from_params(dim: usize, params: Vec<f64>) -> Self {
        assert_eq!(params.len(), Self::num_params_for(dim));
        Self { dim, params }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn block(&self, gate: Gate) -> usize {
        gate as usize * (2 * self.dim * self.dim + self.dim)
    }

    fn w(&self, gate: Gate) -> &[f64] {
        let o = self.block(gate);
        &self.params[o..o + self.dim * self.dim]
    }

    fn u(&self, gate: Gate) -> &[f64] {
        let o = self.block(gate) + self.dim * self.dim;
        &self.params[o..o + self.dim * self.dim]
    }

    fn b(&self, gate: Gate) -> &[f64] {
        let o = self.block(gate) + 2 * self.dim * self.dim;
        &self.params[o..o + self.dim]
    }

    pub fn forward(&self, inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        for x in inputs {
            h = self.step(x, &h).0;
        }
        h
    }

    pub fn forward_with_tape(&self, inputs: &[Vec<f64>]) -> (Vec<f64>, EncoderTape) {
        let mut h = vec![0.0; self.dim];
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (next, tape) = self.step(x, &h);
            steps.push(tape);
            h = next;
        }
        (h, EncoderTape { steps })
    }

    fn gate_pre(&self, gate: Gate, x: &[f64], h: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut a = self.b(gate).to_vec();
        let mut tmp = vec![0.0; d];
        matvec(self.w(gate), d, d, x, &mut tmp);
        crate::math::add_assign(&mut a, &tmp);
        matvec(self.u(gate), d, d, h, &mut tmp);
        crate::math::add_assign(&mut a, &tmp);
        a
    }

    fn step(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, StepTape) {
        let z: Vec<f64> = self.gate_pre(Gate::Update, x, h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = self.gate_pre(Gate::Reset, x, h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let c: Vec<f64> = self.gate_pre(Gate::Candidate, x, &rh).into_iter().map(f64::tanh).collect();
        let next = (0..self.dim).map(|k| (1.0 - z[k]) * h[k] + z[k] * c[k]).collect();
        (next, StepTape { x: x.to_vec(), h_prev: h.to_vec(), z, r, c, rh })
    }

    /// Backpropagates `d_out` (gradient of the loss with respect to the
    /// final hidden state). Parameter gradients are added to `grad`;
    /// returns the gradient with respect to each input.
    pub fn backward(&self, tape: &EncoderTape, d_out: &[f64], grad: &mut [f64]) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut dh = d_out.to_vec();
        let mut d_inputs = vec![Vec::new(); tape.steps.len()];
        for (s, st) in tape.steps.iter().enumerate().rev() {
            let mut dx = vec![0.0; d];
            let mut dh_prev: Vec<f64> = (0..d).map(|k| dh[k] * (1.0 - st.z[k])).collect();

            // candidate
            let dac: Vec<f64> = (0..d).map(|k| dh[k] * st.z[k] * (1.0 - st.c[k] * st.c[k])).collect();
            self.acc_gate(Gate::Candidate, grad, &dac, &st.x, &st.rh);
            matvec_t_acc(self.w(Gate::Candidate), d, d, &dac, &mut dx);
            let mut drh = vec![0.0; d];
            matvec_t_acc(self.u(Gate::Candidate), d, d, &dac, &mut drh);
            for k in 0..d {
                dh_prev[k] += drh[k] * st.r[k];
            }

            // reset
            let dar: Vec<f64> = (0..d).map(|k| drh[k] * st.h_prev[k] * st.r[k] * (1.0 - st.r[k])).collect();
            self.acc_gate(Gate::Reset, grad, &dar, &st.x, &st.h_prev);
            matvec_t_acc(self.w(Gate::Reset), d, d, &dar, &mut dx);
            matvec_t_acc(self.u(Gate::Reset), d, d, &dar, &mut dh_prev);

            // update
            let daz: Vec<f64> = (0..d).map(|k| dh[k] * (st.c[k] - st.h_prev[k]) * st.z[k] * (1.0 - st.z[k])).collect();
            self.acc_gate(Gate::Update, grad, &daz, &st.x, &st.h_prev);
            matvec_t_acc(self.w(Gate::Update), d, d, &daz, &mut dx);
            matvec_t_acc(self.u(Gate::Update), d, d, &daz, &mut dh_prev);

            d_inputs[s] = dx;
            dh = dh_prev;
        }
        d_inputs
    }

    fn acc_gate(&self, gate: Gate, grad: &mut [f64], da: &[f64], x: &[f64], hidden: &[f64]) {
        let d = self.dim;
        let o = self.block(gate);
        outer_acc(&mut grad[o..o + d * d], d, da, x);
        outer_acc(&mut grad[o + d * d..o + 2 * d * d], d, da, hidden);
        crate::math::add_assign(&mut grad[o + 2 * d * d..o + 2 * d * d + d], da);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dot;

    fn inputs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn empty_sequence_gives_zero_state() {
        let enc = SequenceEncoder::init(4, 0.1, 0);
        assert_eq!(enc.forward(&[]), vec![0.0; 4]);
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let enc = SequenceEncoder::init(6, 0.5, 1);
        let xs = inputs(4, 6, 2);
        let a = enc.forward(&xs);
        assert_eq!(a, enc.forward(&xs));
        assert!(a.iter().all(|v| v.is_finite() && v.abs() < 1.0));
        let (b, _) = enc.forward_with_tape(&xs);
        assert_eq!(a, b);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let d = 5;
        let enc = SequenceEncoder::init(d, 0.6, 3);
        let xs = inputs(3, d, 4);
        let probe: Vec<f64> = inputs(1, d, 5).remove(0);
        let loss = |e: &SequenceEncoder, xs: &[Vec<f64>]| dot(&e.forward(xs), &probe);

        let (_, tape) = enc.forward_with_tape(&xs);
        let mut grad = vec![0.0; enc.params().len()];
        let dxs = enc.backward(&tape, &probe, &mut grad);

        let h = 1e-5;
        for (p, g) in grad.iter().enumerate() {
            let mut plus = enc.clone();
            plus.params_mut()[p] += h;
            let mut minus = enc.clone();
            minus.params_mut()[p] -= h;
            let fd = (loss(&plus, &xs) - loss(&minus, &xs)) / (2.0 * h);
            assert!((fd - g).abs() < 1e-8, "param {p}: {fd} vs {g}");
        }
        for s in 0..xs.len() {
            for k in 0..d {
                let mut plus = xs.clone();
                plus[s][k] += h;
                let mut minus = xs.clone();
                minus[s][k] -= h;
                let fd = (loss(&enc, &plus) - loss(&enc, &minus)) / (2.0 * h);
                assert!((fd - dxs[s][k]).abs() < 1e-8);
            }
        }
    }
}
