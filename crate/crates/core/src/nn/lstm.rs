use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{check_len, matmul_nn, matmul_nt, matmul_tn_acc, next_version, NnError, Parameters, TensorRef};

/// One LSTM layer. Gate blocks are stacked in the order input, forget,
/// candidate, output; `w_ih` is `4H × inputs`, `w_hh` is `4H × H`.
#[derive(Debug, Clone, PartialEq)]
struct Layer {
    inputs: usize,
    w_ih: Vec<f64>,
    w_hh: Vec<f64>,
    bias: Vec<f64>,
}

/// Stacked LSTM without peepholes; layer `ℓ` reads the hidden state of
/// layer `ℓ − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    hidden: usize,
    layers: Vec<Layer>,
    version: u64,
}

/// Cell and hidden state per layer, each `batch × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> Self {
        Self {
            c: vec![vec![0.0; batch * hidden]; layers],
            h: vec![vec![0.0; batch * hidden]; layers],
        }
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates, `batch × 4H` in block order i, f, g, o.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Per-step, per-layer caches of a sequence forward pass.
#[derive(Debug, Clone)]
pub struct LstmTape {
    version: u64,
    batch: usize,
    steps: Vec<Vec<StepCache>>,
}

impl LstmTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

impl LstmStack {
    /// All parameters uniform on `±1/√hidden`.
    pub fn init<R: Rng + ?Sized>(
        inputs: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let a = 1.0 / libm::sqrt(hidden as f64);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-a..=a)).collect() };
        Self::build(inputs, hidden, num_layers, |n| draw(n))
    }

    pub fn zeros(inputs: usize, hidden: usize, num_layers: usize) -> Result<Self, NnError> {
        Self::build(inputs, hidden, num_layers, |n| vec![0.0; n])
    }

    fn build(
        inputs: usize,
        hidden: usize,
        num_layers: usize,
        mut fill: impl FnMut(usize) -> Vec<f64>,
    ) -> Result<Self, NnError> {
        if inputs == 0 || hidden == 0 || num_layers == 0 {
            return Err(NnError::Architecture("lstm dimensions must be >= 1"));
        }
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { inputs } else { hidden };
                Layer {
                    inputs: inp,
                    w_ih: fill(4 * hidden * inp),
                    w_hh: fill(4 * hidden * hidden),
                    bias: fill(4 * hidden),
                }
            })
            .collect();
        Ok(Self {
            hidden,
            layers,
            version: next_version(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden, self.layers.len()).expect("valid dims")
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    /// Mutable bias of one layer (`4H`, gate order i, f, g, o).
    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        self.version = next_version();
        &mut self.layers[layer].bias
    }

    fn layer_step(&self, l: usize, batch: usize, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let layer = &self.layers[l];
        let hs = self.hidden;
        let g4 = 4 * hs;
        let mut z = vec![0.0; batch * g4];
        for row in z.chunks_exact_mut(g4) {
            row.copy_from_slice(&layer.bias);
        }
        matmul_nt(batch, layer.inputs, g4, x, &layer.w_ih, 1.0, &mut z);
        matmul_nt(batch, hs, g4, h_prev, &layer.w_hh, 1.0, &mut z);
        let mut tanh_c = vec![0.0; batch * hs];
        for b in 0..batch {
            let row = &mut z[b * g4..(b + 1) * g4];
            for j in 0..hs {
                let i = sigmoid(row[j]);
                let f = sigmoid(row[hs + j]);
                let g = libm::tanh(row[2 * hs + j]);
                let o = sigmoid(row[3 * hs + j]);
                row[j] = i;
                row[hs + j] = f;
                row[2 * hs + j] = g;
                row[3 * hs + j] = o;
                let c = f * c_prev[b * hs + j] + i * g;
                tanh_c[b * hs + j] = libm::tanh(c);
            }
        }
        StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: z,
            tanh_c,
        }
    }

    fn advance(&self, x: &[f64], batch: usize, state: &LstmState) -> Result<(LstmState, Vec<StepCache>), NnError> {
        check_len("lstm input", batch * self.input_dim(), x.len())?;
        let n = self.layers.len();
        let hs = self.hidden;
        if state.c.len() != n || state.h.len() != n {
            return Err(NnError::ShapeMismatch);
        }
        for l in 0..n {
            check_len("lstm cell state", batch * hs, state.c[l].len())?;
            check_len("lstm hidden state", batch * hs, state.h[l].len())?;
        }
        let mut next = LstmState::zeros(n, batch, hs);
        let mut caches = Vec::with_capacity(n);
        for l in 0..n {
            let input = if l == 0 { x } else { &next.h[l - 1] };
            let cache = self.layer_step(l, batch, input, &state.h[l], &state.c[l]);
            for k in 0..batch * hs {
                let (b, j) = (k / hs, k % hs);
                let row = &cache.gates[b * 4 * hs..(b + 1) * 4 * hs];
                next.c[l][k] = row[hs + j] * cache.c_prev[k] + row[j] * row[2 * hs + j];
                next.h[l][k] = row[3 * hs + j] * cache.tanh_c[k];
            }
            caches.push(cache);
        }
        Ok((next, caches))
    }

    /// One time step; returns the top layer's hidden state and the new state.
    pub fn step(&self, x: &[f64], batch: usize, state: &LstmState) -> Result<(Vec<f64>, LstmState), NnError> {
        let (next, _) = self.advance(x, batch, state)?;
        Ok((next.h[self.layers.len() - 1].clone(), next))
    }

    /// Runs a sequence from the zero state. `xs[t]` is `batch × inputs`;
    /// returns the top hidden state per step.
    pub fn forward_sequence(&self, xs: &[Vec<f64>], batch: usize) -> Result<(Vec<Vec<f64>>, LstmTape), NnError> {
        let n = self.layers.len();
        let mut state = LstmState::zeros(n, batch, self.hidden);
        let mut outs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, caches) = self.advance(x, batch, &state)?;
            outs.push(next.h[n - 1].clone());
            steps.push(caches);
            state = next;
        }
        Ok((
            outs,
            LstmTape {
                version: self.version,
                batch,
                steps,
            },
        ))
    }

    /// Backpropagation through time. `dh_top[t]` is the gradient of the loss
    /// with respect to the top hidden output at step `t`; parameter gradients
    /// are added into `grads` and input gradients returned per step.
    pub fn backward_sequence(
        &self,
        tape: &LstmTape,
        dh_top: &[Vec<f64>],
        grads: &mut LstmStack,
    ) -> Result<Vec<Vec<f64>>, NnError> {
        if tape.version != self.version {
            return Err(NnError::StaleTape);
        }
        if grads.hidden != self.hidden
            || grads.layers.len() != self.layers.len()
            || grads.input_dim() != self.input_dim()
        {
            return Err(NnError::ShapeMismatch);
        }
        check_len("lstm output gradients", tape.steps.len(), dh_top.len())?;
        let batch = tape.batch;
        let hs = self.hidden;
        let g4 = 4 * hs;
        let n = self.layers.len();
        let mut dh_next = vec![vec![0.0; batch * hs]; n];
        let mut dc_next = vec![vec![0.0; batch * hs]; n];
        let mut dxs = vec![Vec::new(); tape.steps.len()];
        let mut dz = vec![0.0; batch * g4];

        for t in (0..tape.steps.len()).rev() {
            check_len("lstm output gradient", batch * hs, dh_top[t].len())?;
            let mut from_above = dh_top[t].clone();
            for l in (0..n).rev() {
                let cache = &tape.steps[t][l];
                let layer = &self.layers[l];
                for k in 0..batch * hs {
                    let (b, j) = (k / hs, k % hs);
                    let row = &cache.gates[b * g4..(b + 1) * g4];
                    let (i, f, g, o) = (row[j], row[hs + j], row[2 * hs + j], row[3 * hs + j]);
                    let tc = cache.tanh_c[k];
                    let dh = from_above[k] + dh_next[l][k];
                    let dc = dc_next[l][k] + dh * o * (1.0 - tc * tc);
                    let drow = &mut dz[b * g4..(b + 1) * g4];
                    drow[j] = dc * g * i * (1.0 - i);
                    drow[hs + j] = dc * cache.c_prev[k] * f * (1.0 - f);
                    drow[2 * hs + j] = dc * i * (1.0 - g * g);
                    drow[3 * hs + j] = dh * tc * o * (1.0 - o);
                    dc_next[l][k] = dc * f;
                }
                let gl = &mut grads.layers[l];
                matmul_tn_acc(batch, g4, layer.inputs, &dz, &cache.x, &mut gl.w_ih);
                matmul_tn_acc(batch, g4, hs, &dz, &cache.h_prev, &mut gl.w_hh);
                for row in dz.chunks_exact(g4) {
                    for (gb, d) in gl.bias.iter_mut().zip(row) {
                        *gb += d;
                    }
                }
                matmul_nn(batch, g4, hs, &dz, &layer.w_hh, 0.0, &mut dh_next[l]);
                let mut dx = vec![0.0; batch * layer.inputs];
                matmul_nn(batch, g4, layer.inputs, &dz, &layer.w_ih, 0.0, &mut dx);
                from_above = dx;
            }
            dxs[t] = from_above;
        }
        Ok(dxs)
    }
}

impl Parameters for LstmStack {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let g4 = 4 * self.hidden;
        let mut out = Vec::with_capacity(3 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push(TensorRef {
                name: format!("layer{i}.W_ih"),
                dims: vec![g4, l.inputs],
                data: &l.w_ih,
            });
            out.push(TensorRef {
                name: format!("layer{i}.W_hh"),
                dims: vec![g4, self.hidden],
                data: &l.w_hh,
            });
            out.push(TensorRef {
                name: format!("layer{i}.b"),
                dims: vec![g4],
                data: &l.bias,
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = next_version();
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len());
        for l in &mut self.layers {
            out.push(&mut l.w_ih);
            out.push(&mut l.w_hh);
            out.push(&mut l.bias);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::rng;

    fn random_inputs(t: usize, batch: usize, inputs: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed);
        (0..t)
            .map(|_| (0..batch * inputs).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let s = LstmStack::zeros(3, 4, 2).unwrap();
        let state = LstmState::zeros(2, 1, 4);
        let (h, next) = s.step(&[1.0, -2.0, 5.0], 1, &state).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(next.c.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut s = LstmStack::zeros(2, 3, 1).unwrap();
        s.bias_mut(0)[3..6].fill(50.0);
        let state = LstmState {
            c: vec![vec![0.7, -1.3, 2.0]],
            h: vec![vec![0.0; 3]],
        };
        let (_, next) = s.step(&[0.0, 0.0], 1, &state).unwrap();
        for (a, b) in next.c[0].iter().zip(&state.c[0]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn step_matches_scalar_cell_equations() {
        let mut r = rng::stream(5);
        let s = LstmStack::init(2, 3, 1, &mut r).unwrap();
        let x = [0.4, -0.9];
        let (h, next) = s.step(&x, 1, &LstmState::zeros(1, 1, 3)).unwrap();
        let l = &s.layers[0];
        for j in 0..3 {
            let pre = |gate: usize| {
                let row = gate * 3 + j;
                l.bias[row] + l.w_ih[row * 2] * x[0] + l.w_ih[row * 2 + 1] * x[1]
            };
            let c = sigmoid(pre(0)) * libm::tanh(pre(2));
            assert!((next.c[0][j] - c).abs() < 1e-14);
            assert!((h[j] - sigmoid(pre(3)) * libm::tanh(c)).abs() < 1e-14);
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut r = rng::stream(6);
        let s = LstmStack::init(3, 4, 2, &mut r).unwrap();
        let xs = random_inputs(4, 2, 3, 7);
        let (both, _) = s.forward_sequence(&xs, 2).unwrap();
        let first: Vec<Vec<f64>> = xs.iter().map(|x| x[..3].to_vec()).collect();
        let (one, _) = s.forward_sequence(&first, 1).unwrap();
        for (a, b) in both.iter().zip(&one) {
            for (u, v) in a[..4].iter().zip(b) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut r = rng::stream(9);
        let (inputs, hidden, layers, steps, batch) = (3, 4, 2, 5, 2);
        let s = LstmStack::init(inputs, hidden, layers, &mut r).unwrap();
        let xs = random_inputs(steps, batch, inputs, 10);
        let targets = random_inputs(steps, batch, hidden, 11);
        let loss = |s: &LstmStack, xs: &[Vec<f64>]| -> f64 {
            let (hs, _) = s.forward_sequence(xs, batch).unwrap();
            hs.iter()
                .zip(&targets)
                .flat_map(|(h, t)| h.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
                .sum()
        };
        let (hs, tape) = s.forward_sequence(&xs, batch).unwrap();
        let dh: Vec<Vec<f64>> = hs
            .iter()
            .zip(&targets)
            .map(|(h, t)| h.iter().zip(t).map(|(a, b)| 2.0 * (a - b)).collect())
            .collect();
        let mut g = s.zeros_like();
        let dxs = s.backward_sequence(&tape, &dh, &mut g).unwrap();

        let mut probe = s.clone();
        let err = grad_check(
            |p| {
                probe.load_flat(p).unwrap();
                loss(&probe, &xs)
            },
            &s.flatten(),
            &g.flatten(),
            1e-5,
        );
        assert!(err < 1e-4, "params {err}");

        let flat_x: Vec<f64> = xs.concat();
        let flat_dx: Vec<f64> = dxs.concat();
        let n = batch * inputs;
        let err_x = grad_check(
            |p| {
                let xs: Vec<Vec<f64>> = p.chunks(n).map(<[f64]>::to_vec).collect();
                loss(&s, &xs)
            },
            &flat_x,
            &flat_dx,
            1e-5,
        );
        assert!(err_x < 1e-4, "inputs {err_x}");
    }

    #[test]
    fn parameter_count_and_names() {
        let s = LstmStack::zeros(64, 64, 3).unwrap();
        assert_eq!(s.num_params(), 3 * (4 * 64 * 64 * 2 + 4 * 64));
        let names: Vec<_> = s.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names[0], "layer0.W_ih");
        assert_eq!(names[8], "layer2.b");
    }

    #[test]
    fn stale_tape_rejected() {
        let mut r = rng::stream(2);
        let mut s = LstmStack::init(2, 2, 1, &mut r).unwrap();
        let xs = random_inputs(2, 1, 2, 3);
        let (_, tape) = s.forward_sequence(&xs, 1).unwrap();
        s.bias_mut(0)[0] = 0.0;
        let mut g = s.zeros_like();
        let dh = vec![vec![0.0; 2]; 2];
        assert_eq!(s.backward_sequence(&tape, &dh, &mut g), Err(NnError::StaleTape));
    }
}
