use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{check_len, matmul_nn, matmul_nt, matmul_tn_acc, next_version, NnError, Parameters, TensorRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Affine layer `act(W x + b)`, `W` row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform `±√(6/(fan_in+fan_out))` weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let a = libm::sqrt(6.0 / (inputs + outputs) as f64);
        let weight = (0..inputs * outputs).map(|_| rng.random_range(-a..=a)).collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
            activation,
        }
    }
}

/// Feed-forward stack of [`Dense`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    version: u64,
}

/// Layer inputs and the final output of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    version: u64,
    batch: usize,
    acts: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Architecture("at least one layer"));
        }
        for l in &layers {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(NnError::Architecture("zero-width layer"));
            }
            check_len("weight", l.inputs * l.outputs, l.weight.len())?;
            check_len("bias", l.outputs, l.bias.len())?;
        }
        if layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(NnError::Architecture("consecutive widths differ"));
        }
        Ok(Self {
            layers,
            version: next_version(),
        })
    }

    /// Glorot-initialized net over `widths = [in, h₁, …, out]` with ReLU
    /// hidden layers and a linear output.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self, NnError> {
        if widths.len() < 2 {
            return Err(NnError::Architecture("need input and output widths"));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Linear } else { Activation::Relu };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Dense::zeros(l.inputs, l.outputs, l.activation))
            .collect();
        Self {
            layers,
            version: next_version(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.version = next_version();
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Widths `[in, h₁, …, out]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape), NnError> {
        self.forward_batch(x, 1)
    }

    /// Forward pass over `batch` row-major samples.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, MlpTape), NnError> {
        check_len("mlp input", batch * self.input_dim(), x.len())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let prev = acts.last().expect("non-empty");
            let mut y = vec![0.0; batch * l.outputs];
            for row in y.chunks_exact_mut(l.outputs) {
                row.copy_from_slice(&l.bias);
            }
            matmul_nt(batch, l.inputs, l.outputs, prev, &l.weight, 1.0, &mut y);
            if l.activation == Activation::Relu {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            acts.push(y);
        }
        let out = acts.last().expect("non-empty").clone();
        Ok((
            out,
            MlpTape {
                version: self.version,
                batch,
                acts,
            },
        ))
    }

    pub fn predict_batch(&self, x: &[f64], batch: usize) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_batch(x, batch)?.0)
    }

    /// Backpropagates `dy` (gradient of a scalar with respect to the batch
    /// output), adds parameter gradients into `grads` and returns the input
    /// gradient. ReLU has zero derivative at 0.
    pub fn backward(&self, tape: &MlpTape, dy: &[f64], grads: &mut Mlp) -> Result<Vec<f64>, NnError> {
        if tape.version != self.version {
            return Err(NnError::StaleTape);
        }
        if !self.same_layout(grads) {
            return Err(NnError::ShapeMismatch);
        }
        let batch = tape.batch;
        check_len("mlp output gradient", batch * self.output_dim(), dy.len())?;
        let mut delta = dy.to_vec();
        for (idx, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Relu {
                for (d, &a) in delta.iter_mut().zip(&tape.acts[idx + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grads.layers[idx];
            matmul_tn_acc(batch, l.outputs, l.inputs, &delta, &tape.acts[idx], &mut g.weight);
            for row in delta.chunks_exact(l.outputs) {
                for (gb, d) in g.bias.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            let mut dx = vec![0.0; batch * l.inputs];
            matmul_nn(batch, l.outputs, l.inputs, &delta, &l.weight, 0.0, &mut dx);
            delta = dx;
        }
        Ok(delta)
    }

    fn same_layout(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push(TensorRef {
                name: format!("{i}.W"),
                dims: vec![l.outputs, l.inputs],
                data: &l.weight,
            });
            out.push(TensorRef {
                name: format!("{i}.b"),
                dims: vec![l.outputs],
                data: &l.bias,
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = next_version();
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(&mut l.weight);
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

    fn identity_layer(n: usize, act: Activation) -> Dense {
        let mut d = Dense::zeros(n, n, act);
        for i in 0..n {
            d.weight[i * n + i] = 1.0;
        }
        d
    }

    /// Straight-line re-evaluation, one sample and one neuron at a time.
    fn reference_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in m.layers() {
            a = (0..l.outputs)
                .map(|o| {
                    let mut z = l.bias[o];
                    for i in 0..l.inputs {
                        z += l.weight[o * l.inputs + i] * a[i];
                    }
                    match l.activation {
                        Activation::Relu => z.max(0.0),
                        Activation::Linear => z,
                    }
                })
                .collect();
        }
        a
    }

    #[test]
    fn identity_and_relu_layers() {
        let lin = Mlp::new(vec![identity_layer(3, Activation::Linear)]).unwrap();
        let x = [1.5, -2.0, 0.25];
        assert_eq!(lin.forward(&x).unwrap().0, x.to_vec());
        let relu = Mlp::new(vec![identity_layer(2, Activation::Relu)]).unwrap();
        assert_eq!(relu.forward(&[-1.0, 2.0]).unwrap().0, vec![0.0, 2.0]);

        let (_, tape) = lin.forward(&x).unwrap();
        let mut g = lin.zeros_like();
        let dy = [0.3, -0.1, 7.0];
        assert_eq!(lin.backward(&tape, &dy, &mut g).unwrap(), dy.to_vec());
    }

    #[test]
    fn batch_forward_matches_reference() {
        let mut r = rng::stream(4);
        let m = Mlp::init(&[5, 7, 3, 4], &mut r).unwrap();
        let batch = 6;
        let x: Vec<f64> = (0..batch * 5).map(|_| r.random_range(-1.0..1.0)).collect();
        let y = m.predict_batch(&x, batch).unwrap();
        for b in 0..batch {
            let e = reference_forward(&m, &x[b * 5..(b + 1) * 5]);
            for (u, v) in y[b * 4..(b + 1) * 4].iter().zip(&e) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_energy_gradient_closed_form() {
        // ∇ₓ ½‖Wx‖² = WᵀWx.
        let mut r = rng::stream(8);
        let mut d = Dense::glorot(3, 4, Activation::Linear, &mut r);
        d.bias.fill(0.0);
        let m = Mlp::new(vec![d.clone()]).unwrap();
        let x = [0.4, -1.2, 0.7];
        let (y, tape) = m.forward(&x).unwrap();
        let dx = m.backward(&tape, &y, &mut m.zeros_like()).unwrap();
        for i in 0..3 {
            let e: f64 = (0..4)
                .map(|o| d.weight[o * 3 + i] * (0..3).map(|k| d.weight[o * 3 + k] * x[k]).sum::<f64>())
                .sum();
            assert!((dx[i] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_and_input_gradients_match_finite_differences() {
        let mut r = rng::stream(21);
        let m = Mlp::init(&[4, 6, 5, 3], &mut r).unwrap();
        let batch = 3;
        let x: Vec<f64> = (0..batch * 4).map(|_| r.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..batch * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let loss = |m: &Mlp, x: &[f64]| -> f64 {
            let y = m.predict_batch(x, batch).unwrap();
            y.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / batch as f64
        };
        let (y, tape) = m.forward_batch(&x, batch).unwrap();
        let dy: Vec<f64> = y.iter().zip(&t).map(|(a, b)| 2.0 * (a - b) / batch as f64).collect();
        let mut g = m.zeros_like();
        let dx = m.backward(&tape, &dy, &mut g).unwrap();

        let mut probe = m.clone();
        let err = grad_check(
            |p| {
                probe.load_flat(p).unwrap();
                loss(&probe, &x)
            },
            &m.flatten(),
            &g.flatten(),
            1e-5,
        );
        assert!(err < 1e-5, "params {err}");
        let err_x = grad_check(|xp| loss(&m, xp), &x, &dx, 1e-5);
        assert!(err_x < 1e-5, "inputs {err_x}");
    }

    #[test]
    fn stale_tape_and_bad_shapes_rejected() {
        let mut r = rng::stream(1);
        let mut m = Mlp::init(&[2, 3, 1], &mut r).unwrap();
        let (_, tape) = m.forward(&[0.1, 0.2]).unwrap();
        let mut g = m.zeros_like();
        m.layers_mut()[0].bias[0] += 1.0;
        assert_eq!(m.backward(&tape, &[1.0], &mut g), Err(NnError::StaleTape));
        let (_, tape) = m.forward(&[0.1, 0.2]).unwrap();
        let mut wrong = Mlp::init(&[2, 4, 1], &mut r).unwrap();
        assert_eq!(m.backward(&tape, &[1.0], &mut wrong), Err(NnError::ShapeMismatch));
        assert!(m.forward(&[1.0]).is_err());
        assert!(Mlp::new(vec![Dense::zeros(2, 3, Activation::Relu), Dense::zeros(2, 1, Activation::Linear)]).is_err());
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let a = Mlp::init(&[10, 20, 5], &mut rng::stream(3)).unwrap();
        let b = Mlp::init(&[10, 20, 5], &mut rng::stream(3)).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let bound = libm::sqrt(6.0 / 30.0);
        assert!(a.layers()[0].weight.iter().all(|w| w.abs() <= bound));
        assert!(a.layers()[0].bias.iter().all(|&b| b == 0.0));
        assert_eq!(a.num_params(), 10 * 20 + 20 + 20 * 5 + 5);
        assert_eq!(a.widths(), vec![10, 20, 5]);
    }
}
