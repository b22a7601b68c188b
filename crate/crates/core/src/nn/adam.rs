use alloc::vec::Vec;

use super::{NnError, Parameters};

/// Adam with bias correction. Moment buffers are sized on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` from `grads`, which must have the same
    /// tensor layout.
    pub fn step<P: Parameters + ?Sized, G: Parameters + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
    ) -> Result<(), NnError> {
        let g = grads.tensors();
        {
            let p = params.tensors();
            if p.len() != g.len() || p.iter().zip(&g).any(|(a, b)| a.data.len() != b.data.len()) {
                return Err(NnError::ShapeMismatch);
            }
        }
        let total: usize = g.iter().map(|t| t.data.len()).sum();
        if self.m.is_empty() {
            self.m = alloc::vec![0.0; total];
            self.v = alloc::vec![0.0; total];
        } else if self.m.len() != total {
            return Err(NnError::ShapeMismatch);
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        let mut off = 0;
        for (pt, gt) in params.tensors_mut().into_iter().zip(&g) {
            for (i, (w, &gr)) in pt.iter_mut().zip(gt.data).enumerate() {
                let m = &mut self.m[off + i];
                let v = &mut self.v[off + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gr;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gr * gr;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= self.lr * mh / (libm::sqrt(vh) + self.eps);
            }
            off += gt.data.len();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, Mlp};
    use alloc::vec;

    fn vector_model(w: &[f64]) -> Mlp {
        let mut d = Dense::zeros(w.len(), 1, Activation::Linear);
        d.weight.copy_from_slice(w);
        Mlp::new(vec![d]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vector_model(&[1.0, -2.0]);
        let g = p.zeros_like();
        let before = p.flatten();
        let mut opt = Adam::new(0.1);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.flatten(), before);
    }

    #[test]
    fn first_step_is_sign_scaled() {
        let mut p = vector_model(&[1.0, 1.0, 1.0]);
        let g = vector_model(&[0.5, -3.0, 1e-3]);
        let mut opt = Adam::new(0.01);
        opt.step(&mut p, &g).unwrap();
        let w = &p.layers()[0].weight;
        for (wi, gi) in w.iter().zip(&[0.5f64, -3.0, 1e-3]) {
            let expect = 1.0 - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((wi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut p = vector_model(&[1.0; 4]);
        let mut opt = Adam::new(0.05);
        for _ in 0..200 {
            let mut g = p.zeros_like();
            for (gw, w) in g.layers_mut()[0].weight.iter_mut().zip(&p.layers()[0].weight) {
                *gw = 2.0 * w;
            }
            opt.step(&mut p, &g).unwrap();
        }
        let norm = libm::sqrt(p.layers()[0].weight.iter().map(|w| w * w).sum::<f64>());
        assert!(norm < 1e-2, "{norm}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vector_model(&[1.0; 3]);
        let g = vector_model(&[1.0; 2]);
        assert_eq!(Adam::new(0.1).step(&mut p, &g), Err(NnError::ShapeMismatch));
    }
}
