use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layer::{Layer, Mode};
use crate::real::Real;
use crate::tensor::Tensor;

/// Inverted dropout: kept activations are scaled by `1 / (1 - p)` at train time.
pub struct Dropout<F> {
    p: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<F>>,
}

impl<F: Real> Dropout<F> {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        Self { p, rng: ChaCha8Rng::seed_from_u64(seed), mask: None }
    }

    pub fn probability(&self) -> f64 {
        self.p
    }
}

impl<F: Real> Layer<F> for Dropout<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = F::lit(1.0 / (1.0 - self.p));
        let mask: Vec<F> = (0..x.len())
            .map(|_| if self.rng.gen::<f64>() < self.p { F::zero() } else { keep })
            .collect();
        let out = Tensor::from_vec(x.shape(), x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect());
        self.mask = Some(mask);
        out
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        match &self.mask {
            None => grad_out.clone(),
            Some(mask) => Tensor::from_vec(
                grad_out.shape(),
                grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect(),
            ),
        }
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}
