use crate::layer::{Layer, Mode};
use crate::real::Real;
use crate::tensor::Tensor;

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[derive(Default)]
pub struct Relu<F> {
    output: Option<Tensor<F>>,
}

impl<F: Real> Relu<F> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl<F: Real> Layer<F> for Relu<F> {
    fn forward(&mut self, x: &Tensor<F>, _mode: Mode) -> Tensor<F> {
        let y = x.map(|v| v.max(F::zero()));
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let y = self.output.as_ref().expect("relu backward before forward");
        grad_out.zip_map(y, |g, y| if y > F::zero() { g } else { F::zero() })
    }
}

#[derive(Default)]
pub struct Tanh<F> {
    output: Option<Tensor<F>>,
}

impl<F: Real> Tanh<F> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl<F: Real> Layer<F> for Tanh<F> {
    fn forward(&mut self, x: &Tensor<F>, _mode: Mode) -> Tensor<F> {
        let y = x.map(F::tanh);
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let y = self.output.as_ref().expect("tanh backward before forward");
        grad_out.zip_map(y, |g, y| g * (F::one() - y * y))
    }
}

#[derive(Default)]
pub struct Sigmoid<F> {
    output: Option<Tensor<F>>,
}

impl<F: Real> Sigmoid<F> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl<F: Real> Layer<F> for Sigmoid<F> {
    fn forward(&mut self, x: &Tensor<F>, _mode: Mode) -> Tensor<F> {
        let y = x.map(sigmoid);
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let y = self.output.as_ref().expect("sigmoid backward before forward");
        grad_out.zip_map(y, |g, y| g * y * (F::one() - y))
    }
}
