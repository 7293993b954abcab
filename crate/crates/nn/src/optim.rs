use crate::layer::{Layer, Param};
use crate::real::Real;

/// Gradient-descent update rule over a layer's parameters.
///
/// Per-parameter state is matched to parameters by visit order, which is fixed
/// for a given graph. Frozen weights and buffers are skipped.
pub trait Optimizer<F: Real> {
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
    fn step(&mut self, model: &mut dyn Layer<F>);
}

/// Mini-batch SGD with optional (Nesterov) momentum.
#[derive(Debug, Clone)]
pub struct Sgd<F> {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    velocity: Vec<Vec<F>>,
}

impl<F: Real> Sgd<F> {
    pub fn new(lr: f64, momentum: f64, nesterov: bool) -> Self {
        Self { lr, momentum, nesterov, velocity: Vec::new() }
    }
}

fn state_slot<'a, F: Real>(state: &'a mut Vec<Vec<F>>, idx: usize, p: &Param<F>) -> &'a mut Vec<F> {
    if state.len() <= idx {
        state.resize_with(idx + 1, Vec::new);
    }
    let slot = &mut state[idx];
    if slot.len() != p.len() {
        *slot = vec![F::zero(); p.len()];
    }
    slot
}

impl<F: Real> Optimizer<F> for Sgd<F> {
    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn step(&mut self, model: &mut dyn Layer<F>) {
        let lr = F::lit(self.lr);
        let mu = F::lit(self.momentum);
        let nesterov = self.nesterov;
        let state = &mut self.velocity;
        let mut idx = 0;
        model.visit_params("", &mut |_, p| {
            if !p.is_updatable() {
                return;
            }
            let v = state_slot(state, idx, p);
            idx += 1;
            for ((w, &g), vel) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vel = mu * *vel - lr * g;
                if nesterov {
                    *w += mu * *vel - lr * g;
                } else {
                    *w += *vel;
                }
            }
        });
    }
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-7, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl<F: Real> Optimizer<F> for Adam<F> {
    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn step(&mut self, model: &mut dyn Layer<F>) {
        self.t += 1;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let c1 = F::one() - b1.powi(self.t);
        let c2 = F::one() - b2.powi(self.t);
        let lr = F::lit(self.lr);
        let eps = F::lit(self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        model.visit_params("", &mut |_, p| {
            if !p.is_updatable() {
                return;
            }
            let m = state_slot(ms, idx, p);
            let v = state_slot(vs, idx, p);
            idx += 1;
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (F::one() - b1) * g;
                *vi = b2 * *vi + (F::one() - b2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{Mode, ParamVisitor};
    use crate::tensor::Tensor;

    struct Scalar {
        p: Param<f64>,
    }

    impl Layer<f64> for Scalar {
        fn forward(&mut self, x: &Tensor<f64>, _: Mode) -> Tensor<f64> {
            x.clone()
        }
        fn backward(&mut self, g: &Tensor<f64>) -> Tensor<f64> {
            g.clone()
        }
        fn visit_params(&mut self, _: &str, f: &mut ParamVisitor<'_, f64>) {
            f("w", &mut self.p);
        }
    }

    #[test]
    fn plain_sgd_moves_against_gradient() {
        let mut layer = Scalar { p: Param::new(vec![1.0], vec![1]) };
        layer.p.grad = vec![2.0];
        Sgd::new(0.1, 0.0, false).step(&mut layer);
        assert!((layer.p.value[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn nesterov_first_step_uses_lookahead() {
        let mut layer = Scalar { p: Param::new(vec![0.0], vec![1]) };
        layer.p.grad = vec![1.0];
        Sgd::new(0.1, 0.9, true).step(&mut layer);
        // v = -0.1; w += 0.9 * v - 0.1 = -0.19
        assert!((layer.p.value[0] + 0.19).abs() < 1e-12);
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut layer = Scalar { p: Param::new(vec![1.0], vec![1]) };
        layer.p.trainable = false;
        layer.p.grad = vec![5.0];
        Adam::new(0.1).step(&mut layer);
        Sgd::new(0.1, 0.9, true).step(&mut layer);
        assert_eq!(layer.p.value, vec![1.0]);
    }

    #[test]
    fn adam_first_step_has_lr_magnitude() {
        let mut layer = Scalar { p: Param::new(vec![0.0], vec![1]) };
        layer.p.grad = vec![3.0];
        Adam::new(0.01).step(&mut layer);
        assert!((layer.p.value[0] + 0.01).abs() < 1e-6);
    }
}
