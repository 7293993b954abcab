use crate::layer::{join_name, Layer, Mode, Param, ParamVisitor};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-channel batch normalisation.
///
/// In `Train` mode statistics come from the batch and the running estimates are
/// updated with `momentum`. A frozen layer always normalises with its running
/// estimates and never touches them.
pub struct BatchNorm2d<F: Real> {
    channels: usize,
    eps: F,
    momentum: F,
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
    cache: Option<Cache<F>>,
}

struct Cache<F> {
    normalized: Tensor<F>,
    inv_std: Vec<F>,
    batch_stats: bool,
}

impl<F: Real> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: F::lit(1e-5),
            momentum: F::lit(0.1),
            gamma: Param::new(vec![F::one(); channels], vec![channels]),
            beta: Param::zeros(vec![channels]),
            running_mean: Param::buffer(vec![F::zero(); channels], vec![channels]),
            running_var: Param::buffer(vec![F::one(); channels], vec![channels]),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.gamma.trainable = trainable;
        self.beta.trainable = trainable;
    }

    /// Frozen when its scale is not trainable, so freezing through a
    /// parameter visitor also switches the layer to running statistics.
    pub fn is_frozen(&self) -> bool {
        !self.gamma.trainable
    }
}

impl<F: Real> Layer<F> for BatchNorm2d<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let s = x.shape();
        assert_eq!(s.c, self.channels, "batch norm expects {} channels, got {s}", self.channels);
        let m = s.channel_len();
        let batch_stats = mode == Mode::Train && !self.is_frozen();
        let mut normalized = Tensor::zeros(s);
        let mut out = Tensor::zeros(s);
        let mut inv_std = Vec::with_capacity(s.c);
        let mf = F::from_usize(m).unwrap();
        for c in 0..s.c {
            let xs = x.channel(c);
            let (mean, var) = if batch_stats {
                let mean = xs.iter().copied().sum::<F>() / mf;
                let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / mf;
                let unbiased = if m > 1 { var * mf / (mf - F::one()) } else { var };
                let mom = self.momentum;
                let rm = &mut self.running_mean.value[c];
                *rm = (F::one() - mom) * *rm + mom * mean;
                let rv = &mut self.running_var.value[c];
                *rv = (F::one() - mom) * *rv + mom * unbiased;
                (mean, var)
            } else {
                (self.running_mean.value[c], self.running_var.value[c])
            };
            let istd = F::one() / (var + self.eps).sqrt();
            inv_std.push(istd);
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            let nd = normalized.channel_mut(c);
            for (dst, &v) in nd.iter_mut().zip(xs) {
                *dst = (v - mean) * istd;
            }
            let od = out.channel_mut(c);
            for (dst, &v) in od.iter_mut().zip(normalized.channel(c)) {
                *dst = g * v + b;
            }
        }
        self.cache = Some(Cache { normalized, inv_std, batch_stats });
        out
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let cache = self.cache.as_ref().expect("batch norm backward before forward");
        let s = grad_out.shape();
        let m = F::from_usize(s.channel_len()).unwrap();
        let mut dx = Tensor::zeros(s);
        for c in 0..s.c {
            let g = grad_out.channel(c);
            let xh = cache.normalized.channel(c);
            let sum_g: F = g.iter().copied().sum();
            let sum_gx: F = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            self.gamma.grad[c] += sum_gx;
            self.beta.grad[c] += sum_g;
            let scale = self.gamma.value[c] * cache.inv_std[c];
            let d = dx.channel_mut(c);
            if cache.batch_stats {
                let k = scale / m;
                for ((dst, &gi), &xi) in d.iter_mut().zip(g).zip(xh) {
                    *dst = k * (m * gi - sum_g - xi * sum_gx);
                }
            } else {
                for (dst, &gi) in d.iter_mut().zip(g) {
                    *dst = scale * gi;
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        f(&join_name(prefix, "gamma"), &mut self.gamma);
        f(&join_name(prefix, "beta"), &mut self.beta);
        f(&join_name(prefix, "running_mean"), &mut self.running_mean);
        f(&join_name(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn train_mode_output_is_standardized() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::from_vec(Shape::new(2, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 8.0]);
        let y = bn.forward(&x, Mode::Train);
        for c in 0..2 {
            let ch = y.channel(c);
            let mean: f64 = ch.iter().sum::<f64>() / 4.0;
            let var: f64 = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert!((bn.running_mean.value[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn frozen_layer_keeps_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.set_trainable(false);
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![5.0, 6.0, 7.0]);
        let before = (bn.running_mean.value.clone(), bn.running_var.value.clone());
        let y = bn.forward(&x, Mode::Train);
        assert_eq!(before, (bn.running_mean.value.clone(), bn.running_var.value.clone()));
        assert!((y.data()[0] - 5.0 / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }
}
