use rand::Rng;
use wmd_nn::{Conv2d, GlobalAvgPool, Layer, Mode, ParamVisitor, Real, Relu, Sequential, Sigmoid, Tensor};

use crate::error::{Error, Result};

/// Channel-wise attention: a per-channel weight in (0, 1) computed from the
/// pooled maps by two 1x1 convolutions (ReLU, then sigmoid) rescales each map.
pub struct ChannelAttention<F: Real> {
    channels: usize,
    descriptor: Sequential<F>,
    cache: Option<(Tensor<F>, Tensor<F>)>,
}

impl<F: Real> ChannelAttention<F> {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let hidden = (channels / 8).max(1);
        let descriptor = Sequential::new()
            .with("pool", GlobalAvgPool::new())
            .with("conv1", Conv2d::new(channels, hidden, 1, 1, 0, true, rng))
            .with("relu", Relu::new())
            .with("conv2", Conv2d::new(hidden, channels, 1, 1, 0, true, rng))
            .with("sigmoid", Sigmoid::new());
        Self { channels, descriptor, cache: None }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        (self.channels / 8).max(1)
    }

    /// Sets the descriptor parameters from flat row-major buffers
    /// (`w1: hidden x C`, `b1: hidden`, `w2: C x hidden`, `b2: C`).
    pub fn set_params(&mut self, w1: &[F], b1: &[F], w2: &[F], b2: &[F]) -> Result<()> {
        let (c, h) = (self.channels, self.hidden());
        let expected = [("conv1.weight", h * c), ("conv1.bias", h), ("conv2.weight", c * h), ("conv2.bias", c)];
        let given = [w1, b1, w2, b2];
        for ((name, len), src) in expected.iter().zip(given) {
            if src.len() != *len {
                return Err(Error::Shape(format!("attention {name} needs {len} values, got {}", src.len())));
            }
        }
        self.descriptor.visit_params("", &mut |name, p| {
            if let Some(i) = expected.iter().position(|(n, _)| *n == name) {
                p.value.copy_from_slice(given[i]);
            }
        });
        Ok(())
    }

    /// Per-channel, per-sample weights of the last forward pass.
    pub fn last_descriptor(&self) -> Option<&Tensor<F>> {
        self.cache.as_ref().map(|c| &c.1)
    }
}

impl<F: Real> Layer<F> for ChannelAttention<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let s = x.shape();
        assert_eq!(s.c, self.channels, "attention expects {} channels, got {s}", self.channels);
        let d = self.descriptor.forward(x, mode);
        let mut y = x.clone();
        let p = s.plane();
        for c in 0..s.c {
            for n in 0..s.n {
                let wgt = d.data()[c * s.n + n];
                let start = (c * s.n + n) * p;
                y.data_mut()[start..start + p].iter_mut().for_each(|v| *v *= wgt);
            }
        }
        self.cache = Some((x.clone(), d));
        y
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let (x, d) = self.cache.take().expect("attention backward before forward");
        let s = x.shape();
        let p = s.plane();
        let mut dx = grad_out.clone();
        let mut dd = Tensor::zeros(d.shape());
        for c in 0..s.c {
            for n in 0..s.n {
                let i = c * s.n + n;
                let start = i * p;
                let wgt = d.data()[i];
                let mut acc = F::zero();
                for k in start..start + p {
                    acc += grad_out.data()[k] * x.data()[k];
                    dx.data_mut()[k] *= wgt;
                }
                dd.data_mut()[i] = acc;
            }
        }
        dx.add_assign(&self.descriptor.backward(&dd));
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.descriptor.visit_params(prefix, f);
    }
}

/// Applies an attention block to `maps` in inference mode.
pub fn channel_attention<F: Real>(maps: &Tensor<F>, block: &mut ChannelAttention<F>) -> Result<Tensor<F>> {
    if maps.shape().c != block.channels() {
        return Err(Error::Shape(format!("{} maps for a {}-channel attention block", maps.shape().c, block.channels())));
    }
    if maps.is_empty() {
        return Err(Error::Shape("empty feature maps".into()));
    }
    Ok(block.forward(maps, Mode::Eval))
}
