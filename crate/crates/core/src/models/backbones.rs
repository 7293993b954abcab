//! Residual (50-layer bottleneck) and VGG-16 style feature extractors.

use rand::Rng;
use wmd_nn::{BatchNorm2d, Conv2d, Layer, MaxPool2d, Mode, ParamVisitor, Real, Relu, Sequential, Tanh, Tensor};

pub fn scaled(channels: usize, scale: f64) -> usize {
    ((channels as f64 * scale).round() as usize).max(1)
}

fn conv_bn<F: Real>(seq: &mut Sequential<F>, tag: &str, conv: Conv2d<F>, out_c: usize) {
    seq.push(format!("conv{tag}"), conv);
    seq.push(format!("bn{tag}"), BatchNorm2d::new(out_c));
}

/// Bottleneck block: 1x1 reduce (carrying the stride), 3x3, 1x1 expand, with
/// a projection shortcut when the shape changes.
pub struct Bottleneck<F: Real> {
    main: Sequential<F>,
    shortcut: Option<Sequential<F>>,
    active: Vec<bool>,
}

impl<F: Real> Bottleneck<F> {
    pub fn new<R: Rng + ?Sized>(in_c: usize, mid: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        Self::with_offset(in_c, mid, out_c, stride, 0, rng)
    }

    /// Block whose strided convolutions sample `offset` pixels down and right.
    pub fn with_offset<R: Rng + ?Sized>(in_c: usize, mid: usize, out_c: usize, stride: usize, offset: usize, rng: &mut R) -> Self {
        let mut main = Sequential::new();
        conv_bn(&mut main, "1", Conv2d::new(in_c, mid, 1, stride, 0, false, rng).with_offset(offset), mid);
        main.push("relu1", Relu::new());
        conv_bn(&mut main, "2", Conv2d::new(mid, mid, 3, 1, 1, false, rng), mid);
        main.push("relu2", Relu::new());
        conv_bn(&mut main, "3", Conv2d::new(mid, out_c, 1, 1, 0, false, rng), out_c);
        let shortcut = (stride != 1 || in_c != out_c).then(|| {
            Sequential::new()
                .with("conv", Conv2d::new(in_c, out_c, 1, stride, 0, false, rng).with_offset(offset))
                .with("bn", BatchNorm2d::new(out_c))
        });
        Self { main, shortcut, active: Vec::new() }
    }
}

impl<F: Real> Layer<F> for Bottleneck<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let mut y = self.main.forward(x, mode);
        match &mut self.shortcut {
            Some(s) => y.add_assign(&s.forward(x, mode)),
            None => y.add_assign(x),
        }
        self.active = y.data().iter().map(|&v| v > F::zero()).collect();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(F::zero()));
        y
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let mut g = grad_out.clone();
        for (v, &on) in g.data_mut().iter_mut().zip(&self.active) {
            if !on {
                *v = F::zero();
            }
        }
        let mut dx = self.main.backward(&g);
        match &mut self.shortcut {
            Some(s) => dx.add_assign(&s.backward(&g)),
            None => dx.add_assign(&g),
        }
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.main.visit_params(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit_params(&wmd_nn::join_name(prefix, "shortcut"), f);
        }
    }
}

/// 50-layer residual network up to its last block; output stride 32.
///
/// Every stride-2 layer with symmetric padding samples even positions, which
/// drags the output grid half a cell up and left (cell `j` would look around
/// pixel `32 j`). The last stage samples odd positions instead, which puts
/// each output cell within half a pixel of the middle of its 32-pixel tile.
///
/// Returns the graph and the number of output channels.
pub fn residual50<F: Real, R: Rng + ?Sized>(scale: f64, rng: &mut R) -> (Sequential<F>, usize) {
    let mut net = Sequential::new();
    let stem = scaled(64, scale);
    net.push("stem_conv", Conv2d::new(3, stem, 7, 2, 3, false, rng).without_input_grad());
    net.push("stem_bn", BatchNorm2d::new(stem));
    net.push("stem_relu", Relu::new());
    net.push("stem_pool", MaxPool2d::new(3, 2, 1));
    let stages = [(64, 3), (128, 4), (256, 6), (512, 3)];
    let mut in_c = stem;
    for (s, &(mid, blocks)) in stages.iter().enumerate() {
        let (mid, out_c) = (scaled(mid, scale), scaled(mid * 4, scale));
        let mut stage = Sequential::new();
        for b in 0..blocks {
            let stride = if b == 0 && s > 0 { 2 } else { 1 };
            let offset = usize::from(stride == 2 && s == stages.len() - 1);
            stage.push(format!("block{b}"), Bottleneck::with_offset(in_c, mid, out_c, stride, offset, rng));
            in_c = out_c;
        }
        net.push(format!("stage{}", s + 1), stage);
    }
    (net, in_c)
}

/// VGG-16 convolutional part with batch norm after every convolution and a
/// tanh on the last one; output stride 32.
pub fn vgg16<F: Real, R: Rng + ?Sized>(scale: f64, rng: &mut R) -> (Sequential<F>, usize) {
    let blocks: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut net = Sequential::new();
    let mut in_c = 3;
    for (b, widths) in blocks.iter().enumerate() {
        let mut block = Sequential::new();
        for (i, &w) in widths.iter().enumerate() {
            let out_c = scaled(w, scale);
            let mut conv = Conv2d::same(in_c, out_c, 3, false, rng);
            if b == 0 && i == 0 {
                conv = conv.without_input_grad();
            }
            block.push(format!("conv{}", i + 1), conv);
            block.push(format!("bn{}", i + 1), BatchNorm2d::new(out_c));
            if b == blocks.len() - 1 && i == widths.len() - 1 {
                block.push(format!("tanh{}", i + 1), Tanh::new());
            } else {
                block.push(format!("relu{}", i + 1), Relu::new());
            }
            in_c = out_c;
        }
        block.push("pool", MaxPool2d::new(2, 2, 0));
        net.push(format!("block{}", b + 1), block);
    }
    (net, in_c)
}
