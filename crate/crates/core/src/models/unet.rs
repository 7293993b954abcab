//! Encoder-decoder segmenter with skip connections ("same" padding and batch
//! norm after every 3x3 convolution).

use rand::Rng;
use wmd_nn::{join_name, BatchNorm2d, Conv2d, ConvTranspose2d, Layer, MaxPool2d, Mode, ParamVisitor, Real, Relu, Sequential, Tensor};

use super::backbones::scaled;

pub const BASE_WIDTHS: [usize; 5] = [64, 128, 256, 512, 1024];

/// Weighted layers (convolutions and batch norms) in the encoder.
pub const ENCODER_WEIGHTED_LAYERS: usize = 20;

pub fn unet_widths(scale: f64) -> [usize; 5] {
    BASE_WIDTHS.map(|w| scaled(w, scale))
}

fn double_conv<F: Real, R: Rng + ?Sized>(seq: &mut Sequential<F>, in_c: usize, out_c: usize, first: bool, rng: &mut R) {
    let mut conv1 = Conv2d::same(in_c, out_c, 3, false, rng);
    if first {
        conv1 = conv1.without_input_grad();
    }
    seq.push("conv1", conv1);
    seq.push("bn1", BatchNorm2d::new(out_c));
    seq.push("relu1", Relu::new());
    seq.push("conv2", Conv2d::same(out_c, out_c, 3, false, rng));
    seq.push("bn2", BatchNorm2d::new(out_c));
    seq.push("relu2", Relu::new());
}

/// Contracting path: five levels, each after the first preceded by 2x2 max
/// pooling. Feeding it to a classifier uses only the deepest output.
pub struct UNetEncoder<F: Real> {
    levels: Vec<Sequential<F>>,
    widths: [usize; 5],
}

impl<F: Real> UNetEncoder<F> {
    pub fn new<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Self {
        let widths = unet_widths(scale);
        let mut levels = Vec::new();
        let mut in_c = 3;
        for (i, &w) in widths.iter().enumerate() {
            let mut level = Sequential::new();
            if i > 0 {
                level.push("pool", MaxPool2d::new(2, 2, 0));
            }
            double_conv(&mut level, in_c, w, i == 0, rng);
            levels.push(level);
            in_c = w;
        }
        Self { levels, widths }
    }

    pub fn widths(&self) -> [usize; 5] {
        self.widths
    }

    /// Outputs of every level, shallowest first.
    pub fn forward_levels(&mut self, x: &Tensor<F>, mode: Mode) -> Vec<Tensor<F>> {
        let mut outs: Vec<Tensor<F>> = Vec::with_capacity(self.levels.len());
        for level in &mut self.levels {
            let next = level.forward(outs.last().unwrap_or(x), mode);
            outs.push(next);
        }
        outs
    }

    /// Backward pass given gradients for the deepest output and, optionally,
    /// for the shallower ones (skip connections).
    pub fn backward_levels(&mut self, deepest: &Tensor<F>, skips: &[Option<Tensor<F>>]) -> Tensor<F> {
        let mut g = deepest.clone();
        for i in (0..self.levels.len()).rev() {
            g = self.levels[i].backward(&g);
            if i > 0 {
                if let Some(Some(s)) = skips.get(i - 1) {
                    g.add_assign(s);
                }
            }
        }
        g
    }
}

impl<F: Real> Layer<F> for UNetEncoder<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        self.forward_levels(x, mode).pop().expect("encoder has levels")
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        self.backward_levels(grad_out, &[])
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        for (i, level) in self.levels.iter_mut().enumerate() {
            level.visit_params(&join_name(prefix, &format!("level{i}")), f);
        }
    }
}

/// Full segmenter producing one logit per pixel.
pub struct UNet<F: Real> {
    pub encoder: UNetEncoder<F>,
    ups: Vec<ConvTranspose2d<F>>,
    decoders: Vec<Sequential<F>>,
    head: Conv2d<F>,
}

impl<F: Real> UNet<F> {
    pub fn new<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Self {
        let encoder = UNetEncoder::new(scale, rng);
        let w = encoder.widths();
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        // index j decodes back to level j, deepest first at j = 3
        for j in 0..4 {
            ups.push(ConvTranspose2d::new(w[j + 1], w[j], 2, rng));
            let mut dec = Sequential::new();
            double_conv(&mut dec, 2 * w[j], w[j], false, rng);
            decoders.push(dec);
        }
        let head = Conv2d::new(w[0], 1, 1, 1, 0, true, rng);
        Self { encoder, ups, decoders, head }
    }
}

impl<F: Real> Layer<F> for UNet<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let mut levels = self.encoder.forward_levels(x, mode);
        let mut y = levels.pop().expect("encoder has levels");
        for j in (0..4).rev() {
            let up = self.ups[j].forward(&y, mode);
            y = self.decoders[j].forward(&Tensor::concat_channels(&levels[j], &up), mode);
        }
        self.head.forward(&y, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let w = self.encoder.widths();
        let mut g = self.head.backward(grad_out);
        let mut skips: Vec<Option<Tensor<F>>> = vec![None; 4];
        for j in 0..4 {
            let cat = self.decoders[j].backward(&g);
            let (skip, up) = cat.split_channels(w[j]);
            skips[j] = Some(skip);
            g = self.ups[j].backward(&up);
        }
        self.encoder.backward_levels(&g, &skips)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.encoder.visit_params(&join_name(prefix, "encoder"), f);
        for j in (0..4).rev() {
            self.ups[j].visit_params(&join_name(prefix, &format!("decoder.up{j}")), f);
            self.decoders[j].visit_params(&join_name(prefix, &format!("decoder.level{j}")), f);
        }
        self.head.visit_params(&join_name(prefix, "head"), f);
    }
}
