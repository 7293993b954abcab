//! Classification and segmentation graphs.
//!
//! Classifiers are a backbone (VGG-16 style, 50-layer residual, or the
//! segmenter's encoder followed by two extra conv blocks), an optional channel
//! attention block, and a head of global average pooling and a dense layer.
//! Parameter names are dotted paths (`backbone.block1.conv1.weight`) and are
//! what checkpoints, weight transfer and freezing key on.

mod attention;
mod backbones;
pub mod checkpoint;
mod unet;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wmd_nn::{
    join_name, softmax_rows, BatchNorm2d, Conv2d, Dropout, GlobalAvgPool, Layer, Mode, ParamKind, ParamVisitor, Real,
    Relu, Sequential, Tensor,
};

use crate::encoder::Image;
use crate::error::{Error, Result};

pub use attention::{channel_attention, ChannelAttention};
pub use backbones::{residual50, scaled, vgg16, Bottleneck};
pub use checkpoint::{
    export_weights, import_pretrained, load_checkpoint, save_checkpoint, apply_weights, Checkpoint, CheckpointManifest,
    ImportReport, LoadReport, WeightEntry, WeightSet,
};
pub use unet::{unet_widths, UNet, UNetEncoder, BASE_WIDTHS, ENCODER_WEIGHTED_LAYERS};

/// Layers of the segmenter encoder frozen when building the encoder classifier.
pub const TRANSFER_FROZEN_LAYERS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    VggStyle,
    Residual,
    EncoderClassifier,
    Segmenter,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Self::VggStyle => "vgg_style",
            Self::Residual => "residual",
            Self::EncoderClassifier => "encoder_classifier",
            Self::Segmenter => "segmenter",
        }
    }

    pub fn is_classifier(self) -> bool {
        self != Self::Segmenter
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::VggStyle, Self::Residual, Self::EncoderClassifier, Self::Segmenter]
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown backbone `{s}`")))
    }
}

/// Where initial backbone weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pretrained {
    /// He-normal initialization.
    #[default]
    None,
    /// A checkpoint archive whose `backbone.*` entries follow this layout.
    ImagenetImport(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub attention: bool,
    /// Multiplier on every channel width, in (0, 1].
    pub scale: f64,
    pub input_size: usize,
    pub num_classes: usize,
    pub pretrained: Pretrained,
    /// Leading weighted layers of the backbone excluded from training.
    pub frozen_layers: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::VggStyle,
            attention: false,
            scale: 1.0,
            input_size: 224,
            num_classes: 4,
            pretrained: Pretrained::None,
            frozen_layers: 0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(backbone: Backbone) -> Self {
        let frozen_layers = if backbone == Backbone::EncoderClassifier { TRANSFER_FROZEN_LAYERS } else { 0 };
        Self { backbone, frozen_layers, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::Config(format!("scale must be in (0, 1], got {}", self.scale)));
        }
        if self.input_size < 32 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!("input size must be a positive multiple of 32, got {}", self.input_size)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.attention && !self.backbone.is_classifier() {
            return Err(Error::Config("attention is only available for classifier backbones".into()));
        }
        if self.backbone == Backbone::EncoderClassifier && self.frozen_layers > ENCODER_WEIGHTED_LAYERS {
            return Err(Error::Config(format!(
                "cannot freeze {} layers of a {}-layer encoder",
                self.frozen_layers, ENCODER_WEIGHTED_LAYERS
            )));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Stacks HWC images into a channel-major batch.
pub fn image_batch<F: Real>(images: &[&Image]) -> Result<Tensor<F>> {
    let first = images.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    if let Some(bad) = images.iter().find(|i| (i.height, i.width, i.channels) != (h, w, c)) {
        return Err(Error::Shape(format!("{}x{}x{} image in a {h}x{w}x{c} batch", bad.height, bad.width, bad.channels)));
    }
    let cast: Vec<Vec<F>> = images.iter().map(|i| i.data.iter().map(|&v| F::lit(v as f64)).collect()).collect();
    let refs: Vec<&[F]> = cast.iter().map(Vec::as_slice).collect();
    Ok(Tensor::from_hwc_batch(&refs, c, h, w))
}

/// Parameter-name prefix of the layer owning `name` (`a.b.weight` -> `a.b`).
pub fn layer_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(l, _)| l)
}

/// Layers owning learnable weights, in graph order.
pub fn weighted_layers<F: Real>(model: &mut dyn Layer<F>, prefix: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    model.visit_params(prefix, &mut |name, p| {
        let layer = layer_of(name);
        if p.kind == ParamKind::Weight && out.last().map(String::as_str) != Some(layer) {
            out.push(layer.to_string());
        }
    });
    out
}

/// Marks every parameter of the first `n` weighted layers under `scope` as
/// non-trainable. Batch norms among them switch to running statistics.
///
/// Returns the frozen layer names.
pub fn freeze_first_weighted<F: Real>(model: &mut dyn Layer<F>, scope: &str, n: usize) -> Result<Vec<String>> {
    let layers: Vec<String> =
        weighted_layers(model, "").into_iter().filter(|l| l.starts_with(scope)).collect();
    if n > layers.len() {
        return Err(Error::Config(format!("cannot freeze {n} of {} layers under `{scope}`", layers.len())));
    }
    let frozen: BTreeSet<String> = layers[..n].iter().cloned().collect();
    model.visit_params("", &mut |name, p| {
        if frozen.contains(layer_of(name)) {
            p.trainable = false;
        }
    });
    Ok(layers[..n].to_vec())
}

/// Names of layers that have at least one frozen weight.
pub fn frozen_layers<F: Real>(model: &mut dyn Layer<F>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    model.visit_params("", &mut |name, p| {
        let layer = layer_of(name);
        if p.kind == ParamKind::Weight && !p.trainable && out.last().map(String::as_str) != Some(layer) {
            out.push(layer.to_string());
        }
    });
    out
}

/// Probabilities, logits and last-block feature maps for a batch.
#[derive(Debug, Clone)]
pub struct ClassifierOutput<F: Real> {
    pub probs: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    /// Output of the last convolutional block, before any attention.
    pub feature_maps: Tensor<F>,
}

impl<F: Real> ClassifierOutput<F> {
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.iter().map(|p| argmax(p)).collect()
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

pub struct ClassifierModel<F: Real> {
    config: ModelConfig,
    backbone: Sequential<F>,
    attention: Option<ChannelAttention<F>>,
    head: Sequential<F>,
    feature_channels: usize,
}

impl<F: Real> ClassifierModel<F> {
    fn assemble(config: ModelConfig, backbone: Sequential<F>, channels: usize, dropout: bool, rng: &mut ChaCha8Rng) -> Self {
        let attention = config.attention.then(|| ChannelAttention::new(channels, rng));
        let mut head = Sequential::new();
        if dropout {
            head.push("dropout", Dropout::new(0.5, config.seed ^ 0xD80F));
        }
        head.push("gap", GlobalAvgPool::new());
        head.push("dense", Conv2d::new(channels, config.num_classes, 1, 1, 0, true, rng));
        Self { config, backbone, attention, head, feature_channels: channels }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_channels(&self) -> usize {
        self.feature_channels
    }

    pub fn has_attention(&self) -> bool {
        self.attention.is_some()
    }

    /// Spatial size of the feature maps for the configured input.
    pub fn feature_size(&self) -> usize {
        self.config.input_size / 32
    }

    /// Forward pass keeping the feature maps; gradients can then be pulled
    /// back to them with [`Self::cam_backward`].
    pub fn cam_forward(&mut self, x: &Tensor<F>, mode: Mode) -> (Tensor<F>, Tensor<F>) {
        let features = self.backbone.forward(x, mode);
        let logits = self.head_logits(&features, mode);
        (features, logits)
    }

    /// Logits computed from given feature maps (attention and head only).
    pub fn head_logits(&mut self, features: &Tensor<F>, mode: Mode) -> Tensor<F> {
        match &mut self.attention {
            Some(a) => {
                let attended = a.forward(features, mode);
                self.head.forward(&attended, mode)
            }
            None => self.head.forward(features, mode),
        }
    }

    /// Gradient of a logit-space signal with respect to the feature maps of
    /// the last [`Self::cam_forward`]. Parameter gradients accumulate as a
    /// side effect.
    pub fn cam_backward(&mut self, grad_logits: &Tensor<F>) -> Tensor<F> {
        let g = self.head.backward(grad_logits);
        match &mut self.attention {
            Some(a) => a.backward(&g),
            None => g,
        }
    }

    pub fn output(&mut self, x: &Tensor<F>) -> ClassifierOutput<F> {
        let (feature_maps, logits) = self.cam_forward(x, Mode::Eval);
        let probs = softmax_rows(&logits).into_iter().map(|r| r.iter().map(|v| v.to_f64().unwrap()).collect()).collect();
        let s = logits.shape();
        let logits = (0..s.n).map(|n| (0..s.c).map(|c| logits.data()[c * s.n + n].to_f64().unwrap()).collect()).collect();
        ClassifierOutput { probs, logits, feature_maps }
    }

    /// Class probabilities for a batch of encoded images.
    pub fn predict_images(&mut self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.check_input(images)?;
        Ok(self.output(&image_batch(images)?).probs)
    }

    pub fn check_input(&self, images: &[&Image]) -> Result<()> {
        let n = self.config.input_size;
        match images.iter().find(|i| i.height != n || i.width != n || i.channels != 3) {
            Some(i) => Err(Error::Shape(format!(
                "model expects {n}x{n}x3 inputs, got {}x{}x{}",
                i.height, i.width, i.channels
            ))),
            None => Ok(()),
        }
    }
}

impl<F: Real> Layer<F> for ClassifierModel<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        self.cam_forward(x, mode).1
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let g = self.cam_backward(grad_out);
        self.backbone.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.backbone.visit_params(&join_name(prefix, "backbone"), f);
        if let Some(a) = &mut self.attention {
            a.visit_params(&join_name(prefix, "attention"), f);
        }
        self.head.visit_params(&join_name(prefix, "head"), f);
    }

    fn reseed(&mut self, seed: u64) {
        self.backbone.reseed(seed);
        self.head.reseed(seed ^ 0x5EED);
    }
}

/// Builds a VGG-style, residual or encoder classifier with He-normal weights.
pub fn build_classifier<F: Real>(config: &ModelConfig) -> Result<ClassifierModel<F>> {
    config.validate()?;
    let mut rng = config.rng();
    let mut model = match config.backbone {
        Backbone::VggStyle => {
            let (net, c) = vgg16(config.scale, &mut rng);
            ClassifierModel::assemble(config.clone(), net, c, false, &mut rng)
        }
        Backbone::Residual => {
            let (net, c) = residual50(config.scale, &mut rng);
            ClassifierModel::assemble(config.clone(), net, c, false, &mut rng)
        }
        Backbone::EncoderClassifier => return build_encoder_classifier(config, None),
        Backbone::Segmenter => return Err(Error::Config("segmenter is not a classifier backbone".into())),
    };
    if config.frozen_layers > 0 {
        freeze_first_weighted(&mut model, "backbone.", config.frozen_layers)?;
    }
    Ok(model)
}

fn conv_block<F: Real>(channels: usize, rng: &mut ChaCha8Rng) -> Sequential<F> {
    Sequential::new()
        .with("conv", Conv2d::same(channels, channels, 3, false, rng))
        .with("bn", BatchNorm2d::new(channels))
        .with("relu", Relu::new())
}

/// Classifier on top of the segmenter's contracting path.
///
/// With `segmenter_weights`, every `encoder.*` entry is copied into the
/// classifier; a missing entry or a shape mismatch is a transfer error. The
/// first `config.frozen_layers` encoder layers are then frozen.
pub fn build_encoder_classifier<F: Real>(
    config: &ModelConfig,
    segmenter_weights: Option<&WeightSet>,
) -> Result<ClassifierModel<F>> {
    if config.backbone != Backbone::EncoderClassifier {
        return Err(Error::Config(format!("expected encoder_classifier backbone, got {}", config.backbone)));
    }
    config.validate()?;
    let mut rng = config.rng();
    let encoder = UNetEncoder::new(config.scale, &mut rng);
    let bottom = encoder.widths()[4];
    let mut net = Sequential::new().with("encoder", encoder);
    net.push("block1", conv_block(bottom, &mut rng));
    net.push("block2", conv_block(bottom, &mut rng));
    let mut model = ClassifierModel::assemble(config.clone(), net, bottom, true, &mut rng);
    if let Some(weights) = segmenter_weights {
        transfer_encoder(&mut model, weights)?;
    }
    freeze_first_weighted(&mut model, "backbone.encoder.", config.frozen_layers)?;
    Ok(model)
}

fn transfer_encoder<F: Real>(model: &mut ClassifierModel<F>, weights: &WeightSet) -> Result<()> {
    let mut problem: Option<String> = None;
    let mut copied = 0;
    model.backbone.visit_params("", &mut |name, p| {
        if problem.is_some() || !name.starts_with("encoder.") {
            return;
        }
        match weights.entries.get(name) {
            None => problem = Some(format!("segmenter has no `{name}`")),
            Some(e) if e.dims != p.dims => {
                problem = Some(format!("`{name}` is {:?} in the segmenter but {:?} here", e.dims, p.dims))
            }
            Some(e) => {
                for (dst, &src) in p.value.iter_mut().zip(&e.values) {
                    *dst = F::lit(src as f64);
                }
                copied += 1;
            }
        }
    });
    match problem {
        Some(p) => Err(Error::Transfer(p)),
        None if copied == 0 => Err(Error::Transfer("no encoder parameters found".into())),
        None => Ok(()),
    }
}

/// Per-pixel leg segmentation network.
pub struct SegmenterModel<F: Real> {
    config: ModelConfig,
    net: UNet<F>,
}

impl<F: Real> SegmenterModel<F> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn widths(&self) -> [usize; 5] {
        self.net.encoder.widths()
    }

    /// Per-pixel foreground probabilities, shape `(1, n, h, w)`.
    pub fn probabilities(&mut self, x: &Tensor<F>) -> Tensor<F> {
        self.net.forward(x, Mode::Eval).map(wmd_nn::sigmoid)
    }

    /// Probability maps for a batch of encoded images, as single-channel images.
    pub fn predict_images(&mut self, images: &[&Image]) -> Result<Vec<Image>> {
        let n = self.config.input_size;
        if let Some(i) = images.iter().find(|i| i.height != n || i.width != n) {
            return Err(Error::Shape(format!("segmenter expects {n}x{n} inputs, got {}x{}", i.height, i.width)));
        }
        let p = self.probabilities(&image_batch(images)?);
        (0..images.len())
            .map(|k| Image::from_vec(n, n, 1, p.plane(0, k).iter().map(|v| v.to_f64().unwrap() as f32).collect()))
            .collect()
    }
}

impl<F: Real> Layer<F> for SegmenterModel<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        self.net.forward(x, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        self.net.backward(grad_out)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        self.net.visit_params(prefix, f);
    }
}

pub fn build_segmenter<F: Real>(config: &ModelConfig) -> Result<SegmenterModel<F>> {
    if config.backbone != Backbone::Segmenter {
        return Err(Error::Config(format!("expected segmenter backbone, got {}", config.backbone)));
    }
    config.validate()?;
    let mut rng = config.rng();
    let mut model = SegmenterModel { config: config.clone(), net: UNet::new(config.scale, &mut rng) };
    if config.frozen_layers > 0 {
        freeze_first_weighted(&mut model, "encoder.", config.frozen_layers)?;
    }
    Ok(model)
}

/// Snapshot of parameter values by name, for before/after comparisons.
pub fn param_values<F: Real>(model: &mut dyn Layer<F>) -> BTreeMap<String, Vec<F>> {
    let mut out = BTreeMap::new();
    model.visit_params("", &mut |name, p| {
        out.insert(name.to_string(), p.value.clone());
    });
    out
}
