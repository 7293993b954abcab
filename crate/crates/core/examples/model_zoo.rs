//! Builds every network at a reduced width, prints parameter counts and
//! feature-map shapes, shows the channel-attention weights on one input and
//! round-trips a checkpoint.
//!
//! ```text
//! cargo run --release --example model_zoo
//! ```

use std::error::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmd::models::{
    build_classifier, build_segmenter, load_checkpoint, save_checkpoint, weighted_layers, Backbone, Checkpoint,
    CheckpointManifest, ModelConfig,
};
use wmd_nn::{Layer, Shape, Tensor};

fn param_count(model: &mut dyn Layer<f32>) -> usize {
    let mut n = 0;
    model.visit_params("", &mut |_, p| n += p.value.len());
    n
}

fn main() -> Result<(), Box<dyn Error>> {
    let (scale, input) = (0.25, 96);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = Shape::new(3, 2, input, input);
    let x = Tensor::from_vec(s, (0..s.len()).map(|_| rng.gen_range(0.0..1.0f32)).collect());

    for backbone in [Backbone::VggStyle, Backbone::Residual, Backbone::EncoderClassifier] {
        for attention in [false, true] {
            let cfg = ModelConfig { attention, scale, input_size: input, ..ModelConfig::new(backbone) };
            let mut model = build_classifier::<f32>(&cfg)?;
            let out = model.output(&x);
            let fm = out.feature_maps.shape();
            println!(
                "{backbone:>18}{}: {:8} parameters, {:3} weighted layers, maps {}x{}x{}, p = {:?}",
                if attention { " + attention" } else { "            " },
                param_count(&mut model),
                weighted_layers(&mut model, "").len(),
                fm.c,
                fm.h,
                fm.w,
                out.probs[0].iter().map(|p| (p * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }

    let seg_cfg = ModelConfig { scale, input_size: input, ..ModelConfig::new(Backbone::Segmenter) };
    let mut seg = build_segmenter::<f32>(&seg_cfg)?;
    let p = seg.probabilities(&x);
    println!("{:>18}: {:8} parameters, widths {:?}, output {:?}", "segmenter", param_count(&mut seg), seg.widths(), p.shape());

    let cfg = ModelConfig { attention: true, scale, input_size: input, ..ModelConfig::new(Backbone::Residual) };
    let mut model = build_classifier::<f32>(&cfg)?;
    let before = model.output(&x).probs;
    let path = std::env::temp_dir().join("wmd_model_zoo.ckpt");
    save_checkpoint(&path, &Checkpoint::from_model(&mut model, CheckpointManifest::new(&cfg)))?;
    let ckpt = load_checkpoint(&path)?;
    let mut restored = build_classifier::<f32>(&ModelConfig { seed: 42, ..ckpt.manifest.config.clone() })?;
    wmd::models::apply_weights(&mut restored, &ckpt.weights);
    println!("checkpoint: {} tensors, same predictions after reload: {}", ckpt.weights.len(), restored.output(&x).probs == before);
    std::fs::remove_file(&path)?;
    Ok(())
}
