use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmd_nn::gradcheck::{check_gradients, GradCheckConfig};
use wmd_nn::{
    bce_with_logits, softmax_cross_entropy, BatchNorm2d, Conv2d, ConvTranspose2d, Dropout, GlobalAvgPool, Layer,
    MaxPool2d, Mode, Relu, Sequential, Shape, Sigmoid, Tanh, Tensor,
};

fn random_input(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Checks parameter gradients plus the input gradient of a classifier-style stack.
fn audit(mut net: Sequential<f64>, input: Tensor<f64>) {
    let targets: Vec<usize> = (0..input.shape().n).map(|i| i % 3).collect();
    let report = check_gradients(
        &mut net,
        |m, f| m.visit_params("", f),
        |m, backward| {
            m.reseed(11);
            let logits = m.forward(&input, Mode::Train);
            let (loss, grad) = softmax_cross_entropy(&logits, &targets);
            if backward {
                m.backward(&grad);
            }
            loss
        },
        GradCheckConfig { samples_per_param: 6, ..Default::default() },
    );
    assert!(report.passed(), "{:?}", report.mismatches);
    assert!(report.entries_checked > 0);

    // input gradient by finite differences on a few coordinates
    net.reseed(11);
    let logits = net.forward(&input, Mode::Train);
    let (_, grad) = softmax_cross_entropy(&logits, &targets);
    let dx = net.backward(&grad);
    for i in [0, input.len() / 2, input.len() - 1] {
        let h = 1e-5;
        let mut eval = |delta: f64| {
            let mut x = input.clone();
            x.data_mut()[i] += delta;
            net.reseed(11);
            let l = net.forward(&x, Mode::Train);
            softmax_cross_entropy(&l, &targets).0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let a = dx.data()[i];
        assert!((a - numeric).abs() <= 1e-3 * a.abs().max(numeric.abs()) + 1e-8, "input grad {i}: {a} vs {numeric}");
    }
}

#[test]
fn conv_bn_relu_pool_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Sequential::new()
        .with("conv1", Conv2d::new(2, 4, 3, 2, 1, false, &mut rng))
        .with("bn1", BatchNorm2d::new(4))
        .with("relu1", Relu::new())
        .with("pool", MaxPool2d::new(3, 2, 1))
        .with("conv2", Conv2d::same(4, 3, 3, true, &mut rng))
        .with("tanh", Tanh::new())
        .with("gap", GlobalAvgPool::new());
    audit(net, random_input(Shape::new(2, 3, 9, 8), 2));
}

#[test]
fn pointwise_and_transposed_convs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Sequential::new()
        .with("pw", Conv2d::new(3, 5, 1, 1, 0, true, &mut rng))
        .with("sig", Sigmoid::new())
        .with("up", ConvTranspose2d::new(5, 4, 2, &mut rng))
        .with("drop", Dropout::new(0.3, 4))
        .with("down", Conv2d::new(4, 3, 1, 2, 0, true, &mut rng))
        .with("gap", GlobalAvgPool::new());
    audit(net, random_input(Shape::new(3, 2, 3, 4), 7));
}

#[test]
fn eval_mode_batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Sequential::new()
        .with("conv", Conv2d::same(2, 3, 3, false, &mut rng))
        .with("bn", BatchNorm2d::new(3))
        .with("gap", GlobalAvgPool::new());
    let x = random_input(Shape::new(2, 2, 4, 4), 3);
    net.forward(&x, Mode::Train);
    let report = check_gradients(
        &mut net,
        |m, f| m.visit_params("", f),
        |m, backward| {
            let logits = m.forward(&x, Mode::Eval);
            let (loss, g) = softmax_cross_entropy(&logits, &[0, 2]);
            if backward {
                m.backward(&g);
            }
            loss
        },
        GradCheckConfig::default(),
    );
    assert!(report.passed(), "{:?}", report.mismatches);
}

#[test]
fn bce_gradient_through_segmentation_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = Sequential::new().with("conv", Conv2d::same(2, 1, 3, true, &mut rng));
    let x = random_input(Shape::new(2, 2, 5, 5), 4);
    let target = Tensor::from_vec(Shape::new(1, 2, 5, 5), (0..50).map(|i| f64::from(u8::from(i % 3 == 0))).collect());
    let report = check_gradients(
        &mut net,
        |m, f| m.visit_params("", f),
        |m, backward| {
            let z = m.forward(&x, Mode::Train);
            let (loss, g) = bce_with_logits(&z, &target);
            if backward {
                m.backward(&g);
            }
            loss
        },
        GradCheckConfig { samples_per_param: 20, ..Default::default() },
    );
    assert!(report.passed(), "{:?}", report.mismatches);
}
