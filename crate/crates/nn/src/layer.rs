use crate::real::Real;
use crate::tensor::Tensor;

/// Forward pass behaviour.
///
/// `Train` uses batch statistics and stochastic layers; `Eval` uses running
/// statistics and disables dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by gradient descent.
    Weight,
    /// Persistent state updated during forward passes (running statistics).
    Buffer,
}

/// A named block of values owned by a layer, together with its gradient.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub value: Vec<F>,
    pub grad: Vec<F>,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
    pub trainable: bool,
}

impl<F: Real> Param<F> {
    pub fn new(value: Vec<F>, dims: Vec<usize>) -> Self {
        debug_assert_eq!(value.len(), dims.iter().product::<usize>());
        let grad = vec![F::zero(); value.len()];
        Self { value, grad, dims, kind: ParamKind::Weight, trainable: true }
    }

    pub fn buffer(value: Vec<F>, dims: Vec<usize>) -> Self {
        Self { kind: ParamKind::Buffer, trainable: false, ..Self::new(value, dims) }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self::new(vec![F::zero(); len], dims)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::zero());
    }

    /// Whether an optimizer may change this parameter.
    pub fn is_updatable(&self) -> bool {
        self.kind == ParamKind::Weight && self.trainable
    }
}

/// Callback receiving `(qualified_name, param)` pairs in a fixed graph order.
pub type ParamVisitor<'a, F> = dyn FnMut(&str, &mut Param<F>) + 'a;

/// A differentiable graph node with cached activations.
///
/// `backward` must be called after the matching `forward`; it accumulates into
/// parameter gradients and returns the gradient with respect to the input.
pub trait Layer<F: Real>: Send {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F>;

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F>;

    fn visit_params(&mut self, _prefix: &str, _f: &mut ParamVisitor<'_, F>) {}

    /// Re-seeds any stochastic state (dropout masks).
    fn reseed(&mut self, _seed: u64) {}
}

pub fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Layers applied one after another, each under its own name.
#[derive(Default)]
pub struct Sequential<F: Real> {
    layers: Vec<(String, Box<dyn Layer<F>>)>,
}

impl<F: Real> Sequential<F> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: impl Layer<F> + 'static) -> &mut Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    pub fn with(mut self, name: impl Into<String>, layer: impl Layer<F> + 'static) -> Self {
        self.push(name, layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<F: Real> Layer<F> for Sequential<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let mut iter = self.layers.iter_mut();
        let Some((_, first)) = iter.next() else {
            return x.clone();
        };
        let mut out = first.forward(x, mode);
        for (_, layer) in iter {
            out = layer.forward(&out, mode);
        }
        out
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let mut iter = self.layers.iter_mut().rev();
        let Some((_, last)) = iter.next() else {
            return grad_out.clone();
        };
        let mut g = last.backward(grad_out);
        for (_, layer) in iter {
            g = layer.backward(&g);
        }
        g
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        for (name, layer) in &mut self.layers {
            layer.visit_params(&join_name(prefix, name), f);
        }
    }

    fn reseed(&mut self, seed: u64) {
        for (i, (_, layer)) in self.layers.iter_mut().enumerate() {
            layer.reseed(seed.wrapping_add(i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        }
    }
}

/// Sets every parameter gradient reachable from `layer` to zero.
pub fn zero_grads<F: Real>(layer: &mut dyn Layer<F>) {
    layer.visit_params("", &mut |_, p| p.zero_grad());
}

/// Number of learnable scalars.
pub fn count_weights<F: Real>(layer: &mut dyn Layer<F>) -> usize {
    let mut total = 0;
    layer.visit_params("", &mut |_, p| {
        if p.kind == ParamKind::Weight {
            total += p.len();
        }
    });
    total
}
