use crate::layer::{Layer, Mode};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Max pooling with `-inf` padding.
pub struct MaxPool2d {
    k: usize,
    stride: usize,
    pad: usize,
    argmax: Vec<usize>,
    in_shape: Option<Shape>,
}

impl MaxPool2d {
    pub fn new(k: usize, stride: usize, pad: usize) -> Self {
        Self { k, stride, pad, argmax: Vec::new(), in_shape: None }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }
}

impl<F: Real> Layer<F> for MaxPool2d {
    fn forward(&mut self, x: &Tensor<F>, _mode: Mode) -> Tensor<F> {
        let s = x.shape();
        let (ho, wo) = self.output_dims(s.h, s.w);
        let os = Shape::new(s.c, s.n, ho, wo);
        let mut out = Tensor::zeros(os);
        self.argmax = vec![0; os.len()];
        let pad = self.pad as isize;
        let data = x.data();
        for c in 0..s.c {
            for n in 0..s.n {
                let base = (c * s.n + n) * s.plane();
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = F::neg_infinity();
                        let mut best_i = usize::MAX;
                        for ki in 0..self.k {
                            let iy = (oy * self.stride + ki) as isize - pad;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            for kj in 0..self.k {
                                let ix = (ox * self.stride + kj) as isize - pad;
                                if ix < 0 || ix >= s.w as isize {
                                    continue;
                                }
                                let idx = base + iy as usize * s.w + ix as usize;
                                if data[idx] > best || best_i == usize::MAX {
                                    best = data[idx];
                                    best_i = idx;
                                }
                            }
                        }
                        let o = os.index(c, n, oy, ox);
                        out.data_mut()[o] = best;
                        self.argmax[o] = best_i;
                    }
                }
            }
        }
        self.in_shape = Some(s);
        out
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let s = self.in_shape.expect("max pool backward before forward");
        let mut dx = Tensor::zeros(s);
        let d = dx.data_mut();
        for (&i, &g) in self.argmax.iter().zip(grad_out.data()) {
            d[i] += g;
        }
        dx
    }
}

/// Spatial mean per channel, producing `(c, n, 1, 1)`.
#[derive(Default)]
pub struct GlobalAvgPool {
    in_shape: Option<Shape>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { in_shape: None }
    }
}

impl<F: Real> Layer<F> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<F>, _mode: Mode) -> Tensor<F> {
        let s = x.shape();
        let inv = F::one() / F::from_usize(s.plane()).unwrap();
        let mut out = Tensor::zeros(Shape::new(s.c, s.n, 1, 1));
        for c in 0..s.c {
            for n in 0..s.n {
                out.data_mut()[c * s.n + n] = x.plane(c, n).iter().copied().sum::<F>() * inv;
            }
        }
        self.in_shape = Some(s);
        out
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let s = self.in_shape.expect("global pool backward before forward");
        let inv = F::one() / F::from_usize(s.plane()).unwrap();
        let mut dx = Tensor::zeros(s);
        let p = s.plane();
        for c in 0..s.c {
            for n in 0..s.n {
                let g = grad_out.data()[c * s.n + n] * inv;
                let start = (c * s.n + n) * p;
                dx.data_mut()[start..start + p].iter_mut().for_each(|v| *v = g);
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let mut pool = MaxPool2d::new(2, 2, 0);
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 4.0, 3.0, 2.0]);
        let y = pool.forward(&x, Mode::Train);
        assert_eq!(y.data(), &[4.0]);
        let g = pool.backward(&Tensor::from_vec(y.shape(), vec![1.5]));
        assert_eq!(g.data(), &[0.0, 1.5, 0.0, 0.0]);
    }

    #[test]
    fn padded_pool_dims_follow_reference_stem() {
        let pool = MaxPool2d::new(3, 2, 1);
        assert_eq!(pool.output_dims(112, 112), (56, 56));
        assert_eq!(pool.output_dims(48, 48), (24, 24));
    }
}
