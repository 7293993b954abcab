use rand::Rng;

use crate::init::he_normal;
use crate::layer::{join_name, Layer, Mode, Param, ParamVisitor};
use crate::real::{gemm, Real};
use crate::tensor::{Shape, Tensor};

/// 2-D convolution with square kernels, zero padding and optional bias.
///
/// Weights are stored as an `out_c × (in_c·k·k)` matrix.
pub struct Conv2d<F: Real> {
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    offset: usize,
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    input_grad: bool,
    input: Option<Tensor<F>>,
}

impl<F: Real> Conv2d<F> {
    pub fn new<R: Rng + ?Sized>(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(in_c > 0 && out_c > 0 && k > 0 && stride > 0);
        let fan_in = in_c * k * k;
        let weight = Param::new(he_normal(out_c * fan_in, fan_in, rng), vec![out_c, in_c, k, k]);
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            offset: 0,
            weight,
            bias: bias.then(|| Param::zeros(vec![out_c])),
            input_grad: true,
            input: None,
        }
    }

    /// "Same" padded `k×k` convolution with stride 1.
    pub fn same<R: Rng + ?Sized>(in_c: usize, out_c: usize, k: usize, bias: bool, rng: &mut R) -> Self {
        Self::new(in_c, out_c, k, 1, k / 2, bias, rng)
    }

    /// Moves every sampling position `offset` pixels down and right, so a
    /// stride-2 layer reads odd rows and columns instead of even ones.
    pub fn with_offset(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    /// Skips the input-gradient computation; for layers fed directly by data.
    pub fn without_input_grad(mut self) -> Self {
        self.input_grad = false;
        self
    }

    pub fn in_channels(&self) -> usize {
        self.in_c
    }

    pub fn out_channels(&self) -> usize {
        self.out_c
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.weight.trainable = trainable;
        if let Some(b) = &mut self.bias {
            b.trainable = trainable;
        }
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.pad - self.k) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.k) / self.stride + 1;
        (ho, wo)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0 && self.offset == 0
    }

    fn im2col(&self, x: &Tensor<F>, ho: usize, wo: usize) -> Vec<F> {
        let s = x.shape();
        let (k, st, pad) = (self.k, self.stride, self.pad as isize - self.offset as isize);
        let row_len = s.n * ho * wo;
        let mut cols = vec![F::zero(); s.c * k * k * row_len];
        for c in 0..s.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * row_len..(row + 1) * row_len];
                    for n in 0..s.n {
                        let plane = x.plane(c, n);
                        for oy in 0..ho {
                            let iy = (oy * st + ki) as isize - pad;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            let src_row = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                            let base = (n * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (ox * st + kj) as isize - pad;
                                if ix >= 0 && ix < s.w as isize {
                                    dst[base + ox] = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[F], shape: Shape, ho: usize, wo: usize) -> Tensor<F> {
        let (k, st, pad) = (self.k, self.stride, self.pad as isize - self.offset as isize);
        let row_len = shape.n * ho * wo;
        let mut dx = Tensor::zeros(shape);
        let p = shape.plane();
        let data = dx.data_mut();
        for c in 0..shape.c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * row_len..(row + 1) * row_len];
                    for n in 0..shape.n {
                        let plane_off = (c * shape.n + n) * p;
                        for oy in 0..ho {
                            let iy = (oy * st + ki) as isize - pad;
                            if iy < 0 || iy >= shape.h as isize {
                                continue;
                            }
                            let row_off = plane_off + iy as usize * shape.w;
                            let base = (n * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = (ox * st + kj) as isize - pad;
                                if ix >= 0 && ix < shape.w as isize {
                                    data[row_off + ix as usize] += src[base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<F: Real> Layer<F> for Conv2d<F> {
    fn forward(&mut self, x: &Tensor<F>, _mode: Mode) -> Tensor<F> {
        let s = x.shape();
        assert_eq!(s.c, self.in_c, "conv expects {} input channels, got {s}", self.in_c);
        let (ho, wo) = self.output_dims(s.h, s.w);
        let out_shape = Shape::new(self.out_c, s.n, ho, wo);
        let mut out = Tensor::zeros(out_shape);
        let kk = self.in_c * self.k * self.k;
        let cols_owned;
        let cols: &[F] = if self.is_pointwise() {
            x.data()
        } else {
            cols_owned = self.im2col(x, ho, wo);
            &cols_owned
        };
        gemm(false, false, self.out_c, out_shape.channel_len(), kk, F::one(), &self.weight.value, cols, F::zero(), out.data_mut());
        if let Some(b) = &self.bias {
            for o in 0..self.out_c {
                let bo = b.value[o];
                out.channel_mut(o).iter_mut().for_each(|v| *v += bo);
            }
        }
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let x = self.input.as_ref().expect("conv backward before forward");
        let s = x.shape();
        let g = grad_out.shape();
        let (ho, wo) = (g.h, g.w);
        let kk = self.in_c * self.k * self.k;
        let nhw = g.channel_len();
        let cols_owned;
        let cols: &[F] = if self.is_pointwise() {
            x.data()
        } else {
            cols_owned = self.im2col(x, ho, wo);
            &cols_owned
        };
        gemm(false, true, self.out_c, kk, nhw, F::one(), grad_out.data(), cols, F::one(), &mut self.weight.grad);
        if let Some(b) = &mut self.bias {
            for o in 0..self.out_c {
                b.grad[o] += grad_out.channel(o).iter().copied().sum::<F>();
            }
        }
        if !self.input_grad {
            return Tensor::zeros(s);
        }
        let mut dcols = vec![F::zero(); kk * nhw];
        gemm(true, false, kk, nhw, self.out_c, F::one(), &self.weight.value, grad_out.data(), F::zero(), &mut dcols);
        if self.is_pointwise() {
            Tensor::from_vec(s, dcols)
        } else {
            self.col2im(&dcols, s, ho, wo)
        }
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join_name(prefix, "bias"), b);
        }
    }
}

/// Transposed convolution whose kernel equals its stride (non-overlapping
/// up-sampling, e.g. the 2×2 "up-conv" of an encoder–decoder).
pub struct ConvTranspose2d<F: Real> {
    in_c: usize,
    out_c: usize,
    k: usize,
    /// `in_c × (out_c·k·k)`.
    pub weight: Param<F>,
    pub bias: Param<F>,
    input: Option<Tensor<F>>,
}

impl<F: Real> ConvTranspose2d<F> {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, k: usize, rng: &mut R) -> Self {
        let fan_in = in_c * k * k;
        Self {
            in_c,
            out_c,
            k,
            weight: Param::new(he_normal(in_c * out_c * k * k, fan_in, rng), vec![in_c, out_c, k, k]),
            bias: Param::zeros(vec![out_c]),
            input: None,
        }
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.weight.trainable = trainable;
        self.bias.trainable = trainable;
    }
}

impl<F: Real> Layer<F> for ConvTranspose2d<F> {
    fn forward(&mut self, x: &Tensor<F>, _mode: Mode) -> Tensor<F> {
        let s = x.shape();
        assert_eq!(s.c, self.in_c, "transposed conv expects {} channels, got {s}", self.in_c);
        let k = self.k;
        let okk = self.out_c * k * k;
        let nhw = s.channel_len();
        let mut cols = vec![F::zero(); okk * nhw];
        gemm(true, false, okk, nhw, self.in_c, F::one(), &self.weight.value, x.data(), F::zero(), &mut cols);
        let out_shape = Shape::new(self.out_c, s.n, s.h * k, s.w * k);
        let mut out = Tensor::zeros(out_shape);
        let data = out.data_mut();
        for o in 0..self.out_c {
            let bo = self.bias.value[o];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((o * k + ki) * k + kj) * nhw..][..nhw];
                    for n in 0..s.n {
                        for y in 0..s.h {
                            for xx in 0..s.w {
                                let v = row[(n * s.h + y) * s.w + xx];
                                data[out_shape.index(o, n, y * k + ki, xx * k + kj)] = v + bo;
                            }
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<F>) -> Tensor<F> {
        let x = self.input.as_ref().expect("transposed conv backward before forward");
        let s = x.shape();
        let gs = grad_out.shape();
        let k = self.k;
        let okk = self.out_c * k * k;
        let nhw = s.channel_len();
        let mut gcols = vec![F::zero(); okk * nhw];
        for o in 0..self.out_c {
            let mut bsum = F::zero();
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut gcols[((o * k + ki) * k + kj) * nhw..][..nhw];
                    for n in 0..s.n {
                        for y in 0..s.h {
                            for xx in 0..s.w {
                                let v = grad_out.data()[gs.index(o, n, y * k + ki, xx * k + kj)];
                                row[(n * s.h + y) * s.w + xx] = v;
                                bsum += v;
                            }
                        }
                    }
                }
            }
            self.bias.grad[o] += bsum;
        }
        gemm(false, true, self.in_c, okk, nhw, F::one(), x.data(), &gcols, F::one(), &mut self.weight.grad);
        let mut dx = Tensor::zeros(s);
        gemm(false, false, self.in_c, nhw, okk, F::one(), &self.weight.value, &gcols, F::zero(), dx.data_mut());
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, F>) {
        f(&join_name(prefix, "weight"), &mut self.weight);
        f(&join_name(prefix, "bias"), &mut self.bias);
    }
}
