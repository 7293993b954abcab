use crate::real::Real;

/// Dimensions of a 4-D activation.
///
/// Storage is channel-major: `(c, n, h, w)` with `w` fastest. Keeping the channel
/// outermost makes a convolution output land in place as one `out_c × (n·h·w)`
/// matrix and turns channel concatenation into a plain append.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w }
    }

    pub const fn len(&self) -> usize {
        self.c * self.n * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one channel across the whole batch.
    pub const fn channel_len(&self) -> usize {
        self.n * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn index(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.n + n) * self.h + y) * self.w + x
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[c={}, n={}, h={}, w={}]", self.c, self.n, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Shape,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![F::zero(); shape.len()] }
    }

    pub fn filled(shape: Shape, value: F) -> Self {
        Self { shape, data: vec![value; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<F>) -> Self {
        assert_eq!(shape.len(), data.len(), "tensor data does not match shape {shape}");
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, c: usize, n: usize, y: usize, x: usize) -> F {
        self.data[self.shape.index(c, n, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[F] {
        let len = self.shape.channel_len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [F] {
        let len = self.shape.channel_len();
        &mut self.data[c * len..(c + 1) * len]
    }

    /// One `h×w` plane of channel `c`, sample `n`.
    pub fn plane(&self, c: usize, n: usize) -> &[F] {
        let p = self.shape.plane();
        let start = (c * self.shape.n + n) * p;
        &self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self { shape: self.shape, data }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: F) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| G::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap()).collect(),
        }
    }

    /// Stacks channels of `a` followed by channels of `b`.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        let (sa, sb) = (a.shape, b.shape);
        assert!(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, "concat {sa} with {sb}");
        let mut data = Vec::with_capacity(a.len() + b.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Self { shape: Shape::new(sa.c + sb.c, sa.n, sa.h, sa.w), data }
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `k` channels and the rest.
    pub fn split_channels(&self, k: usize) -> (Self, Self) {
        let s = self.shape;
        assert!(k <= s.c);
        let cut = k * s.channel_len();
        (
            Self { shape: Shape::new(k, s.n, s.h, s.w), data: self.data[..cut].to_vec() },
            Self { shape: Shape::new(s.c - k, s.n, s.h, s.w), data: self.data[cut..].to_vec() },
        )
    }

    /// Selects a contiguous range of samples.
    pub fn batch_slice(&self, start: usize, count: usize) -> Self {
        let s = self.shape;
        assert!(start + count <= s.n);
        let p = s.plane();
        let mut data = Vec::with_capacity(s.c * count * p);
        for c in 0..s.c {
            let off = (c * s.n + start) * p;
            data.extend_from_slice(&self.data[off..off + count * p]);
        }
        Self { shape: Shape::new(s.c, count, s.h, s.w), data }
    }

    /// Gathers one sample as a `(c, 1, h, w)` tensor.
    pub fn sample(&self, n: usize) -> Self {
        self.batch_slice(n, 1)
    }

    /// Builds a batch from per-sample channel-interleaved (`h, w, c`) buffers.
    pub fn from_hwc_batch(samples: &[&[F]], c: usize, h: usize, w: usize) -> Self {
        let n = samples.len();
        let shape = Shape::new(c, n, h, w);
        let mut data = vec![F::zero(); shape.len()];
        for (ni, s) in samples.iter().enumerate() {
            assert_eq!(s.len(), h * w * c, "sample {ni} has wrong size");
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        data[shape.index(ch, ni, y, x)] = s[(y * w + x) * c + ch];
                    }
                }
            }
        }
        Self { shape, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::<f64>::from_vec(Shape::new(1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::<f64>::from_vec(Shape::new(2, 2, 1, 2), (0..8).map(f64::from).collect());
        let cat = Tensor::concat_channels(&a, &b);
        assert_eq!(cat.shape(), Shape::new(3, 2, 1, 2));
        let (x, y) = cat.split_channels(1);
        assert_eq!(x, a);
        assert_eq!(y, b);
    }

    #[test]
    fn batch_slice_picks_samples_in_every_channel() {
        let t = Tensor::<f64>::from_vec(Shape::new(2, 3, 1, 1), vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        let s = t.batch_slice(1, 2);
        assert_eq!(s.data(), &[1.0, 2.0, 11.0, 12.0]);
    }

    #[test]
    fn hwc_batch_is_transposed_into_channel_major() {
        let img: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 1x2 pixels, 3 channels
        let t = Tensor::from_hwc_batch(&[&img], 3, 1, 2);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
