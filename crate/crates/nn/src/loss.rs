use crate::activation::sigmoid;
use crate::real::Real;
use crate::tensor::Tensor;

/// Row-wise softmax of `(classes, n, 1, 1)` logits, returned per sample.
pub fn softmax_rows<F: Real>(logits: &Tensor<F>) -> Vec<Vec<F>> {
    let s = logits.shape();
    assert_eq!(s.plane(), 1, "softmax expects pooled logits, got {s}");
    (0..s.n)
        .map(|n| {
            let row: Vec<F> = (0..s.c).map(|c| logits.data()[c * s.n + n]).collect();
            softmax(&row)
        })
        .collect()
}

pub fn softmax<F: Real>(row: &[F]) -> Vec<F> {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean categorical cross-entropy of softmax(logits) against integer targets.
///
/// Returns the loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy<F: Real>(logits: &Tensor<F>, targets: &[usize]) -> (F, Tensor<F>) {
    let s = logits.shape();
    assert_eq!(s.n, targets.len(), "one target per sample");
    let probs = softmax_rows(logits);
    let nf = F::from_usize(s.n).unwrap();
    let mut grad = Tensor::zeros(s);
    let mut loss = F::zero();
    for (n, (p, &t)) in probs.iter().zip(targets).enumerate() {
        assert!(t < s.c, "target {t} out of range");
        loss -= p[t].max(F::min_positive_value()).ln();
        for c in 0..s.c {
            let indicator = if c == t { F::one() } else { F::zero() };
            grad.data_mut()[c * s.n + n] = (p[c] - indicator) / nf;
        }
    }
    (loss / nf, grad)
}

/// Mean binary cross-entropy of sigmoid(logits) against `{0,1}` targets.
pub fn bce_with_logits<F: Real>(logits: &Tensor<F>, targets: &Tensor<F>) -> (F, Tensor<F>) {
    assert_eq!(logits.shape(), targets.shape(), "bce shape mismatch");
    let count = F::from_usize(logits.len()).unwrap();
    let mut loss = F::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for ((g, &z), &y) in grad.data_mut().iter_mut().zip(logits.data()).zip(targets.data()) {
        loss += z.max(F::zero()) - z * y + (F::one() + (-z.abs()).exp()).ln();
        *g = (sigmoid(z) - y) / count;
    }
    (loss / count, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::<f64>::zeros(Shape::new(4, 2, 1, 1));
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 3]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad.sum()).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_probability_form() {
        let z = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![-2.0, 0.3, 4.0]);
        let y = Tensor::from_vec(z.shape(), vec![0.0, 1.0, 1.0]);
        let (loss, _) = bce_with_logits(&z, &y);
        let direct: f64 = z
            .data()
            .iter()
            .zip(y.data())
            .map(|(&z, &y)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 3.0;
        assert!((loss - direct).abs() < 1e-12);
    }
}
