use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct SoftmaxOutput {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    pub probs: Tensor4,
    /// `(probs - onehot) / n`.
    pub grad_logits: Tensor4,
}

/// Row-wise softmax with max subtraction; rows are the `c` channels of each sample.
pub fn softmax(logits: &Tensor4) -> Tensor4 {
    let classes = logits.dims().sample_len();
    let mut probs = logits.clone();
    for row in probs.data_mut().chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    probs
}

/// Softmax cross-entropy on `(n, C, 1, 1)` logits.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<SoftmaxOutput> {
    let d = logits.dims();
    if d.h != 1 || d.w != 1 {
        return Err(Error::InvalidShape(format!("logits must be (n,C,1,1), got {d}")));
    }
    if labels.len() != d.n {
        return Err(Error::InvalidShape(format!("{} labels for batch of {}", labels.len(), d.n)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= d.c) {
        return Err(Error::InvalidLabel { label: bad, classes: d.c });
    }
    let classes = d.c;
    let n = d.n as f64;
    let probs = softmax(logits);
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        // log-sum-exp form keeps the loss finite even when the probability underflows.
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        let grow = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        grow[label] -= 1.0;
        for g in grow.iter_mut() {
            *g /= n;
        }
    }
    Ok(SoftmaxOutput { loss: loss / n, probs, grad_logits: grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(n: usize, c: usize, v: Vec<f64>) -> Tensor4 {
        Tensor4::from_vec((n, c, 1, 1), v).unwrap()
    }

    #[test]
    fn uniform_twenty_way() {
        let out = softmax_cross_entropy(&logits(1, 20, vec![0.3; 20]), &[7]).unwrap();
        assert!((out.loss - 20f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.995732).abs() < 1e-6);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let out = softmax_cross_entropy(&logits(1, 2, vec![1000.0, 1000.0]), &[1]).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
        assert!(out.probs.data().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn two_class_by_hand() {
        let out = softmax_cross_entropy(&logits(1, 2, vec![2.0, 0.0]), &[0]).unwrap();
        assert!((out.probs.data()[0] - 0.8807970779778824).abs() < 1e-12);
        assert!((out.probs.data()[1] - 0.11920292202211757).abs() < 1e-12);
        assert!((out.loss - 0.12692801104297252).abs() < 1e-12);
        assert!((out.grad_logits.data()[0] - (0.8807970779778824 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let r = softmax_cross_entropy(&logits(1, 3, vec![0.0; 3]), &[3]);
        assert!(matches!(r, Err(Error::InvalidLabel { label: 3, classes: 3 })));
    }

    proptest! {
        #[test]
        fn rows_normalized(v in proptest::collection::vec(-50f64..50.0, 12), l0 in 0usize..4, l1 in 0usize..4, l2 in 0usize..4) {
            let out = softmax_cross_entropy(&logits(3, 4, v), &[l0, l1, l2]).unwrap();
            for row in out.probs.data().chunks(4) {
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for row in out.grad_logits.data().chunks(4) {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
            }
            prop_assert!(out.loss >= 0.0);
        }
    }
}
