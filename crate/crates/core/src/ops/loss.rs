//! Classification losses over logits, each returning the batch-mean loss
//! together with the gradient w.r.t. the logits.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_labels<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    let classes = logits.sample_len();
    if logits.n() != labels.len() {
        return Err(Error::Shape {
            op: "loss",
            detail: format!("{} logit rows but {} labels", logits.n(), labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(classes)
}

/// Max-subtracted softmax of one logit row.
fn softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    let m = row.iter().fold(row[0], |a, &b| if b > a { b } else { a });
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(row.iter()) {
        let e = (v - m).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// Log-sum-exp of one row with max subtraction.
fn lse_row<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().fold(row[0], |a, &b| if b > a { b } else { a });
    let mut sum = T::zero();
    for &v in row {
        sum += (v - m).exp();
    }
    m + sum.ln()
}

/// Mean over the batch of `-log softmax(logits)[label]`.
/// Gradient: `(softmax - onehot) / batch`.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let classes = check_labels(logits, labels)?;
    let n = logits.n();
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = Tensor::zeros(logits.dims());
    let mut loss = T::zero();
    let mut probs = vec![T::zero(); classes];
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        loss += lse_row(row) - row[label];
        softmax_row(row, &mut probs);
        let g = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        for (dst, &p) in g.iter_mut().zip(probs.iter()) {
            *dst = p * inv_n;
        }
        g[label] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// `KL(onehot || softmax(logits))`, evaluated literally as
/// `sum_c p_c (ln p_c - ln q_c)` with `0 ln 0 = 0`. With one-hot targets the
/// target entropy vanishes, so the value coincides with cross-entropy.
pub fn kl_divergence_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let classes = check_labels(logits, labels)?;
    let n = logits.n();
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = Tensor::zeros(logits.dims());
    let mut loss = T::zero();
    let mut probs = vec![T::zero(); classes];
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let lse = lse_row(row);
        softmax_row(row, &mut probs);
        for c in 0..classes {
            let p = if c == label { T::one() } else { T::zero() };
            if p > T::zero() {
                // ln q_c computed in stabilized form: logit - lse
                let ln_q = row[c] - lse;
                loss += p * (p.ln() - ln_q);
            }
        }
        // d/dlogits of sum_c -p_c ln q_c  =  q - p
        let g = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        for (dst, &q) in g.iter_mut().zip(probs.iter()) {
            *dst = q * inv_n;
        }
        g[label] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_two_logits_give_ln_two() {
        let logits = Tensor::from_vec([1, 2, 1, 1], vec![0.0f64, 0.0]).unwrap();
        let (loss, _) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
        let (kl, _) = kl_divergence_loss(&logits, &[1]).unwrap();
        assert!((kl - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn huge_margin_is_stable() {
        let logits = Tensor::from_vec([1, 2, 1, 1], vec![1000.0f64, 0.0]).unwrap();
        let (loss, grad) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!(loss < 1e-6);
        assert!(loss.is_finite());
        assert!(grad.all_finite());
    }

    #[test]
    fn kl_equals_cross_entropy_for_onehot() {
        let mut rng = crate::test_rng(21);
        for _ in 0..100 {
            let logits = Tensor::<f64>::random_uniform([3, 5, 1, 1], 4.0, &mut rng);
            let labels = [0usize, 3, 4];
            let (ce, gce) = cross_entropy_loss(&logits, &labels).unwrap();
            let (kl, gkl) = kl_divergence_loss(&logits, &labels).unwrap();
            assert!((ce - kl).abs() < 1e-9, "ce {ce} vs kl {kl}");
            for (a, b) in gce.data().iter().zip(gkl.data().iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_logits_drive_kl_to_zero() {
        let logits = Tensor::from_vec([1, 3, 1, 1], vec![50.0f64, 0.0, 0.0]).unwrap();
        let (kl, _) = kl_divergence_loss(&logits, &[0]).unwrap();
        assert!(kl < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = crate::test_rng(22);
        let logits = Tensor::<f32>::random_uniform([4, 6, 1, 1], 3.0, &mut rng);
        let (_, grad) = cross_entropy_loss(&logits, &[5, 0, 2, 1]).unwrap();
        for i in 0..4 {
            let s: f32 = grad.data()[i * 6..(i + 1) * 6].iter().sum();
            assert!(s.abs() < 1e-6, "row {i} sums to {s}");
        }
    }

    #[test]
    fn out_of_range_label_is_input_error() {
        let logits = Tensor::<f32>::zeros([1, 3, 1, 1]);
        assert!(matches!(
            cross_entropy_loss(&logits, &[3]),
            Err(Error::Input(_))
        ));
    }
}
