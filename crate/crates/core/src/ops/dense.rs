//! Fully connected head: per-sample affine map from flattened features to
//! class logits.

use crate::error::{Error, Result};
use crate::tensor::{DimsFmt, Scalar, Tensor};

fn check_dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    let features = input.sample_len();
    let (wf, classes) = (weights.n(), weights.c());
    if weights.h() != 1 || weights.w() != 1 {
        return Err(Error::Shape {
            op: "dense",
            detail: format!("weights must be (features, classes, 1, 1), got {}", DimsFmt(weights.dims())),
        });
    }
    if features != wf {
        return Err(Error::Shape {
            op: "dense",
            detail: format!("input features {features} do not match weight rows {wf}"),
        });
    }
    if bias.len() != classes {
        return Err(Error::Shape {
            op: "dense",
            detail: format!("bias length {} does not match classes {classes}", bias.len()),
        });
    }
    Ok((features, classes))
}

/// `logits = x @ W + b` with `x` flattened per sample.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (features, classes) = check_dense(input, weights, bias)?;
    let n = input.n();
    let mut out = Tensor::zeros([n, classes, 1, 1]);
    T::gemm(
        n,
        features,
        classes,
        T::one(),
        input.data(),
        features as isize,
        1,
        weights.data(),
        classes as isize,
        1,
        T::zero(),
        out.data_mut(),
        classes as isize,
        1,
    );
    for i in 0..n {
        for c in 0..classes {
            out.data_mut()[i * classes + c] += bias.data()[c];
        }
    }
    Ok(out)
}

pub struct DenseGrads<T> {
    pub dinput: Tensor<T>,
    pub dweights: Tensor<T>,
    pub dbias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let features = input.sample_len();
    let classes = weights.c();
    let n = input.n();
    let mut dinput = Tensor::zeros(input.dims());
    let mut dweights = Tensor::zeros(weights.dims());
    let mut dbias = Tensor::zeros([1, classes, 1, 1]);
    // dX (n x f) = dY (n x c) @ W^T (c x f)
    T::gemm(
        n,
        classes,
        features,
        T::one(),
        dout.data(),
        classes as isize,
        1,
        weights.data(),
        1,
        classes as isize,
        T::zero(),
        dinput.data_mut(),
        features as isize,
        1,
    );
    // dW (f x c) = X^T (f x n) @ dY (n x c)
    T::gemm(
        features,
        n,
        classes,
        T::one(),
        input.data(),
        1,
        features as isize,
        dout.data(),
        classes as isize,
        1,
        T::zero(),
        dweights.data_mut(),
        classes as isize,
        1,
    );
    for i in 0..n {
        for c in 0..classes {
            dbias.data_mut()[c] += dout.data()[i * classes + c];
        }
    }
    Ok(DenseGrads {
        dinput,
        dweights,
        dbias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_zero_bias_pass_through() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![5.0f64, -3.0]).unwrap();
        let w = Tensor::from_vec([2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros([1, 2, 1, 1]);
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn identity_weights_unit_bias() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::from_vec([2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn zero_input_returns_bias() {
        let x = Tensor::<f32>::zeros([2, 3, 1, 1]);
        let w = Tensor::<f32>::filled([3, 4, 1, 1], 0.5);
        let b = Tensor::from_vec([1, 4, 1, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(&y.data()[0..4], b.data());
        assert_eq!(&y.data()[4..8], b.data());
    }

    #[test]
    fn feature_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros([1, 3, 1, 1]);
        let w = Tensor::<f32>::zeros([4, 2, 1, 1]);
        let b = Tensor::<f32>::zeros([1, 2, 1, 1]);
        assert!(matches!(dense(&x, &w, &b), Err(Error::Shape { .. })));
    }
}
