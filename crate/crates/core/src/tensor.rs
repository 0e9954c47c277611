//! Dense rank-4 tensors in NCHW layout, generic over scalar precision.
//!
//! `f32` is the training precision; `f64` is used by the gradient-check
//! harness and the numeric oracles in the test suite.

use std::fmt;

use num_traits::{Float, NumAssignOps, NumCast};

use crate::error::{Error, Result};

/// Scalar element type: `f32` or `f64`, plus a fast matrix multiply.
pub trait Scalar:
    Float + NumAssignOps + NumCast + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 convertible")
    }

    fn to_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("scalar fits f64")
    }

    /// `c = alpha * a @ b + beta * c` with explicit row/col strides,
    /// `a`: m x k, `b`: k x n, `c`: m x n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

impl Scalar for f64 {
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

/// Dense rank-4 array `(n, c, h, w)`, row-major with `w` minor.
///
/// Carries activations, weights, and gradients alike. Vectors and matrices
/// are embedded with trailing singleton axes, e.g. a bias of length `c`
/// lives in `(1, c, 1, 1)` and dense weights `(features, classes)` in
/// `(features, classes, 1, 1)`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor {
            dims,
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn filled(dims: [usize; 4], v: T) -> Self {
        Tensor {
            dims,
            data: vec![v; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(Error::Shape {
                op: "Tensor::from_vec",
                detail: format!(
                    "data length {} does not match {} = {}",
                    data.len(),
                    DimsFmt(dims),
                    want
                ),
            });
        }
        Ok(Tensor { dims, data })
    }

    /// Flat vector embedded as `(1, len, 1, 1)`.
    pub fn from_flat(data: Vec<T>) -> Self {
        Tensor {
            dims: [1, data.len(), 1, 1],
            data,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per sample (`c * h * w`).
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx(n, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut T {
        let i = self.idx(n, c, h, w);
        &mut self.data[i]
    }

    /// Same data, new dims; element count must be preserved.
    pub fn reshape(&self, dims: [usize; 4]) -> Result<Self> {
        let want: usize = dims.iter().product();
        if want != self.data.len() {
            return Err(Error::Shape {
                op: "Tensor::reshape",
                detail: format!(
                    "cannot view {} ({} elems) as {}",
                    DimsFmt(self.dims),
                    self.data.len(),
                    DimsFmt(dims)
                ),
            });
        }
        Ok(Tensor {
            dims,
            data: self.data.clone(),
        })
    }

    /// Collapse `(n, c, h, w)` to `(n, c*h*w, 1, 1)`; data untouched.
    pub fn flatten_per_sample(&self) -> Self {
        Tensor {
            dims: [self.dims[0], self.sample_len(), 1, 1],
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += other`, shapes must match.
    pub fn accumulate(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape {
                op: "Tensor::accumulate",
                detail: format!("{} vs {}", DimsFmt(self.dims), DimsFmt(other.dims)),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Lossy precision change (used to move between train and check modes).
    pub fn convert<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Uniform samples in `[-bound, bound]`. Drawn in f64 so the same seed
    /// produces the same weights in both precisions.
    pub fn random_uniform(dims: [usize; 4], bound: f64, rng: &mut impl rand::Rng) -> Self {
        let len: usize = dims.iter().product();
        let data = (0..len)
            .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
            .collect();
        Tensor { dims, data }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}", DimsFmt(self.dims))?;
        if self.data.len() <= 8 {
            write!(f, ", {:?})", self.data)
        } else {
            write!(f, ", [{:?}, {:?}, ...])", self.data[0], self.data[1])
        }
    }
}

/// `1x3x256x256`-style dims formatter for error messages.
pub struct DimsFmt(pub [usize; 4]);

impl fmt::Display for DimsFmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        let err = Tensor::<f32>::from_vec([1, 2, 2, 2], vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn indexing_is_row_major_w_minor() {
        let mut t = Tensor::<f32>::zeros([2, 3, 4, 5]);
        *t.at_mut(1, 2, 3, 4) = 9.0;
        assert_eq!(t.data()[2 * 60 + 2 * 20 + 3 * 5 + 4], 9.0);
        assert_eq!(t.at(1, 2, 3, 4), 9.0);
    }

    #[test]
    fn flatten_keeps_data() {
        let t = Tensor::<f64>::from_vec([2, 1, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let f = t.flatten_per_sample();
        assert_eq!(f.dims(), [2, 4, 1, 1]);
        assert_eq!(f.data(), t.data());
    }

    #[test]
    fn gemm_small_known_product() {
        // [1 2; 3 4] @ [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, 2, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }
}
