//! Local response normalization (cross-channel) and per-sample L2
//! normalization.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// LRN constants. The canonical defaults are `k=2, n=5, alpha=1e-4, beta=0.75`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub k: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            k: 2.0,
            n: 5,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.k <= 0.0 {
            return Err(Error::Config(format!("lrn k must be > 0, got {}", self.k)));
        }
        if self.n % 2 == 0 || self.n == 0 {
            return Err(Error::Config(format!("lrn window must be odd, got {}", self.n)));
        }
        Ok(())
    }
}

/// `out = in / (k + alpha * sum_{window} in^2)^beta`, the window spanning
/// `n` adjacent channels centered on each channel and clipped at the
/// channel boundaries.
pub fn lrn<T: Scalar>(input: &Tensor<T>, p: &LrnParams) -> Result<Tensor<T>> {
    p.validate()?;
    let (n, c, h, w) = (input.n(), input.c(), input.h(), input.w());
    let half = p.n / 2;
    let (k, alpha, beta) = (T::from_f64(p.k), T::from_f64(p.alpha), T::from_f64(p.beta));
    let mut out = Tensor::zeros(input.dims());
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let lo = ch.saturating_sub(half);
                    let hi = (ch + half).min(c - 1);
                    let mut sq = T::zero();
                    for j in lo..=hi {
                        let v = input.at(i, j, y, x);
                        sq += v * v;
                    }
                    let denom = (k + alpha * sq).powf(beta);
                    *out.at_mut(i, ch, y, x) = input.at(i, ch, y, x) / denom;
                }
            }
        }
    }
    Ok(out)
}

/// VJP for [`lrn`]. With `s_c = k + alpha * sum_{w(c)} x_j^2`:
/// `dx_i = dy_i * s_i^-b - 2ab * x_i * sum_{c in w(i)} dy_c x_c s_c^(-b-1)`.
pub fn lrn_backward<T: Scalar>(
    input: &Tensor<T>,
    p: &LrnParams,
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    p.validate()?;
    let (n, c, h, w) = (input.n(), input.c(), input.h(), input.w());
    let half = p.n / 2;
    let (k, alpha, beta) = (T::from_f64(p.k), T::from_f64(p.alpha), T::from_f64(p.beta));
    let two = T::from_f64(2.0);
    let mut dinput = Tensor::zeros(input.dims());
    let mut s = vec![T::zero(); c];
    let mut t = vec![T::zero(); c];
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let lo = ch.saturating_sub(half);
                    let hi = (ch + half).min(c - 1);
                    let mut sq = T::zero();
                    for j in lo..=hi {
                        let v = input.at(i, j, y, x);
                        sq += v * v;
                    }
                    s[ch] = k + alpha * sq;
                    // t_c = dy_c * x_c * s_c^(-beta-1)
                    t[ch] = dout.at(i, ch, y, x) * input.at(i, ch, y, x)
                        * s[ch].powf(-beta - T::one());
                }
                for ch in 0..c {
                    let lo = ch.saturating_sub(half);
                    let hi = (ch + half).min(c - 1);
                    let mut tsum = T::zero();
                    for j in lo..=hi {
                        tsum += t[j];
                    }
                    let direct = dout.at(i, ch, y, x) * s[ch].powf(-beta);
                    *dinput.at_mut(i, ch, y, x) =
                        direct - two * alpha * beta * input.at(i, ch, y, x) * tsum;
                }
            }
        }
    }
    Ok(dinput)
}

/// Divide each sample's flattened feature vector by `max(||v||, epsilon)`.
pub fn l2_normalize<T: Scalar>(input: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    if epsilon <= 0.0 {
        return Err(Error::Config(format!("l2 epsilon must be > 0, got {epsilon}")));
    }
    let eps = T::from_f64(epsilon);
    let per = input.sample_len();
    let mut out = input.clone();
    for i in 0..input.n() {
        let slice = &mut out.data_mut()[i * per..(i + 1) * per];
        let norm = slice.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        let denom = if norm > eps { norm } else { eps };
        for v in slice.iter_mut() {
            *v = *v / denom;
        }
    }
    Ok(out)
}

/// VJP for [`l2_normalize`]. On the normalized branch the Jacobian is
/// `(I - u u^T)/||v||` with `u = v/||v||`; below epsilon it is `I/eps`.
pub fn l2_normalize_backward<T: Scalar>(
    input: &Tensor<T>,
    epsilon: f64,
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    let eps = T::from_f64(epsilon);
    let per = input.sample_len();
    let mut dinput = Tensor::zeros(input.dims());
    for i in 0..input.n() {
        let v = &input.data()[i * per..(i + 1) * per];
        let dy = &dout.data()[i * per..(i + 1) * per];
        let dst = &mut dinput.data_mut()[i * per..(i + 1) * per];
        let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if norm > eps {
            let mut dot = T::zero();
            for (x, g) in v.iter().zip(dy.iter()) {
                dot += *x * *g;
            }
            let inv = T::one() / norm;
            let scale = dot / (norm * norm * norm);
            for ((d, g), x) in dst.iter_mut().zip(dy.iter()).zip(v.iter()) {
                *d = *g * inv - *x * scale;
            }
        } else {
            let inv = T::one() / eps;
            for (d, g) in dst.iter_mut().zip(dy.iter()) {
                *d = *g * inv;
            }
        }
    }
    Ok(dinput)
}
