//! 2-D convolution over NCHW tensors: direct im2col + GEMM, with stride,
//! zero padding, and dilation.

use crate::error::{Error, Result};
use crate::tensor::{DimsFmt, Scalar, Tensor};

/// Spatial extent a dilated kernel covers: `k + (k-1)(d-1)`.
pub fn effective_kernel(kernel: usize, dilation: usize) -> usize {
    kernel + (kernel - 1) * (dilation - 1)
}

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    /// Square kernel side, odd.
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    /// Zero padding applied on every side.
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
        has_bias: bool,
    ) -> Result<Self> {
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "conv kernel must be odd and positive, got {kernel}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be >= 1".into()));
        }
        if dilation == 0 {
            return Err(Error::Config("conv dilation must be >= 1".into()));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(format!(
                "conv channels must be positive, got {in_channels} -> {out_channels}"
            )));
        }
        Ok(ConvSpec {
            kernel,
            stride,
            dilation,
            padding,
            in_channels,
            out_channels,
            has_bias,
        })
    }

    /// Stride-1 convolution that preserves spatial size (`pad = R/2`).
    pub fn same(kernel: usize, dilation: usize, in_ch: usize, out_ch: usize) -> Result<Self> {
        let pad = effective_kernel(kernel, dilation) / 2;
        ConvSpec::new(kernel, 1, dilation, pad, in_ch, out_ch, true)
    }

    pub fn effective_kernel(&self) -> usize {
        effective_kernel(self.kernel, self.dilation)
    }

    /// `floor((in + 2*pad - R)/stride) + 1`, rejecting empty outputs.
    pub fn out_size(&self, in_size: usize) -> Result<usize> {
        let reach = self.effective_kernel();
        let padded = in_size + 2 * self.padding;
        if padded < reach {
            return Err(Error::Config(format!(
                "conv output size < 1: input {in_size} + 2*{} < effective kernel {reach}",
                self.padding
            )));
        }
        Ok((padded - reach) / self.stride + 1)
    }

    /// Trainable element count: `out*in*k*k` plus bias.
    pub fn param_count(&self) -> usize {
        let w = self.out_channels * self.in_channels * self.kernel * self.kernel;
        w + if self.has_bias { self.out_channels } else { 0 }
    }

    fn check_tensors<T: Scalar>(
        &self,
        input: &Tensor<T>,
        weights: &Tensor<T>,
        bias: Option<&Tensor<T>>,
    ) -> Result<()> {
        if input.c() != self.in_channels {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!(
                    "input channel axis is {} but spec expects {}",
                    input.c(),
                    self.in_channels
                ),
            });
        }
        let want = [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ];
        if weights.dims() != want {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!(
                    "weight dims {} do not match spec {}",
                    DimsFmt(weights.dims()),
                    DimsFmt(want)
                ),
            });
        }
        if let Some(b) = bias {
            if b.len() != self.out_channels {
                return Err(Error::Shape {
                    op: "conv2d",
                    detail: format!(
                        "bias length {} does not match out_channels {}",
                        b.len(),
                        self.out_channels
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Gather one sample's receptive fields into a `(oh*ow) x (c*k*k)` matrix.
/// Out-of-bounds taps read as zero (padding).
fn im2col<T: Scalar>(
    input: &Tensor<T>,
    sample: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let (c_in, h, w) = (input.c(), input.h(), input.w());
    let k = spec.kernel;
    let cols_k = c_in * k * k;
    debug_assert_eq!(cols.len(), oh * ow * cols_k);
    let data = input.data();
    let sample_base = sample * c_in * h * w;
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * cols_k;
            let y0 = (oy * spec.stride) as isize - spec.padding as isize;
            let x0 = (ox * spec.stride) as isize - spec.padding as isize;
            let mut q = row;
            for c in 0..c_in {
                let chan_base = sample_base + c * h * w;
                for ky in 0..k {
                    let iy = y0 + (ky * spec.dilation) as isize;
                    if iy < 0 || iy >= h as isize {
                        for slot in &mut cols[q..q + k] {
                            *slot = T::zero();
                        }
                        q += k;
                        continue;
                    }
                    let row_base = chan_base + iy as usize * w;
                    for kx in 0..k {
                        let ix = x0 + (kx * spec.dilation) as isize;
                        cols[q] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            data[row_base + ix as usize]
                        };
                        q += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add of the column matrix back onto one input sample.
fn col2im_add<T: Scalar>(
    dcols: &[T],
    sample: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    dinput: &mut Tensor<T>,
) {
    let (c_in, h, w) = (dinput.c(), dinput.h(), dinput.w());
    let k = spec.kernel;
    let cols_k = c_in * k * k;
    let sample_base = sample * c_in * h * w;
    let data = dinput.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * cols_k;
            let y0 = (oy * spec.stride) as isize - spec.padding as isize;
            let x0 = (ox * spec.stride) as isize - spec.padding as isize;
            let mut q = row;
            for c in 0..c_in {
                let chan_base = sample_base + c * h * w;
                for ky in 0..k {
                    let iy = y0 + (ky * spec.dilation) as isize;
                    if iy < 0 || iy >= h as isize {
                        q += k;
                        continue;
                    }
                    let row_base = chan_base + iy as usize * w;
                    for kx in 0..k {
                        let ix = x0 + (kx * spec.dilation) as isize;
                        if ix >= 0 && ix < w as isize {
                            data[row_base + ix as usize] += dcols[q];
                        }
                        q += 1;
                    }
                }
            }
        }
    }
}

/// Forward convolution; differentiable counterpart is [`conv2d_backward`].
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    spec.check_tensors(input, weights, bias)?;
    let oh = spec.out_size(input.h())?;
    let ow = spec.out_size(input.w())?;
    let (n, o) = (input.n(), spec.out_channels);
    let k_len = spec.in_channels * spec.kernel * spec.kernel;
    let patch = oh * ow;

    let mut out = Tensor::zeros([n, o, oh, ow]);
    let mut cols = vec![T::zero(); patch * k_len];
    for i in 0..n {
        im2col(input, i, spec, oh, ow, &mut cols);
        // out_i (o x patch) = W (o x k_len) @ cols^T (k_len x patch)
        let dst = &mut out.data_mut()[i * o * patch..(i + 1) * o * patch];
        T::gemm(
            o,
            k_len,
            patch,
            T::one(),
            weights.data(),
            k_len as isize,
            1,
            &cols,
            1,
            k_len as isize,
            T::zero(),
            dst,
            patch as isize,
            1,
        );
        if let Some(b) = bias {
            for ch in 0..o {
                let bv = b.data()[ch];
                for v in &mut dst[ch * patch..(ch + 1) * patch] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients produced by one convolution VJP.
pub struct ConvGrads<T> {
    pub dinput: Tensor<T>,
    pub dweights: Tensor<T>,
    pub dbias: Option<Tensor<T>>,
}

/// Vector-Jacobian product for [`conv2d`]: recomputes the column matrix
/// from the saved input rather than caching it.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    has_bias: bool,
    spec: &ConvSpec,
    dout: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let oh = spec.out_size(input.h())?;
    let ow = spec.out_size(input.w())?;
    let (n, o) = (input.n(), spec.out_channels);
    if dout.dims() != [n, o, oh, ow] {
        return Err(Error::Shape {
            op: "conv2d_backward",
            detail: format!(
                "upstream grad {} does not match output {}",
                DimsFmt(dout.dims()),
                DimsFmt([n, o, oh, ow])
            ),
        });
    }
    let k_len = spec.in_channels * spec.kernel * spec.kernel;
    let patch = oh * ow;

    let mut dinput = Tensor::zeros(input.dims());
    let mut dweights = Tensor::zeros(weights.dims());
    let mut dbias = if has_bias {
        Some(Tensor::zeros([1, o, 1, 1]))
    } else {
        None
    };
    let mut cols = vec![T::zero(); patch * k_len];
    let mut dcols = vec![T::zero(); patch * k_len];
    for i in 0..n {
        im2col(input, i, spec, oh, ow, &mut cols);
        let dy = &dout.data()[i * o * patch..(i + 1) * o * patch];
        // dW (o x k_len) += dy_i (o x patch) @ cols (patch x k_len)
        T::gemm(
            o,
            patch,
            k_len,
            T::one(),
            dy,
            patch as isize,
            1,
            &cols,
            k_len as isize,
            1,
            T::one(),
            dweights.data_mut(),
            k_len as isize,
            1,
        );
        // dcols (patch x k_len) = dy_i^T (patch x o) @ W (o x k_len)
        T::gemm(
            patch,
            o,
            k_len,
            T::one(),
            dy,
            1,
            patch as isize,
            weights.data(),
            k_len as isize,
            1,
            T::zero(),
            &mut dcols,
            k_len as isize,
            1,
        );
        col2im_add(&dcols, i, spec, oh, ow, &mut dinput);
        if let Some(db) = dbias.as_mut() {
            for ch in 0..o {
                let mut acc = T::zero();
                for &v in &dy[ch * patch..(ch + 1) * patch] {
                    acc += v;
                }
                db.data_mut()[ch] += acc;
            }
        }
    }
    Ok(ConvGrads {
        dinput,
        dweights,
        dbias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(dims: [usize; 4]) -> Tensor<f64> {
        Tensor::filled(dims, 1.0)
    }

    #[test]
    fn all_ones_3x3_dot_product() {
        let spec = ConvSpec::new(3, 1, 1, 0, 1, 1, false).unwrap();
        let out = conv2d(&ones([1, 1, 3, 3]), &ones([1, 1, 3, 3]), None, &spec).unwrap();
        assert_eq!(out.dims(), [1, 1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn center_one_hot_kernel_is_identity() {
        let spec = ConvSpec::new(3, 1, 1, 1, 2, 2, false).unwrap();
        let mut w = Tensor::<f64>::zeros([2, 2, 3, 3]);
        *w.at_mut(0, 0, 1, 1) = 1.0;
        *w.at_mut(1, 1, 1, 1) = 1.0;
        let x = Tensor::from_vec([1, 2, 4, 4], (0..32).map(f64::from).collect()).unwrap();
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn stride_two_halves_256() {
        let spec = ConvSpec::new(3, 2, 1, 1, 1, 1, false).unwrap();
        assert_eq!(spec.out_size(256).unwrap(), 128);
    }

    #[test]
    fn dilation_two_same_padding_keeps_64() {
        // k=3, D=2 covers 5 taps; pad 2 preserves the spatial size.
        let spec = ConvSpec::new(3, 1, 2, 2, 1, 1, false).unwrap();
        assert_eq!(spec.effective_kernel(), 5);
        assert_eq!(spec.out_size(64).unwrap(), 64);
    }

    #[test]
    fn undersized_input_is_config_error() {
        let spec = ConvSpec::new(7, 1, 1, 0, 1, 1, false).unwrap();
        assert!(matches!(spec.out_size(4), Err(Error::Config(_))));
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let spec = ConvSpec::new(3, 1, 1, 1, 4, 2, false).unwrap();
        let err = conv2d(
            &ones([1, 3, 5, 5]),
            &ones([2, 4, 3, 3]),
            None,
            &spec,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("channel"), "message was: {msg}");
    }

    /// Dilated conv must agree with the dilated kernel materialized as a
    /// sparse dense kernel of size R (taps spread D apart, zeros between).
    #[test]
    fn dilation_matches_materialized_sparse_kernel() {
        let mut rng = crate::test_rng(11);
        let x = Tensor::<f64>::random_uniform([2, 3, 9, 9], 1.0, &mut rng);
        let w = Tensor::<f64>::random_uniform([4, 3, 3, 3], 1.0, &mut rng);
        let dil = ConvSpec::new(3, 1, 2, 2, 3, 4, false).unwrap();
        let reach = dil.effective_kernel();
        assert_eq!(reach, 5);

        let mut w_sparse = Tensor::<f64>::zeros([4, 3, reach, reach]);
        for o in 0..4 {
            for c in 0..3 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        *w_sparse.at_mut(o, c, ky * 2, kx * 2) = w.at(o, c, ky, kx);
                    }
                }
            }
        }
        let dense = ConvSpec::new(reach, 1, 1, 2, 3, 4, false).unwrap();
        let a = conv2d(&x, &w, None, &dil).unwrap();
        let b = conv2d(&x, &w_sparse, None, &dense).unwrap();
        assert_eq!(a.dims(), b.dims());
        for (u, v) in a.data().iter().zip(b.data().iter()) {
            assert_eq!(u, v);
        }
    }

    /// conv(a*x + b*y) = a*conv(x) + b*conv(y) with bias disabled.
    #[test]
    fn convolution_is_linear() {
        let mut rng = crate::test_rng(5);
        let x = Tensor::<f32>::random_uniform([1, 2, 8, 8], 1.0, &mut rng);
        let y = Tensor::<f32>::random_uniform([1, 2, 8, 8], 1.0, &mut rng);
        let w = Tensor::<f32>::random_uniform([3, 2, 3, 3], 1.0, &mut rng);
        let spec = ConvSpec::new(3, 2, 1, 1, 2, 3, false).unwrap();
        let (a, b) = (0.7f32, -1.3f32);

        let mut combo = x.clone();
        combo.scale(a);
        let mut yb = y.clone();
        yb.scale(b);
        combo.accumulate(&yb).unwrap();

        let lhs = conv2d(&combo, &w, None, &spec).unwrap();
        let mut rhs = conv2d(&x, &w, None, &spec).unwrap();
        rhs.scale(a);
        let mut cy = conv2d(&y, &w, None, &spec).unwrap();
        cy.scale(b);
        rhs.accumulate(&cy).unwrap();
        for (u, v) in lhs.data().iter().zip(rhs.data().iter()) {
            assert!((u - v).abs() < 1e-5, "{u} vs {v}");
        }
    }
}
