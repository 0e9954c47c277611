//! Elementwise primitives: activations, addition, and the triple
//! reductions used by the ablation fusion modes.

use crate::error::{Error, Result};
use crate::tensor::{DimsFmt, Scalar, Tensor};

pub fn check_same_dims<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape {
            op,
            detail: format!("{} vs {}", DimsFmt(a.dims()), DimsFmt(b.dims())),
        });
    }
    Ok(())
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient 0 at the kink.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let mut d = dout.clone();
    for (g, &x) in d.data_mut().iter_mut().zip(input.data().iter()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    d
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Takes the forward output, not the input: `s * (1 - s)`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let mut d = dout.clone();
    for (g, &s) in d.data_mut().iter_mut().zip(output.data().iter()) {
        *g = *g * s * (T::one() - s);
    }
    d
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_dims("add", a, b)?;
    let mut out = a.clone();
    out.accumulate(b)?;
    Ok(out)
}

/// Elementwise arithmetic mean of three same-shape maps.
pub fn mean3<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, c: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_dims("mean3", a, b)?;
    check_same_dims("mean3", a, c)?;
    let third = T::from_f64(1.0 / 3.0);
    let mut out = Tensor::zeros(a.dims());
    for (((o, &x), &y), &z) in out
        .data_mut()
        .iter_mut()
        .zip(a.data())
        .zip(b.data())
        .zip(c.data())
    {
        *o = (x + y + z) * third;
    }
    Ok(out)
}

/// Index (0, 1, or 2) of the elementwise median, lowest index on ties.
pub fn median3_select<T: Scalar>(x: T, y: T, z: T) -> usize {
    let vals = [x, y, z];
    // The median is the element that is neither the unique max nor the
    // unique min; resolve by checking each candidate in index order.
    for (i, &v) in vals.iter().enumerate() {
        let ge = vals.iter().filter(|&&o| v >= o).count();
        let le = vals.iter().filter(|&&o| v <= o).count();
        if ge >= 2 && le >= 2 {
            return i;
        }
    }
    unreachable!("one of three values is always a median")
}

/// Elementwise median of three same-shape maps.
pub fn median3<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, c: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_dims("median3", a, b)?;
    check_same_dims("median3", a, c)?;
    let mut out = Tensor::zeros(a.dims());
    for i in 0..out.len() {
        let vals = [a.data()[i], b.data()[i], c.data()[i]];
        out.data_mut()[i] = vals[median3_select(vals[0], vals[1], vals[2])];
    }
    Ok(out)
}

/// Routes the upstream gradient to whichever input held the median.
pub fn median3_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let mut da = Tensor::zeros(a.dims());
    let mut db = Tensor::zeros(b.dims());
    let mut dc = Tensor::zeros(c.dims());
    for i in 0..dout.len() {
        let g = dout.data()[i];
        match median3_select(a.data()[i], b.data()[i], c.data()[i]) {
            0 => da.data_mut()[i] = g,
            1 => db.data_mut()[i] = g,
            _ => dc.data_mut()[i] = g,
        }
    }
    (da, db, dc)
}

/// Concatenate along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
    let (n, h, w) = (first.n(), first.h(), first.w());
    let mut total_c = 0;
    for p in parts {
        if p.n() != n || p.h() != h || p.w() != w {
            return Err(Error::Shape {
                op: "concat_channels",
                detail: format!("{} vs {}", DimsFmt(first.dims()), DimsFmt(p.dims())),
            });
        }
        total_c += p.c();
    }
    let mut out = Tensor::zeros([n, total_c, h, w]);
    let plane = h * w;
    for i in 0..n {
        let mut c_off = 0;
        for p in parts {
            let src = &p.data()[i * p.c() * plane..(i + 1) * p.c() * plane];
            let dst_start = (i * total_c + c_off) * plane;
            out.data_mut()[dst_start..dst_start + p.c() * plane].copy_from_slice(src);
            c_off += p.c();
        }
    }
    Ok(out)
}

/// Split the upstream gradient back into per-part channel blocks.
pub fn concat_channels_backward<T: Scalar>(
    part_channels: &[usize],
    dout: &Tensor<T>,
) -> Vec<Tensor<T>> {
    let (n, h, w) = (dout.n(), dout.h(), dout.w());
    let total_c = dout.c();
    let plane = h * w;
    let mut grads: Vec<Tensor<T>> = part_channels
        .iter()
        .map(|&c| Tensor::zeros([n, c, h, w]))
        .collect();
    for i in 0..n {
        let mut c_off = 0;
        for (gi, &c) in part_channels.iter().enumerate() {
            let src_start = (i * total_c + c_off) * plane;
            let dst = &mut grads[gi].data_mut()[i * c * plane..(i + 1) * c * plane];
            dst.copy_from_slice(&dout.data()[src_start..src_start + c * plane]);
            c_off += c;
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_distinct_triple() {
        let a = Tensor::from_vec([1, 1, 1, 2], vec![1.0f64, 1.0]).unwrap();
        let b = Tensor::from_vec([1, 1, 1, 2], vec![1.0f64, 2.0]).unwrap();
        let c = Tensor::from_vec([1, 1, 1, 2], vec![4.0f64, 3.0]).unwrap();
        let m = median3(&a, &b, &c).unwrap();
        assert_eq!(m.data(), &[1.0, 2.0]);
    }

    #[test]
    fn median_tie_routes_to_lowest_index() {
        let a = Tensor::from_vec([1, 1, 1, 1], vec![2.0f64]).unwrap();
        let b = Tensor::from_vec([1, 1, 1, 1], vec![2.0f64]).unwrap();
        let c = Tensor::from_vec([1, 1, 1, 1], vec![5.0f64]).unwrap();
        let dout = Tensor::filled([1, 1, 1, 1], 1.0f64);
        let (da, db, dc) = median3_backward(&a, &b, &c, &dout);
        assert_eq!(da.data()[0], 1.0);
        assert_eq!(db.data()[0], 0.0);
        assert_eq!(dc.data()[0], 0.0);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let mut rng = crate::test_rng(17);
        let a = Tensor::<f32>::random_uniform([2, 3, 4, 4], 1.0, &mut rng);
        let b = Tensor::<f32>::random_uniform([2, 5, 4, 4], 1.0, &mut rng);
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.dims(), [2, 8, 4, 4]);
        let parts = concat_channels_backward(&[3, 5], &cat);
        assert_eq!(parts[0].data(), a.data());
        assert_eq!(parts[1].data(), b.data());
    }

    #[test]
    fn relu_masks_negative_gradient() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        let d = relu_backward(&x, &Tensor::filled([1, 1, 1, 3], 1.0));
        assert_eq!(d.data(), &[0.0, 0.0, 1.0]);
    }
}
