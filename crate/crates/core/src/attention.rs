//! Parameter-free attention fusion of three same-shape response maps.
//!
//! The fused value at each position is the midrange of the three responses
//! plus the smallest absolute deviation from that midrange. For sorted
//! values `a <= b <= c` this collapses to `max(b, a + c - b)`, which the
//! test suite uses as an independent oracle.
//!
//! Non-smooth points use fixed conventions so gradients are deterministic:
//! argmax/argmin/arg-min-deviation ties resolve to the lowest scale index,
//! and `sign(0) = 0`.

use crate::error::{Error, Result};
use crate::tensor::{DimsFmt, Scalar, Tensor};

/// The three same-shape responses of the 3x3, 5x5, and 7x7 convolutions.
pub struct ScaleTriple<'a, T> {
    pub f1: &'a Tensor<T>,
    pub f2: &'a Tensor<T>,
    pub f3: &'a Tensor<T>,
}

impl<'a, T: Scalar> ScaleTriple<'a, T> {
    pub fn new(f1: &'a Tensor<T>, f2: &'a Tensor<T>, f3: &'a Tensor<T>) -> Result<Self> {
        if f1.dims() != f2.dims() || f1.dims() != f3.dims() {
            return Err(Error::Shape {
                op: "scale_triple",
                detail: format!(
                    "{} / {} / {}",
                    DimsFmt(f1.dims()),
                    DimsFmt(f2.dims()),
                    DimsFmt(f3.dims())
                ),
            });
        }
        Ok(ScaleTriple { f1, f2, f3 })
    }

    fn values(&self, i: usize) -> [T; 3] {
        [self.f1.data()[i], self.f2.data()[i], self.f3.data()[i]]
    }
}

/// Index of the maximum, lowest index on ties.
#[inline]
fn argmax3<T: Scalar>(v: &[T; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Index of the minimum, lowest index on ties.
#[inline]
fn argmin3<T: Scalar>(v: &[T; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if v[i] < v[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn midrange_scalar<T: Scalar>(v: &[T; 3]) -> T {
    let half = T::from_f64(0.5);
    (v[argmax3(v)] + v[argmin3(v)]) * half
}

/// Elementwise midrange `0.5 * (max + min)` of the triple.
pub fn midrange<T: Scalar>(t: &ScaleTriple<'_, T>) -> Tensor<T> {
    let mut out = Tensor::zeros(t.f1.dims());
    for i in 0..out.len() {
        out.data_mut()[i] = midrange_scalar(&t.values(i));
    }
    out
}

/// Absolute deviations `|phi - f_i|` of each response from the midrange.
pub fn deviation<T: Scalar>(
    t: &ScaleTriple<'_, T>,
    phi: &Tensor<T>,
) -> Result<[Tensor<T>; 3]> {
    if phi.dims() != t.f1.dims() {
        return Err(Error::Shape {
            op: "deviation",
            detail: format!("phi {} vs {}", DimsFmt(phi.dims()), DimsFmt(t.f1.dims())),
        });
    }
    let mut out = [
        Tensor::zeros(phi.dims()),
        Tensor::zeros(phi.dims()),
        Tensor::zeros(phi.dims()),
    ];
    let fields = [t.f1, t.f2, t.f3];
    for (g, f) in out.iter_mut().zip(fields.iter()) {
        for i in 0..phi.len() {
            g.data_mut()[i] = (phi.data()[i] - f.data()[i]).abs();
        }
    }
    Ok(out)
}

/// Fused map: midrange plus the smallest absolute deviation, elementwise
/// per position and channel.
pub fn attention_fuse<T: Scalar>(t: &ScaleTriple<'_, T>) -> Tensor<T> {
    let mut out = Tensor::zeros(t.f1.dims());
    for i in 0..out.len() {
        let v = t.values(i);
        let phi = midrange_scalar(&v);
        let dev = [
            (phi - v[0]).abs(),
            (phi - v[1]).abs(),
            (phi - v[2]).abs(),
        ];
        out.data_mut()[i] = phi + dev[argmin3(&dev)];
    }
    out
}

/// Per-element VJP of the fused map. With `p`/`q` the argmax/argmin of the
/// values, `j` the arg-min deviation, and `s = sign(phi - f_j)`:
/// `d/df_i = (1 + s) * 0.5 * ([i==p] + [i==q]) - s * [i==j]`.
pub fn attention_fuse_backward<T: Scalar>(
    t: &ScaleTriple<'_, T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let mut grads = [
        Tensor::zeros(t.f1.dims()),
        Tensor::zeros(t.f1.dims()),
        Tensor::zeros(t.f1.dims()),
    ];
    let half = T::from_f64(0.5);
    for i in 0..dout.len() {
        let v = t.values(i);
        let p = argmax3(&v);
        let q = argmin3(&v);
        let phi = (v[p] + v[q]) * half;
        let dev = [
            (phi - v[0]).abs(),
            (phi - v[1]).abs(),
            (phi - v[2]).abs(),
        ];
        let j = argmin3(&dev);
        let diff = phi - v[j];
        let s = if diff > T::zero() {
            T::one()
        } else if diff < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        let g = dout.data()[i];
        let phi_coeff = (T::one() + s) * half * g;
        grads[p].data_mut()[i] += phi_coeff;
        grads[q].data_mut()[i] += phi_coeff;
        grads[j].data_mut()[i] -= s * g;
    }
    let [g1, g2, g3] = grads;
    (g1, g2, g3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(v: [f64; 3]) -> [Tensor<f64>; 3] {
        [
            Tensor::from_vec([1, 1, 1, 1], vec![v[0]]).unwrap(),
            Tensor::from_vec([1, 1, 1, 1], vec![v[1]]).unwrap(),
            Tensor::from_vec([1, 1, 1, 1], vec![v[2]]).unwrap(),
        ]
    }

    fn fuse_scalar(v: [f64; 3]) -> f64 {
        let [a, b, c] = triple(v);
        let t = ScaleTriple::new(&a, &b, &c).unwrap();
        attention_fuse(&t).data()[0]
    }

    fn grad_scalar(v: [f64; 3]) -> [f64; 3] {
        let [a, b, c] = triple(v);
        let t = ScaleTriple::new(&a, &b, &c).unwrap();
        let dout = Tensor::filled([1, 1, 1, 1], 1.0);
        let (g1, g2, g3) = attention_fuse_backward(&t, &dout);
        [g1.data()[0], g2.data()[0], g3.data()[0]]
    }

    #[test]
    fn midrange_of_one_two_three() {
        let [a, b, c] = triple([1.0, 2.0, 3.0]);
        let t = ScaleTriple::new(&a, &b, &c).unwrap();
        assert_eq!(midrange(&t).data()[0], 2.0);
    }

    #[test]
    fn midrange_of_signed_triple() {
        let [a, b, c] = triple([-4.0, 0.0, 2.0]);
        let t = ScaleTriple::new(&a, &b, &c).unwrap();
        assert_eq!(midrange(&t).data()[0], -1.0);
    }

    #[test]
    fn deviations_from_midrange() {
        let [a, b, c] = triple([1.0, 2.0, 3.0]);
        let t = ScaleTriple::new(&a, &b, &c).unwrap();
        let phi = midrange(&t);
        let dev = deviation(&t, &phi).unwrap();
        assert_eq!(
            [dev[0].data()[0], dev[1].data()[0], dev[2].data()[0]],
            [1.0, 0.0, 1.0]
        );

        let [a, b, c] = triple([1.0, 1.0, 4.0]);
        let t = ScaleTriple::new(&a, &b, &c).unwrap();
        let phi = midrange(&t);
        assert_eq!(phi.data()[0], 2.5);
        let dev = deviation(&t, &phi).unwrap();
        assert_eq!(
            [dev[0].data()[0], dev[1].data()[0], dev[2].data()[0]],
            [1.5, 1.5, 1.5]
        );
    }

    #[test]
    fn fuse_worked_examples() {
        assert_eq!(fuse_scalar([1.0, 2.0, 3.0]), 2.0);
        assert_eq!(fuse_scalar([0.0, 0.0, 0.0]), 0.0);
        assert_eq!(fuse_scalar([1.0, 1.0, 4.0]), 4.0);
    }

    #[test]
    fn fuse_gradient_on_reflected_branch() {
        // f_j below the midrange: delta = min + max - median there.
        assert_eq!(grad_scalar([1.0, 1.2, 4.0]), [1.0, -1.0, 1.0]);
    }

    #[test]
    fn fuse_gradient_on_median_branch() {
        assert_eq!(grad_scalar([1.0, 3.0, 4.0]), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn closed_form_matches_definition() {
        let mut rng = crate::test_rng(31);
        for _ in 0..2000 {
            let v: [f64; 3] = [
                rand::Rng::gen_range(&mut rng, -10.0..10.0),
                rand::Rng::gen_range(&mut rng, -10.0..10.0),
                rand::Rng::gen_range(&mut rng, -10.0..10.0),
            ];
            let mut s = v;
            s.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let oracle = s[1].max(s[0] + s[2] - s[1]);
            let got = fuse_scalar(v);
            assert!((got - oracle).abs() <= 1e-12, "{v:?}: {got} vs {oracle}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::<f32>::zeros([1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros([1, 1, 2, 3]);
        assert!(ScaleTriple::new(&a, &a, &b).is_err());
    }
}
