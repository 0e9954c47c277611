//! Stochastic gradient descent. Plain `w -= lr * g` by default; classical
//! momentum is an opt-in configuration key.

use crate::error::{Error, Result};
use crate::tensor::{DimsFmt, Scalar, Tensor};

/// One descent update on a single parameter tensor.
pub fn sgd_step<T: Scalar>(param: &mut Tensor<T>, grad: &Tensor<T>, lr: f64) -> Result<()> {
    if param.dims() != grad.dims() {
        return Err(Error::Shape {
            op: "sgd_step",
            detail: format!("{} vs {}", DimsFmt(param.dims()), DimsFmt(grad.dims())),
        });
    }
    let lr = T::from_f64(lr);
    for (w, &g) in param.data_mut().iter_mut().zip(grad.data().iter()) {
        *w = *w - lr * g;
    }
    Ok(())
}

/// SGD state when momentum is enabled; velocity buffers are allocated on
/// first use, one per parameter slot.
pub struct SgdMomentum<T> {
    pub momentum: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(momentum: f64, slots: usize) -> Self {
        SgdMomentum {
            momentum,
            velocity: (0..slots).map(|_| None).collect(),
        }
    }

    /// `v = mu*v + g; w -= lr*v`. With `mu = 0` this is a plain step.
    pub fn step(&mut self, slot: usize, param: &mut Tensor<T>, grad: &Tensor<T>, lr: f64) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(param, grad, lr);
        }
        let mu = T::from_f64(self.momentum);
        let v = self.velocity[slot].get_or_insert_with(|| Tensor::zeros(grad.dims()));
        if v.dims() != grad.dims() {
            return Err(Error::Shape {
                op: "sgd_step",
                detail: format!("velocity {} vs grad {}", DimsFmt(v.dims()), DimsFmt(grad.dims())),
            });
        }
        for (vel, &g) in v.data_mut().iter_mut().zip(grad.data().iter()) {
            *vel = *vel * mu + g;
        }
        let lr = T::from_f64(lr);
        for (w, &vel) in param.data_mut().iter_mut().zip(v.data().iter()) {
            *w = *w - lr * vel;
        }
        Ok(())
    }
}
