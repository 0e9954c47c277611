//! Minimal reverse-mode tape. Forward calls record executed primitives in
//! order; `backward` replays them once in reverse, accumulating
//! vector-Jacobian products into per-node gradient slots.

use crate::attention::{attention_fuse, attention_fuse_backward, ScaleTriple};
use crate::error::{Error, Result};
use crate::ops::{
    add, concat_channels, concat_channels_backward, conv2d, conv2d_backward, dense,
    dense_backward, l2_normalize, l2_normalize_backward, lrn, lrn_backward, mean3, median3,
    median3_backward, relu, relu_backward, sigmoid, sigmoid_backward, ConvSpec, LrnParams,
};
use crate::tensor::{DimsFmt, Scalar, Tensor};

/// Handle to a value recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Step {
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
        out: NodeId,
    },
    Lrn {
        x: NodeId,
        params: LrnParams,
        out: NodeId,
    },
    L2Normalize {
        x: NodeId,
        epsilon: f64,
        out: NodeId,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        out: NodeId,
    },
    Relu {
        x: NodeId,
        out: NodeId,
    },
    Sigmoid {
        x: NodeId,
        out: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
        out: NodeId,
    },
    Mean3 {
        a: NodeId,
        b: NodeId,
        c: NodeId,
        out: NodeId,
    },
    Median3 {
        a: NodeId,
        b: NodeId,
        c: NodeId,
        out: NodeId,
    },
    AttentionFuse {
        a: NodeId,
        b: NodeId,
        c: NodeId,
        out: NodeId,
    },
    ConcatChannels {
        parts: Vec<NodeId>,
        out: NodeId,
    },
    Flatten {
        x: NodeId,
        out: NodeId,
    },
}

/// Ordered record of executed primitives plus their values.
pub struct GradTape<T> {
    values: Vec<Tensor<T>>,
    steps: Vec<Step>,
}

/// Per-node gradients produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a node, if any path reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for a node, zeros when unreached.
    pub fn take(&mut self, id: NodeId, dims: [usize; 4]) -> Tensor<T> {
        self.grads[id.0].take().unwrap_or_else(|| Tensor::zeros(dims))
    }
}

fn accumulate_slot<T: Scalar>(slot: &mut Option<Tensor<T>>, add: Tensor<T>) -> Result<()> {
    match slot {
        Some(existing) => existing.accumulate(&add),
        None => {
            *slot = Some(add);
            Ok(())
        }
    }
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        GradTape {
            values: Vec::new(),
            steps: Vec::new(),
        }
    }

    /// Register an input or parameter value.
    pub fn leaf(&mut self, t: Tensor<T>) -> NodeId {
        self.values.push(t);
        NodeId(self.values.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    fn push(&mut self, t: Tensor<T>) -> NodeId {
        self.values.push(t);
        NodeId(self.values.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let out = conv2d(
            &self.values[x.0],
            &self.values[w.0],
            b.map(|id| &self.values[id.0]),
            &spec,
        )?;
        let out = self.push(out);
        self.steps.push(Step::Conv2d { x, w, b, spec, out });
        Ok(out)
    }

    pub fn lrn(&mut self, x: NodeId, params: LrnParams) -> Result<NodeId> {
        let out = lrn(&self.values[x.0], &params)?;
        let out = self.push(out);
        self.steps.push(Step::Lrn { x, params, out });
        Ok(out)
    }

    pub fn l2_normalize(&mut self, x: NodeId, epsilon: f64) -> Result<NodeId> {
        let out = l2_normalize(&self.values[x.0], epsilon)?;
        let out = self.push(out);
        self.steps.push(Step::L2Normalize { x, epsilon, out });
        Ok(out)
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let out = dense(&self.values[x.0], &self.values[w.0], &self.values[b.0])?;
        let out = self.push(out);
        self.steps.push(Step::Dense { x, w, b, out });
        Ok(out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = relu(&self.values[x.0]);
        let out = self.push(out);
        self.steps.push(Step::Relu { x, out });
        out
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = sigmoid(&self.values[x.0]);
        let out = self.push(out);
        self.steps.push(Step::Sigmoid { x, out });
        out
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = add(&self.values[a.0], &self.values[b.0])?;
        let out = self.push(out);
        self.steps.push(Step::Add { a, b, out });
        Ok(out)
    }

    pub fn mean3(&mut self, a: NodeId, b: NodeId, c: NodeId) -> Result<NodeId> {
        let out = mean3(&self.values[a.0], &self.values[b.0], &self.values[c.0])?;
        let out = self.push(out);
        self.steps.push(Step::Mean3 { a, b, c, out });
        Ok(out)
    }

    pub fn median3(&mut self, a: NodeId, b: NodeId, c: NodeId) -> Result<NodeId> {
        let out = median3(&self.values[a.0], &self.values[b.0], &self.values[c.0])?;
        let out = self.push(out);
        self.steps.push(Step::Median3 { a, b, c, out });
        Ok(out)
    }

    pub fn attention_fuse(&mut self, a: NodeId, b: NodeId, c: NodeId) -> Result<NodeId> {
        let triple = ScaleTriple::new(&self.values[a.0], &self.values[b.0], &self.values[c.0])?;
        let out = attention_fuse(&triple);
        let out = self.push(out);
        self.steps.push(Step::AttentionFuse { a, b, c, out });
        Ok(out)
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|id| &self.values[id.0]).collect();
        let out = concat_channels(&refs)?;
        let out = self.push(out);
        self.steps.push(Step::ConcatChannels {
            parts: parts.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let out = self.values[x.0].flatten_per_sample();
        let out = self.push(out);
        self.steps.push(Step::Flatten { x, out });
        out
    }

    /// Reverse sweep from `seed`, visiting each recorded primitive exactly
    /// once in reverse execution order.
    pub fn backward(&self, seed: NodeId, seed_grad: Tensor<T>) -> Result<Gradients<T>> {
        if seed_grad.dims() != self.values[seed.0].dims() {
            return Err(Error::Shape {
                op: "tape_backward",
                detail: format!(
                    "seed grad {} vs value {}",
                    DimsFmt(seed_grad.dims()),
                    DimsFmt(self.values[seed.0].dims())
                ),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.values.len()).map(|_| None).collect();
        grads[seed.0] = Some(seed_grad);
        for step in self.steps.iter().rev() {
            self.apply_vjp(step, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn apply_vjp(&self, step: &Step, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match step {
            Step::Conv2d { x, w, b, spec, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let g = conv2d_backward(
                    &self.values[x.0],
                    &self.values[w.0],
                    b.is_some(),
                    spec,
                    &dout,
                )?;
                accumulate_slot(&mut grads[x.0], g.dinput)?;
                accumulate_slot(&mut grads[w.0], g.dweights)?;
                if let (Some(bid), Some(db)) = (b, g.dbias) {
                    accumulate_slot(&mut grads[bid.0], db)?;
                }
            }
            Step::Lrn { x, params, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let dx = lrn_backward(&self.values[x.0], params, &dout)?;
                accumulate_slot(&mut grads[x.0], dx)?;
            }
            Step::L2Normalize { x, epsilon, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let dx = l2_normalize_backward(&self.values[x.0], *epsilon, &dout)?;
                accumulate_slot(&mut grads[x.0], dx)?;
            }
            Step::Dense { x, w, b, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let g = dense_backward(&self.values[x.0], &self.values[w.0], &dout)?;
                accumulate_slot(&mut grads[x.0], g.dinput)?;
                accumulate_slot(&mut grads[w.0], g.dweights)?;
                accumulate_slot(&mut grads[b.0], g.dbias)?;
            }
            Step::Relu { x, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let dx = relu_backward(&self.values[x.0], &dout);
                accumulate_slot(&mut grads[x.0], dx)?;
            }
            Step::Sigmoid { x, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                // sigmoid' needs the forward output, which the tape kept.
                let dx = sigmoid_backward(&self.values[out.0], &dout);
                accumulate_slot(&mut grads[x.0], dx)?;
            }
            Step::Add { a, b, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                accumulate_slot(&mut grads[a.0], dout.clone())?;
                accumulate_slot(&mut grads[b.0], dout)?;
            }
            Step::Mean3 { a, b, c, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let mut third = dout;
                third.scale(T::from_f64(1.0 / 3.0));
                accumulate_slot(&mut grads[a.0], third.clone())?;
                accumulate_slot(&mut grads[b.0], third.clone())?;
                accumulate_slot(&mut grads[c.0], third)?;
            }
            Step::Median3 { a, b, c, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let (da, db, dc) = median3_backward(
                    &self.values[a.0],
                    &self.values[b.0],
                    &self.values[c.0],
                    &dout,
                );
                accumulate_slot(&mut grads[a.0], da)?;
                accumulate_slot(&mut grads[b.0], db)?;
                accumulate_slot(&mut grads[c.0], dc)?;
            }
            Step::AttentionFuse { a, b, c, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let triple =
                    ScaleTriple::new(&self.values[a.0], &self.values[b.0], &self.values[c.0])?;
                let (da, db, dc) = attention_fuse_backward(&triple, &dout);
                accumulate_slot(&mut grads[a.0], da)?;
                accumulate_slot(&mut grads[b.0], db)?;
                accumulate_slot(&mut grads[c.0], dc)?;
            }
            Step::ConcatChannels { parts, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let channels: Vec<usize> =
                    parts.iter().map(|id| self.values[id.0].c()).collect();
                let split = concat_channels_backward(&channels, &dout);
                for (id, g) in parts.iter().zip(split) {
                    accumulate_slot(&mut grads[id.0], g)?;
                }
            }
            Step::Flatten { x, out } => {
                let Some(dout) = grads[out.0].take() else { return Ok(()) };
                let dx = dout.reshape(self.values[x.0].dims())?;
                accumulate_slot(&mut grads[x.0], dx)?;
            }
        }
        Ok(())
    }
}
