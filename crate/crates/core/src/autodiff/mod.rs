//! Reverse-mode automatic differentiation on a tape.
//!
//! A [`Tape`] records one forward computation as a topologically ordered list
//! of nodes; [`Tape::backward`] walks it once in reverse and produces a
//! gradient for every recorded variable. Leaves are created with
//! [`Tape::leaf`]; ops are tape methods that validate shapes, run the pure
//! kernel, and record what the backward rule needs.
//!
//! The pure kernels live in [`conv`], [`ops`], [`norm`], and [`loss`] and are
//! also used directly (without a tape) for inference-mode forwards.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod norm;
pub mod ops;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use norm::RunningStats;

/// Handle to a variable recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

enum Record<S> {
    Leaf,
    Conv2d {
        input: VarId,
        weight: VarId,
        bias: VarId,
        pad: usize,
    },
    ConvTranspose2d {
        input: VarId,
        weight: VarId,
        bias: VarId,
    },
    MaxPool2d {
        input: VarId,
        argmax: Vec<usize>,
    },
    Relu {
        input: VarId,
    },
    Sigmoid {
        input: VarId,
    },
    Add {
        lhs: VarId,
        rhs: VarId,
    },
    Concat {
        lhs: VarId,
        rhs: VarId,
        lhs_channels: usize,
    },
    UpsampleNearest2x {
        input: VarId,
    },
    ChannelScale {
        input: VarId,
        gate: VarId,
    },
    BatchNorm {
        input: VarId,
        gamma: VarId,
        normalized: Vec<S>,
        inv_std: Vec<S>,
    },
    FrozenNorm {
        input: VarId,
        gamma: VarId,
        normalized: Vec<S>,
        scale: Vec<S>,
    },
    Dropout {
        input: VarId,
        mask: Vec<S>,
    },
    SoftmaxCrossEntropy {
        logits: VarId,
        softmax: Vec<S>,
        target: Tensor<S>,
    },
    Sum {
        input: VarId,
    },
    WeightedSum {
        input: VarId,
        weights: Tensor<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    record: Record<S>,
}

/// Gradients produced by one backward pass, indexed by [`VarId`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn of(&self, var: VarId) -> &[S] {
        &self.grads[var.0]
    }

    pub fn to_tensor(&self, var: VarId, shape: &[usize]) -> Tensor<S> {
        Tensor::new(shape.to_vec(), self.grads[var.0].clone()).expect("gradient matches shape")
    }
}

#[derive(Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: VarId) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<S>, record: Record<S>) -> VarId {
        self.nodes.push(Node { value, record });
        VarId(self.nodes.len() - 1)
    }

    /// Records an input or trainable parameter.
    pub fn leaf(&mut self, value: Tensor<S>) -> VarId {
        self.push(value, Record::Leaf)
    }

    /// SAME-padded stride-1 convolution. `weight` is `O x C x Kh x Kw` and
    /// `pad` is the symmetric zero padding (1 for a 3x3 kernel, 0 for 1x1).
    pub fn conv2d(&mut self, input: VarId, weight: VarId, bias: VarId, pad: usize) -> Result<VarId> {
        let out = conv::conv2d_forward(self.value(input), self.value(weight), self.value(bias), pad)?;
        Ok(self.push(
            out,
            Record::Conv2d {
                input,
                weight,
                bias,
                pad,
            },
        ))
    }

    /// Stride-2 2x2 transposed convolution. `weight` is `C x O x 2 x 2`;
    /// output spatial dims are exactly double the input's.
    pub fn conv_transpose2d(&mut self, input: VarId, weight: VarId, bias: VarId) -> Result<VarId> {
        let out = conv::conv_transpose2d_forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            out,
            Record::ConvTranspose2d {
                input,
                weight,
                bias,
            },
        ))
    }

    /// 2x2 stride-2 max pooling; ties go to the first element in row-major
    /// window order.
    pub fn maxpool2d(&mut self, input: VarId) -> Result<VarId> {
        let (out, argmax) = ops::maxpool2d_forward(self.value(input))?;
        Ok(self.push(out, Record::MaxPool2d { input, argmax }))
    }

    pub fn relu(&mut self, input: VarId) -> VarId {
        let out = ops::relu(self.value(input));
        self.push(out, Record::Relu { input })
    }

    pub fn sigmoid(&mut self, input: VarId) -> VarId {
        let out = ops::sigmoid(self.value(input));
        self.push(out, Record::Sigmoid { input })
    }

    pub fn add(&mut self, lhs: VarId, rhs: VarId) -> Result<VarId> {
        let out = ops::add(self.value(lhs), self.value(rhs))?;
        Ok(self.push(out, Record::Add { lhs, rhs }))
    }

    /// Channel-axis concatenation, `lhs` channels first.
    pub fn concat(&mut self, lhs: VarId, rhs: VarId) -> Result<VarId> {
        let lhs_channels = self.value(lhs).shape()[1];
        let out = ops::concat(self.value(lhs), self.value(rhs))?;
        Ok(self.push(
            out,
            Record::Concat {
                lhs,
                rhs,
                lhs_channels,
            },
        ))
    }

    pub fn upsample_nearest2x(&mut self, input: VarId) -> Result<VarId> {
        let out = ops::upsample_nearest2x(self.value(input))?;
        Ok(self.push(out, Record::UpsampleNearest2x { input }))
    }

    /// Multiplies every channel of `input` by a one-channel spatial gate.
    pub fn channel_scale(&mut self, input: VarId, gate: VarId) -> Result<VarId> {
        let out = ops::channel_scale(self.value(input), self.value(gate))?;
        Ok(self.push(out, Record::ChannelScale { input, gate }))
    }

    /// Training-mode batch normalization with scale-only affine. Normalizes
    /// with the batch statistics, records what the backward rule needs, and
    /// folds the batch statistics into `running` (momentum 0.1).
    pub fn batch_norm(&mut self, input: VarId, gamma: VarId, running: &mut RunningStats<S>) -> Result<VarId> {
        let fwd = norm::batch_norm_train(self.value(input), self.value(gamma), running)?;
        Ok(self.push(
            fwd.output,
            Record::BatchNorm {
                input,
                gamma,
                normalized: fwd.normalized,
                inv_std: fwd.inv_std,
            },
        ))
    }

    /// Inference-mode batch normalization: normalizes with the (constant)
    /// running estimates instead of batch statistics. Rejects statistics
    /// that have never been updated by a training pass.
    pub fn frozen_norm(&mut self, input: VarId, gamma: VarId, running: &RunningStats<S>) -> Result<VarId> {
        let fwd = norm::batch_norm_frozen(self.value(input), self.value(gamma), running)?;
        Ok(self.push(
            fwd.output,
            Record::FrozenNorm {
                input,
                gamma,
                normalized: fwd.normalized,
                scale: fwd.scale,
            },
        ))
    }

    /// Inverted dropout: zeroes with probability `rate`, scales survivors by
    /// `1/(1-rate)`. Rates outside `[0, 1)` are rejected.
    pub fn dropout(&mut self, input: VarId, rate: f64, rng: &mut Rng) -> Result<VarId> {
        let (out, mask) = ops::dropout_train(self.value(input), rate, rng)?;
        Ok(self.push(out, Record::Dropout { input, mask }))
    }

    /// Mean softmax cross-entropy over all pixels against a one-hot target.
    pub fn softmax_ce_loss(&mut self, logits: VarId, target: &Tensor<S>) -> Result<VarId> {
        let (value, softmax) = loss::softmax_ce_forward(self.value(logits), target)?;
        Ok(self.push(
            Tensor::scalar(value),
            Record::SoftmaxCrossEntropy {
                logits,
                softmax,
                target: target.clone(),
            },
        ))
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, input: VarId) -> VarId {
        let total = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Record::Sum { input })
    }

    /// Scalar projection `sum(input * weights)` against constant weights;
    /// used by the gradient checker to probe full Jacobians.
    pub fn weighted_sum(&mut self, input: VarId, weights: &Tensor<S>) -> Result<VarId> {
        if !self.value(input).same_shape(weights) {
            return Err(Error::shape(
                "weighted_sum",
                self.value(input).shape(),
                weights.shape(),
            ));
        }
        let total = self
            .value(input)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(
            Tensor::scalar(total),
            Record::WeightedSum {
                input,
                weights: weights.clone(),
            },
        ))
    }

    /// Reverse accumulation from a scalar loss. Every variable gets a
    /// gradient; leaves unreachable from `loss` keep zeros.
    pub fn backward(&self, loss: VarId) -> Result<Gradients<S>> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Tape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Vec<S>> = self
            .nodes
            .iter()
            .map(|n| vec![S::zero(); n.value.numel()])
            .collect();
        grads[loss.0][0] = S::one();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if grads[idx].iter().all(|g| *g == S::zero()) {
                continue;
            }
            // Temporaries keep the borrow on `grads` simple; sizes here are
            // desk-scale so the extra allocations are irrelevant.
            let gout = std::mem::take(&mut grads[idx]);
            match &node.record {
                Record::Leaf => {}
                Record::Conv2d {
                    input,
                    weight,
                    bias,
                    pad,
                } => {
                    let (gin, gw, gb) =
                        conv::conv2d_backward(self.value(*input), self.value(*weight), &node.value, &gout, *pad);
                    accumulate(&mut grads[input.0], &gin);
                    accumulate(&mut grads[weight.0], &gw);
                    accumulate(&mut grads[bias.0], &gb);
                }
                Record::ConvTranspose2d {
                    input,
                    weight,
                    bias,
                } => {
                    let (gin, gw, gb) =
                        conv::conv_transpose2d_backward(self.value(*input), self.value(*weight), &node.value, &gout);
                    accumulate(&mut grads[input.0], &gin);
                    accumulate(&mut grads[weight.0], &gw);
                    accumulate(&mut grads[bias.0], &gb);
                }
                Record::MaxPool2d { input, argmax } => {
                    for (out_idx, &src) in argmax.iter().enumerate() {
                        grads[input.0][src] += gout[out_idx];
                    }
                }
                Record::Relu { input } => {
                    let x = self.value(*input).data();
                    for (i, g) in gout.iter().enumerate() {
                        if x[i] > S::zero() {
                            grads[input.0][i] += *g;
                        }
                    }
                }
                Record::Sigmoid { input } => {
                    let y = node.value.data();
                    for (i, g) in gout.iter().enumerate() {
                        grads[input.0][i] += *g * y[i] * (S::one() - y[i]);
                    }
                }
                Record::Add { lhs, rhs } => {
                    accumulate(&mut grads[lhs.0], &gout);
                    accumulate(&mut grads[rhs.0], &gout);
                }
                Record::Concat {
                    lhs,
                    rhs,
                    lhs_channels,
                } => {
                    let (gl, gr) = ops::concat_backward(
                        self.value(*lhs).shape(),
                        self.value(*rhs).shape(),
                        *lhs_channels,
                        &gout,
                    );
                    accumulate(&mut grads[lhs.0], &gl);
                    accumulate(&mut grads[rhs.0], &gr);
                }
                Record::UpsampleNearest2x { input } => {
                    let gin = ops::upsample_nearest2x_backward(self.value(*input).shape(), &gout);
                    accumulate(&mut grads[input.0], &gin);
                }
                Record::ChannelScale { input, gate } => {
                    let (gin, ggate) =
                        ops::channel_scale_backward(self.value(*input), self.value(*gate), &gout);
                    accumulate(&mut grads[input.0], &gin);
                    accumulate(&mut grads[gate.0], &ggate);
                }
                Record::BatchNorm {
                    input,
                    gamma,
                    normalized,
                    inv_std,
                } => {
                    let (gin, ggamma) = norm::batch_norm_backward(
                        self.value(*input).shape(),
                        self.value(*gamma).data(),
                        normalized,
                        inv_std,
                        &gout,
                    );
                    accumulate(&mut grads[input.0], &gin);
                    accumulate(&mut grads[gamma.0], &ggamma);
                }
                Record::FrozenNorm {
                    input,
                    gamma,
                    normalized,
                    scale,
                } => {
                    let (gin, ggamma) = norm::batch_norm_frozen_backward(
                        self.value(*input).shape(),
                        normalized,
                        scale,
                        &gout,
                    );
                    accumulate(&mut grads[input.0], &gin);
                    accumulate(&mut grads[gamma.0], &ggamma);
                }
                Record::Dropout { input, mask } => {
                    for (i, g) in gout.iter().enumerate() {
                        grads[input.0][i] += *g * mask[i];
                    }
                }
                Record::SoftmaxCrossEntropy {
                    logits,
                    softmax,
                    target,
                } => {
                    let gin = loss::softmax_ce_backward(self.value(*logits).shape(), softmax, target, gout[0]);
                    accumulate(&mut grads[logits.0], &gin);
                }
                Record::Sum { input } => {
                    for g in grads[input.0].iter_mut() {
                        *g += gout[0];
                    }
                }
                Record::WeightedSum { input, weights } => {
                    let w = weights.data();
                    for (i, slot) in grads[input.0].iter_mut().enumerate() {
                        *slot += gout[0] * w[i];
                    }
                }
            }
            grads[idx] = gout;
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Scalar>(target: &mut [S], src: &[S]) {
    debug_assert_eq!(target.len(), src.len());
    for (t, s) in target.iter_mut().zip(src) {
        *t += *s;
    }
}
