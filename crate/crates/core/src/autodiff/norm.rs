//! Scale-only batch normalization.
//!
//! Each channel is normalized to zero mean / unit variance (biased variance,
//! epsilon 1e-5) and multiplied by a learned per-channel gamma; there is no
//! beta because every normalization here is followed by a bias-carrying
//! convolution or an activation that doesn't need one. Training mode uses
//! batch statistics and folds them into running estimates with momentum 0.1;
//! inference mode uses the running estimates and refuses to run before any
//! training step has populated them.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean/variance estimates for one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub initialized: bool,
}

impl<S: Scalar> RunningStats<S> {
    /// Fresh estimates: zero mean, unit variance, flagged uninitialized so
    /// inference before any training step is rejected rather than silently
    /// using the placeholder values.
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Marks externally supplied estimates (e.g. loaded from a weights file)
    /// as ready for inference.
    pub fn set(&mut self, mean: Vec<S>, var: Vec<S>) {
        debug_assert_eq!(mean.len(), var.len());
        self.mean = mean;
        self.var = var;
        self.initialized = true;
    }
}

pub(crate) struct TrainForward<S> {
    pub output: Tensor<S>,
    pub normalized: Vec<S>,
    pub inv_std: Vec<S>,
}

pub(crate) fn batch_norm_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    running: &mut RunningStats<S>,
) -> Result<TrainForward<S>> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] {
        return Err(Error::shape("batch_norm gamma", &[c], gamma.shape()));
    }
    if running.channels() != c {
        return Err(Error::shape(
            "batch_norm running stats",
            &[c],
            &[running.channels()],
        ));
    }
    let plane = h * w;
    let count = S::cast((n * plane) as f64);
    let eps = S::cast(BN_EPS);
    let momentum = S::cast(BN_MOMENTUM);

    let data = x.data();
    let mut normalized = vec![S::zero(); x.numel()];
    let mut out = vec![S::zero(); x.numel()];
    let mut inv_std = vec![S::zero(); c];

    for ci in 0..c {
        let mut sum = S::zero();
        let mut sq_sum = S::zero();
        for ni in 0..n {
            for &v in &data[(ni * c + ci) * plane..][..plane] {
                sum += v;
                sq_sum += v * v;
            }
        }
        let mean = sum / count;
        let var = (sq_sum / count - mean * mean).max(S::zero());
        let istd = S::one() / (var + eps).sqrt();
        inv_std[ci] = istd;

        running.mean[ci] = (S::one() - momentum) * running.mean[ci] + momentum * mean;
        running.var[ci] = (S::one() - momentum) * running.var[ci] + momentum * var;

        let g = gamma.data()[ci];
        for ni in 0..n {
            let off = (ni * c + ci) * plane;
            for i in off..off + plane {
                let xhat = (data[i] - mean) * istd;
                normalized[i] = xhat;
                out[i] = g * xhat;
            }
        }
    }
    running.initialized = true;
    Ok(TrainForward {
        output: Tensor::new(x.shape().to_vec(), out)?,
        normalized,
        inv_std,
    })
}

/// Inference-mode forward that also keeps what the backward rule needs.
/// The running statistics are constants here, so the input gradient is a
/// plain per-channel scale — no batch-coupling terms.
pub(crate) struct FrozenForward<S> {
    pub output: Tensor<S>,
    /// `(x - mean) * inv_std`, before gamma.
    pub normalized: Vec<S>,
    /// `gamma * inv_std` per channel.
    pub scale: Vec<S>,
}

pub(crate) fn batch_norm_frozen<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    running: &RunningStats<S>,
) -> Result<FrozenForward<S>> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || running.channels() != c {
        return Err(Error::shape("batch_norm gamma", &[c], gamma.shape()));
    }
    if !running.initialized {
        return Err(Error::UninitializedStats);
    }
    let plane = h * w;
    let eps = S::cast(BN_EPS);
    let mut out = vec![S::zero(); x.numel()];
    let mut normalized = vec![S::zero(); x.numel()];
    let mut scale = vec![S::zero(); c];
    for ci in 0..c {
        let istd = S::one() / (running.var[ci] + eps).sqrt();
        let mean = running.mean[ci];
        let g = gamma.data()[ci];
        scale[ci] = g * istd;
        for ni in 0..n {
            let off = (ni * c + ci) * plane;
            for i in off..off + plane {
                let xhat = (x.data()[i] - mean) * istd;
                normalized[i] = xhat;
                out[i] = g * xhat;
            }
        }
    }
    Ok(FrozenForward {
        output: Tensor::new(x.shape().to_vec(), out)?,
        normalized,
        scale,
    })
}

/// Inference-mode backward: statistics are constants, so the input gradient
/// is `gamma * inv_std` per channel and gamma accumulates against `x_hat`.
pub(crate) fn batch_norm_frozen_backward<S: Scalar>(
    x_shape: &[usize],
    normalized: &[S],
    scale: &[S],
    gout: &[S],
) -> (Vec<S>, Vec<S>) {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let plane = h * w;
    let mut gin = vec![S::zero(); gout.len()];
    let mut ggamma = vec![S::zero(); c];
    for ci in 0..c {
        for ni in 0..n {
            let off = (ni * c + ci) * plane;
            for i in off..off + plane {
                gin[i] = scale[ci] * gout[i];
                ggamma[ci] += normalized[i] * gout[i];
            }
        }
    }
    (gin, ggamma)
}

/// Inference-mode normalization with the running estimates.
pub fn batch_norm_eval<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    running: &RunningStats<S>,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || running.channels() != c {
        return Err(Error::shape("batch_norm gamma", &[c], gamma.shape()));
    }
    if !running.initialized {
        return Err(Error::UninitializedStats);
    }
    let plane = h * w;
    let eps = S::cast(BN_EPS);
    let mut out = vec![S::zero(); x.numel()];
    for ci in 0..c {
        let scale = gamma.data()[ci] / (running.var[ci] + eps).sqrt();
        let mean = running.mean[ci];
        for ni in 0..n {
            let off = (ni * c + ci) * plane;
            for i in off..off + plane {
                out[i] = (x.data()[i] - mean) * scale;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Training-mode backward. `normalized` and `inv_std` come from the forward
/// pass; the batch statistics are functions of the input, so the input
/// gradient carries the usual mean/variance correction terms.
pub(crate) fn batch_norm_backward<S: Scalar>(
    x_shape: &[usize],
    gamma: &[S],
    normalized: &[S],
    inv_std: &[S],
    gout: &[S],
) -> (Vec<S>, Vec<S>) {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let plane = h * w;
    let count = S::cast((n * plane) as f64);

    let mut gin = vec![S::zero(); gout.len()];
    let mut ggamma = vec![S::zero(); c];

    for ci in 0..c {
        let g = gamma[ci];
        let istd = inv_std[ci];
        let mut sum_dxhat = S::zero();
        let mut sum_dxhat_xhat = S::zero();
        for ni in 0..n {
            let off = (ni * c + ci) * plane;
            for i in off..off + plane {
                let dxhat = gout[i] * g;
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * normalized[i];
                ggamma[ci] += gout[i] * normalized[i];
            }
        }
        for ni in 0..n {
            let off = (ni * c + ci) * plane;
            for i in off..off + plane {
                let dxhat = gout[i] * g;
                gin[i] = istd * (dxhat - sum_dxhat / count - normalized[i] * sum_dxhat_xhat / count);
            }
        }
    }
    (gin, ggamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn train_output_has_zero_mean_unit_variance_per_channel() {
        let mut rng = Rng::new(3);
        let x: Tensor<f64> = Tensor::uniform(&[2, 3, 4, 4], -5.0, 5.0, &mut rng);
        let gamma: Tensor<f64> = Tensor::new(vec![3], vec![1.0; 3]).unwrap();
        let mut running = RunningStats::new(3);
        let fwd = batch_norm_train(&x, &gamma, &mut running).unwrap();
        let out = fwd.output.data();
        let plane = 16;
        for ci in 0..3 {
            let mut vals = Vec::new();
            for ni in 0..2 {
                vals.extend_from_slice(&out[(ni * 3 + ci) * plane..][..plane]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "variance {var}");
        }
    }

    #[test]
    fn gamma_scales_each_channel() {
        let x: Tensor<f64> = Tensor::new(vec![1, 2, 1, 2], vec![-1.0, 1.0, -2.0, 2.0]).unwrap();
        let gamma: Tensor<f64> = Tensor::new(vec![2], vec![3.0, 0.5]).unwrap();
        let mut running = RunningStats::new(2);
        let fwd = batch_norm_train(&x, &gamma, &mut running).unwrap();
        let out = fwd.output.data();
        assert!((out[1] / out[0] + 1.0).abs() < 1e-12);
        // Unit batch variance leaves an epsilon-sized dent: 1/sqrt(1+1e-5).
        assert!((out[0] + 3.0).abs() < 1e-4);
        assert!((out[2] + 0.5).abs() < 1e-4);
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let x: Tensor<f64> = Tensor::new(vec![1, 1, 1, 2], vec![4.0, 6.0]).unwrap();
        let gamma: Tensor<f64> = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut running = RunningStats::new(1);
        batch_norm_train(&x, &gamma, &mut running).unwrap();
        // From (0, 1): mean = 0.9*0 + 0.1*5 = 0.5, var = 0.9*1 + 0.1*1 = 1.0.
        assert!((running.mean[0] - 0.5).abs() < 1e-12);
        assert!((running.var[0] - 1.0).abs() < 1e-12);
        assert!(running.initialized);
        batch_norm_train(&x, &gamma, &mut running).unwrap();
        assert!((running.mean[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn eval_before_any_train_step_is_rejected() {
        let x: Tensor<f64> = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let gamma: Tensor<f64> = Tensor::new(vec![1], vec![1.0]).unwrap();
        let running: RunningStats<f64> = RunningStats::new(1);
        let err = batch_norm_eval(&x, &gamma, &running).unwrap_err();
        assert!(matches!(err, Error::UninitializedStats));
    }

    #[test]
    fn eval_uses_running_estimates_not_batch() {
        let gamma: Tensor<f64> = Tensor::new(vec![1], vec![2.0]).unwrap();
        let mut running = RunningStats::new(1);
        running.set(vec![10.0], vec![4.0]);
        let x: Tensor<f64> = Tensor::new(vec![1, 1, 1, 2], vec![10.0, 12.0]).unwrap();
        let out = batch_norm_eval(&x, &gamma, &running).unwrap();
        // (10-10)/2 * 2 = 0, (12-10)/2 * 2 = 2 (up to eps).
        assert!(out.data()[0].abs() < 1e-9);
        assert!((out.data()[1] - 2.0).abs() < 1e-4);
    }
}
