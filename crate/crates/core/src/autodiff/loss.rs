//! Categorical cross-entropy over per-pixel softmax.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-pixel softmax over the channel axis of an `N x C x H x W` tensor,
/// stabilized by subtracting the per-pixel maximum before exponentiating.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = logits.dims4()?;
    let plane = h * w;
    let data = logits.data();
    let mut out = vec![S::zero(); logits.numel()];
    for ni in 0..n {
        for p in 0..plane {
            let at = |ci: usize| (ni * c + ci) * plane + p;
            let mut m = data[at(0)];
            for ci in 1..c {
                if data[at(ci)] > m {
                    m = data[at(ci)];
                }
            }
            let mut denom = S::zero();
            for ci in 0..c {
                let e = (data[at(ci)] - m).exp();
                out[at(ci)] = e;
                denom += e;
            }
            for ci in 0..c {
                out[at(ci)] /= denom;
            }
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean cross-entropy between per-pixel softmax of `logits` and a one-hot
/// `target` of the same shape. Targets whose channel sum strays from 1 (or
/// with entries outside [0, 1]) are rejected. Returns the scalar loss and the
/// softmax probabilities for the backward rule.
pub(crate) fn softmax_ce_forward<S: Scalar>(
    logits: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<(S, Vec<S>)> {
    let (n, c, h, w) = logits.dims4()?;
    if !logits.same_shape(target) {
        return Err(Error::shape("cross_entropy target", logits.shape(), target.shape()));
    }
    let plane = h * w;
    let tol = S::cast(1e-12);
    let tdata = target.data();
    for ni in 0..n {
        for p in 0..plane {
            let mut sum = S::zero();
            for ci in 0..c {
                let t = tdata[(ni * c + ci) * plane + p];
                if t < S::zero() || t > S::one() {
                    return Err(Error::invalid(format!(
                        "cross_entropy target entry {} outside [0, 1]",
                        t.as_f64()
                    )));
                }
                sum += t;
            }
            if (sum - S::one()).abs() > tol {
                return Err(Error::invalid(format!(
                    "cross_entropy target channel sum {} is not 1",
                    sum.as_f64()
                )));
            }
        }
    }

    let probs = softmax(logits)?;
    let ldata = logits.data();
    let pdata = probs.data();
    let mut total = S::zero();
    for ni in 0..n {
        for p in 0..plane {
            let at = |ci: usize| (ni * c + ci) * plane + p;
            // log p_c = (l_c - m) - log sum exp(l - m), computed directly so
            // confident predictions don't round through p = 1.
            let mut m = ldata[at(0)];
            for ci in 1..c {
                if ldata[at(ci)] > m {
                    m = ldata[at(ci)];
                }
            }
            let mut lse = S::zero();
            for ci in 0..c {
                lse += (ldata[at(ci)] - m).exp();
            }
            let lse = lse.ln();
            for ci in 0..c {
                let t = tdata[at(ci)];
                if t > S::zero() {
                    total -= t * (ldata[at(ci)] - m - lse);
                }
            }
        }
    }
    let count = S::cast((n * plane) as f64);
    Ok((total / count, pdata.to_vec()))
}

/// d(mean CE)/d(logits) = (softmax - target) / pixel_count, scaled by the
/// upstream gradient.
pub(crate) fn softmax_ce_backward<S: Scalar>(
    logits_shape: &[usize],
    softmax: &[S],
    target: &Tensor<S>,
    gout: S,
) -> Vec<S> {
    let (n, _, h, w) = (
        logits_shape[0],
        logits_shape[1],
        logits_shape[2],
        logits_shape[3],
    );
    let scale = gout / S::cast((n * h * w) as f64);
    softmax
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * scale)
        .collect()
}
