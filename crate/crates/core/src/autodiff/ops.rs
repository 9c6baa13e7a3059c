//! Pointwise and structural kernels shared by the tape and the
//! inference-mode forward pass.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| S::one() / (S::one() + (-v).exp()))
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if !a.same_shape(b) {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// 2x2 stride-2 max pooling. Also returns, per output element, the flat
/// input index of the chosen maximum; ties resolve to the first element in
/// row-major window order so replays are bit-stable.
pub fn maxpool2d_forward<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool2d needs even spatial dims, got {h}x{w}"
        )));
    }
    let (h_out, w_out) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * h_out * w_out);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for yo in 0..h_out {
            for xo in 0..w_out {
                let mut best_idx = base + (2 * yo) * w + 2 * xo;
                let mut best = data[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * yo + dy) * w + 2 * xo + dx;
                    if data[idx] > best {
                        best = data[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, h_out, w_out], out)?, argmax))
}

/// Channel-axis concatenation of two `N x C x H x W` tensors.
pub fn concat<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape("concat", a.shape(), b.shape()));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity((ca + cb) * n * plane);
    for ni in 0..n {
        out.extend_from_slice(&a.data()[ni * ca * plane..][..ca * plane]);
        out.extend_from_slice(&b.data()[ni * cb * plane..][..cb * plane]);
    }
    Tensor::new(vec![n, ca + cb, h, w], out)
}

pub(crate) fn concat_backward<S: Scalar>(
    a_shape: &[usize],
    b_shape: &[usize],
    a_channels: usize,
    gout: &[S],
) -> (Vec<S>, Vec<S>) {
    let (n, _, h, w) = (a_shape[0], a_shape[1], a_shape[2], a_shape[3]);
    let b_channels = b_shape[1];
    let plane = h * w;
    let mut ga = Vec::with_capacity(n * a_channels * plane);
    let mut gb = Vec::with_capacity(n * b_channels * plane);
    let stride = (a_channels + b_channels) * plane;
    for ni in 0..n {
        ga.extend_from_slice(&gout[ni * stride..][..a_channels * plane]);
        gb.extend_from_slice(&gout[ni * stride + a_channels * plane..][..b_channels * plane]);
    }
    (ga, gb)
}

/// Nearest-neighbor upsampling by exactly 2x in both spatial dims.
pub fn upsample_nearest2x<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    let data = x.data();
    let mut out = vec![S::zero(); n * c * 4 * h * w];
    let w_out = 2 * w;
    for plane in 0..n * c {
        let src = &data[plane * h * w..][..h * w];
        let dst = &mut out[plane * 4 * h * w..][..4 * h * w];
        for y in 0..h {
            for x_ in 0..w {
                let v = src[y * w + x_];
                dst[(2 * y) * w_out + 2 * x_] = v;
                dst[(2 * y) * w_out + 2 * x_ + 1] = v;
                dst[(2 * y + 1) * w_out + 2 * x_] = v;
                dst[(2 * y + 1) * w_out + 2 * x_ + 1] = v;
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], out)
}

pub(crate) fn upsample_nearest2x_backward<S: Scalar>(in_shape: &[usize], gout: &[S]) -> Vec<S> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let w_out = 2 * w;
    let mut gin = vec![S::zero(); n * c * h * w];
    for plane in 0..n * c {
        let g = &gout[plane * 4 * h * w..][..4 * h * w];
        let dst = &mut gin[plane * h * w..][..h * w];
        for y in 0..h {
            for x_ in 0..w {
                dst[y * w + x_] = g[(2 * y) * w_out + 2 * x_]
                    + g[(2 * y) * w_out + 2 * x_ + 1]
                    + g[(2 * y + 1) * w_out + 2 * x_]
                    + g[(2 * y + 1) * w_out + 2 * x_ + 1];
            }
        }
    }
    gin
}

/// Multiplies every channel of `x` (`N x C x H x W`) by a single-channel
/// spatial gate (`N x 1 x H x W`).
pub fn channel_scale<S: Scalar>(x: &Tensor<S>, gate: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    let (ng, cg, hg, wg) = gate.dims4()?;
    if (n, 1, h, w) != (ng, cg, hg, wg) {
        return Err(Error::shape("channel_scale gate", x.shape(), gate.shape()));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(x.numel());
    for ni in 0..n {
        let g = &gate.data()[ni * plane..][..plane];
        for ci in 0..c {
            let src = &x.data()[(ni * c + ci) * plane..][..plane];
            out.extend(src.iter().zip(g).map(|(&v, &gv)| v * gv));
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn channel_scale_backward<S: Scalar>(
    x: &Tensor<S>,
    gate: &Tensor<S>,
    gout: &[S],
) -> (Vec<S>, Vec<S>) {
    let (n, c, h, w) = x.dims4().expect("checked in forward");
    let plane = h * w;
    let mut gx = vec![S::zero(); x.numel()];
    let mut ggate = vec![S::zero(); gate.numel()];
    for ni in 0..n {
        let g = &gate.data()[ni * plane..][..plane];
        let gg = &mut ggate[ni * plane..][..plane];
        for ci in 0..c {
            let off = (ni * c + ci) * plane;
            let src = &x.data()[off..][..plane];
            let go = &gout[off..][..plane];
            let dst = &mut gx[off..][..plane];
            for i in 0..plane {
                dst[i] = go[i] * g[i];
                gg[i] += go[i] * src[i];
            }
        }
    }
    (gx, ggate)
}

/// Inverted dropout: each element independently survives with probability
/// `1 - rate` and is scaled by `1/(1-rate)` so activations keep their
/// expectation. Returns the output and the per-element scale mask. One RNG
/// draw is consumed per element even at rate 0, keeping downstream draws
/// aligned across rates.
pub fn dropout_train<S: Scalar>(
    x: &Tensor<S>,
    rate: f64,
    rng: &mut Rng,
) -> Result<(Tensor<S>, Vec<S>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = S::cast(1.0 / (1.0 - rate));
    let mask: Vec<S> = (0..x.numel())
        .map(|_| if rng.next_f64() < rate { S::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn maxpool_picks_window_maxima() {
        #[rustfmt::skip]
        let x = t(&[1, 1, 4, 4], &[
            1., 2., 5., 0.,
            3., 4., 1., 1.,
            9., 0., 2., 2.,
            0., 0., 2., 8.,
        ]);
        let (out, argmax) = maxpool2d_forward(&x).unwrap();
        assert_eq!(out.shape(), [1, 1, 2, 2]);
        assert_eq!(out.data(), &[4., 5., 9., 8.]);
        assert_eq!(argmax, vec![5, 2, 8, 15]);
    }

    #[test]
    fn maxpool_tie_goes_to_first_in_row_major_order() {
        let x = t(&[1, 1, 2, 2], &[7., 7., 7., 7.]);
        let (out, argmax) = maxpool2d_forward(&x).unwrap();
        assert_eq!(out.data(), &[7.]);
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let x = t(&[1, 1, 3, 4], &[0.; 12]);
        assert!(maxpool2d_forward(&x).is_err());
    }

    #[test]
    fn concat_stacks_channels_per_sample() {
        let a = t(&[2, 1, 1, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 2, 1, 2], &[10., 20., 30., 40., 50., 60., 70., 80.]);
        let out = concat(&a, &b).unwrap();
        assert_eq!(out.shape(), [2, 3, 1, 2]);
        assert_eq!(
            out.data(),
            &[1., 2., 10., 20., 30., 40., 3., 4., 50., 60., 70., 80.]
        );
    }

    #[test]
    fn upsample_repeats_each_pixel_four_times() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let out = upsample_nearest2x(&x).unwrap();
        #[rustfmt::skip]
        let want = [
            1., 1., 2., 2.,
            1., 1., 2., 2.,
            3., 3., 4., 4.,
            3., 3., 4., 4.,
        ];
        assert_eq!(out.data(), &want);
    }

    #[test]
    fn channel_scale_broadcasts_gate_over_channels() {
        let x = t(&[1, 2, 1, 2], &[1., 2., 3., 4.]);
        let gate = t(&[1, 1, 1, 2], &[0.5, 2.0]);
        let out = channel_scale(&x, &gate).unwrap();
        assert_eq!(out.data(), &[0.5, 4.0, 1.5, 8.0]);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = Rng::new(7);
        let x = t(&[1, 1, 2, 2], &[1., -2., 3., 0.5]);
        let (out, mask) = dropout_train(&x, 0.0, &mut rng).unwrap();
        assert_eq!(out.data(), x.data());
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn dropout_scales_survivors_to_preserve_expectation() {
        let mut rng = Rng::new(99);
        let x = t(&[1, 1, 10, 10], &[1.0; 100]);
        let (out, _) = dropout_train(&x, 0.5, &mut rng).unwrap();
        for &v in out.data() {
            assert!(v == 0.0 || v == 2.0);
        }
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count();
        assert!((25..=75).contains(&zeros), "rate 0.5 gave {zeros} zeros");
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = Rng::new(1);
        let x = t(&[1, 1, 1, 1], &[1.0]);
        assert!(dropout_train(&x, 1.0, &mut rng).is_err());
        assert!(dropout_train(&x, -0.1, &mut rng).is_err());
    }

    #[test]
    fn relu_zeroes_negatives_only() {
        let x = t(&[1, 1, 1, 4], &[-1., 0., 0.5, 2.]);
        assert_eq!(relu(&x).data(), &[0., 0., 0.5, 2.]);
    }

    #[test]
    fn sigmoid_midpoint_and_symmetry() {
        let x = t(&[1, 1, 1, 3], &[0., 2., -2.]);
        let y = sigmoid(&x);
        assert!((y.data()[0] - 0.5).abs() < 1e-15);
        assert!((y.data()[1] + y.data()[2] - 1.0).abs() < 1e-15);
    }
}
