//! Convolution kernels: direct stride-1 convolution with symmetric zero
//! padding, and the 2x2 stride-2 transposed convolution used for upsampling.
//!
//! Loops are arranged so the innermost axis walks contiguous rows of both
//! operands, which is what lets the optimizer vectorize them.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `input` is `N x C x H x W`, `weight` is `O x C x Kh x Kw`, `bias` has one
/// entry per output channel. Output is `N x O x (H + 2 pad - Kh + 1) x ...`.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    pad: usize,
) -> Result<Tensor<S>> {
    let (n, c_in, h, w) = input.dims4()?;
    let (o_ch, c_w, kh, kw) = weight.dims4()?;
    if c_w != c_in {
        return Err(Error::shape("conv2d channels", input.shape(), weight.shape()));
    }
    if bias.shape() != [o_ch] {
        return Err(Error::shape("conv2d bias", &[o_ch], bias.shape()));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::invalid(format!(
            "conv2d kernel {kh}x{kw} does not fit a {h}x{w} input with padding {pad}"
        )));
    }
    let h_out = h + 2 * pad - kh + 1;
    let w_out = w + 2 * pad - kw + 1;

    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = vec![S::zero(); n * o_ch * h_out * w_out];

    for ni in 0..n {
        for oi in 0..o_ch {
            let out_plane = &mut out[(ni * o_ch + oi) * h_out * w_out..][..h_out * w_out];
            out_plane.fill(b[oi]);
            for ci in 0..c_in {
                let in_plane = &x[(ni * c_in + ci) * h * w..][..h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wt[((oi * c_in + ci) * kh + ky) * kw + kx];
                        // Output rows where input row y_out + ky - pad is in range.
                        let y0 = pad.saturating_sub(ky);
                        let y1 = (h + pad - ky).min(h_out);
                        let x0 = pad.saturating_sub(kx);
                        let x1 = (w + pad - kx).min(w_out);
                        for yo in y0..y1 {
                            let yi = yo + ky - pad;
                            let src = &in_plane[yi * w + (x0 + kx - pad)..][..x1 - x0];
                            let dst = &mut out_plane[yo * w_out + x0..][..x1 - x0];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * *s;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, o_ch, h_out, w_out], out)
}

/// Gradients of [`conv2d_forward`] w.r.t. input, weight, and bias. `output`
/// is the forward result (used only for its shape) and `gout` its gradient.
pub(crate) fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    output: &Tensor<S>,
    gout: &[S],
    pad: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let (n, c_in, h, w) = input.dims4().expect("checked in forward");
    let (o_ch, _, kh, kw) = weight.dims4().expect("checked in forward");
    let (_, _, h_out, w_out) = output.dims4().expect("conv output is rank 4");

    let x = input.data();
    let wt = weight.data();
    let mut gin = vec![S::zero(); x.len()];
    let mut gw = vec![S::zero(); wt.len()];
    let mut gb = vec![S::zero(); o_ch];

    for ni in 0..n {
        for oi in 0..o_ch {
            let gout_plane = &gout[(ni * o_ch + oi) * h_out * w_out..][..h_out * w_out];
            gb[oi] += gout_plane.iter().copied().sum();
            for ci in 0..c_in {
                let in_plane = &x[(ni * c_in + ci) * h * w..][..h * w];
                let gin_plane = &mut gin[(ni * c_in + ci) * h * w..][..h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((oi * c_in + ci) * kh + ky) * kw + kx;
                        let wv = wt[widx];
                        let y0 = pad.saturating_sub(ky);
                        let y1 = (h + pad - ky).min(h_out);
                        let x0 = pad.saturating_sub(kx);
                        let x1 = (w + pad - kx).min(w_out);
                        let mut wgrad = S::zero();
                        for yo in y0..y1 {
                            let yi = yo + ky - pad;
                            let g_row = &gout_plane[yo * w_out + x0..][..x1 - x0];
                            let x_off = yi * w + (x0 + kx - pad);
                            for (j, g) in g_row.iter().enumerate() {
                                wgrad += *g * in_plane[x_off + j];
                                gin_plane[x_off + j] += *g * wv;
                            }
                        }
                        gw[widx] += wgrad;
                    }
                }
            }
        }
    }
    (gin, gw, gb)
}

/// `input` is `N x C x H x W`, `weight` is `C x O x 2 x 2`; the kernel stride
/// equals its size, so every output pixel receives exactly one contribution
/// per input channel and the output is `N x O x 2H x 2W`.
pub fn conv_transpose2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_w, o_ch, kh, kw) = weight.dims4()?;
    if c_w != c_in || kh != 2 || kw != 2 {
        return Err(Error::shape(
            "conv_transpose2d weight (want C x O x 2 x 2)",
            input.shape(),
            weight.shape(),
        ));
    }
    if bias.shape() != [o_ch] {
        return Err(Error::shape("conv_transpose2d bias", &[o_ch], bias.shape()));
    }
    let (h_out, w_out) = (2 * h, 2 * w);
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = vec![S::zero(); n * o_ch * h_out * w_out];

    for ni in 0..n {
        for oi in 0..o_ch {
            let out_plane = &mut out[(ni * o_ch + oi) * h_out * w_out..][..h_out * w_out];
            out_plane.fill(b[oi]);
            for ci in 0..c_in {
                let in_plane = &x[(ni * c_in + ci) * h * w..][..h * w];
                for ky in 0..2 {
                    for kx in 0..2 {
                        let wv = wt[((ci * o_ch + oi) * 2 + ky) * 2 + kx];
                        for yi in 0..h {
                            let in_row = &in_plane[yi * w..][..w];
                            let out_row = &mut out_plane[(2 * yi + ky) * w_out..][..w_out];
                            for (xi, s) in in_row.iter().enumerate() {
                                out_row[2 * xi + kx] += wv * *s;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, o_ch, h_out, w_out], out)
}

pub(crate) fn conv_transpose2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    output: &Tensor<S>,
    gout: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let (n, c_in, h, w) = input.dims4().expect("checked in forward");
    let (_, o_ch, _, _) = weight.dims4().expect("checked in forward");
    let (_, _, h_out, w_out) = output.dims4().expect("transpose output is rank 4");

    let x = input.data();
    let wt = weight.data();
    let mut gin = vec![S::zero(); x.len()];
    let mut gw = vec![S::zero(); wt.len()];
    let mut gb = vec![S::zero(); o_ch];

    for ni in 0..n {
        for oi in 0..o_ch {
            let gout_plane = &gout[(ni * o_ch + oi) * h_out * w_out..][..h_out * w_out];
            gb[oi] += gout_plane.iter().copied().sum();
            for ci in 0..c_in {
                let in_plane = &x[(ni * c_in + ci) * h * w..][..h * w];
                let gin_plane = &mut gin[(ni * c_in + ci) * h * w..][..h * w];
                for ky in 0..2 {
                    for kx in 0..2 {
                        let widx = ((ci * o_ch + oi) * 2 + ky) * 2 + kx;
                        let wv = wt[widx];
                        let mut wgrad = S::zero();
                        for yi in 0..h {
                            let g_row = &gout_plane[(2 * yi + ky) * w_out..][..w_out];
                            let in_row = &in_plane[yi * w..][..w];
                            let gin_row = &mut gin_plane[yi * w..][..w];
                            for xi in 0..w {
                                let g = g_row[2 * xi + kx];
                                wgrad += g * in_row[xi];
                                gin_row[xi] += g * wv;
                            }
                        }
                        gw[widx] += wgrad;
                    }
                }
            }
        }
    }
    (gin, gw, gb)
}
