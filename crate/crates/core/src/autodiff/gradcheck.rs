//! Finite-difference verification of the tape's backward rules.
//!
//! Every check builds the same graph twice: once for analytic gradients via
//! [`Tape::backward`], and once per perturbed element for central
//! differences. Non-scalar ops are reduced through a fixed random projection
//! (`weighted_sum`) so the whole Jacobian acts on the probe. Errors are
//! reported as `|a - n| / max(1, |a|, |n|)`, which reads as absolute error
//! for small gradients and relative error for large ones.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::norm::RunningStats;
use super::{Tape, VarId};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const BATCH_NORM_TOLERANCE: f64 = 1e-4;

/// Result of checking one op; `max_rel_err` is over every element of every
/// differentiable input.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub op: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tolerance
    }
}

fn eval_loss<F>(inputs: &[Tensor<f64>], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let vars: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

/// Central differences of the scalar loss w.r.t. every element of every
/// input. The builder must be deterministic: it is re-invoked once per
/// perturbation (seed any RNG it uses internally).
pub fn numeric_gradients<F>(inputs: &[Tensor<f64>], step: f64, build: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for which in 0..inputs.len() {
        let mut g = vec![0.0; inputs[which].numel()];
        for i in 0..g.len() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[i] += step;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[i] -= step;
            g[i] = (eval_loss(&plus, build)? - eval_loss(&minus, build)?) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Analytic gradients of the loss w.r.t. every input, via one backward pass.
pub fn analytic_gradients<F>(inputs: &[Tensor<f64>], build: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let vars: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok(vars.iter().map(|&v| grads.of(v).to_vec()).collect())
}

/// `|a - n| / max(1, |a|, |n|)`, maximized over all inputs and elements.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (a_vec, n_vec) in analytic.iter().zip(numeric) {
        for (&a, &n) in a_vec.iter().zip(n_vec) {
            let denom = 1.0f64.max(a.abs()).max(n.abs());
            let err = (a - n).abs() / denom;
            if !err.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max(err);
        }
    }
    worst
}

/// Checks one op: analytic vs central-difference gradients for every input.
pub fn check_op<F>(
    op: &str,
    inputs: &[Tensor<f64>],
    tolerance: f64,
    build: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>,
{
    let analytic = analytic_gradients(inputs, &build)?;
    let numeric = numeric_gradients(inputs, DEFAULT_STEP, &build)?;
    let checked = analytic.iter().map(Vec::len).sum();
    Ok(CheckReport {
        op: op.to_string(),
        max_rel_err: max_relative_error(&analytic, &numeric),
        tolerance,
        checked,
    })
}

/// A check that must fail: the "analytic" gradient of `sum(x^2)` is
/// deliberately offset. Proves the comparison can detect a broken backward
/// rule; callers assert `!passed()`.
pub fn negative_control() -> Result<CheckReport> {
    let mut rng = Rng::new(20);
    let x = Tensor::uniform(&[1, 1, 3, 3], -2.0, 2.0, &mut rng);
    // loss(x) = sum(x^2): the projection weights are re-read from the
    // current value on every build, so the numeric gradient is 2x.
    let build = |tape: &mut Tape<f64>, vars: &[VarId]| -> Result<VarId> {
        let xv = tape.value(vars[0]).clone();
        tape.weighted_sum(vars[0], &xv)
    };
    let numeric = numeric_gradients(&[x.clone()], DEFAULT_STEP, &build)?;
    let corrupted: Vec<Vec<f64>> = vec![x.data().iter().map(|v| 2.0 * v + 0.5).collect()];
    Ok(CheckReport {
        op: "negative_control".to_string(),
        max_rel_err: max_relative_error(&corrupted, &numeric),
        tolerance: DEFAULT_TOLERANCE,
        checked: x.numel(),
    })
}

/// Draws in [-2, 2] but resamples any element within `margin` of 0, for ops
/// with a kink there (relu).
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut Rng) -> Tensor<f64> {
    let mut t: Tensor<f64> = Tensor::uniform(shape, -2.0, 2.0, rng);
    for v in t.data_mut() {
        while (*v).abs() < margin {
            *v = rng.uniform_in(-2.0, 2.0);
        }
    }
    t
}

/// Draws in [-2, 2] but keeps every 2x2 pooling window's values separated by
/// more than `margin`, so a perturbation can't flip the argmax mid-check.
fn pool_safe(shape: &[usize], margin: f64, rng: &mut Rng) -> Tensor<f64> {
    let (h, w) = (shape[2], shape[3]);
    let mut t: Tensor<f64> = Tensor::uniform(shape, -2.0, 2.0, rng);
    let planes = shape[0] * shape[1];
    let data = t.data_mut();
    for plane in 0..planes {
        let base = plane * h * w;
        for yo in 0..h / 2 {
            for xo in 0..w / 2 {
                let idx = [
                    base + (2 * yo) * w + 2 * xo,
                    base + (2 * yo) * w + 2 * xo + 1,
                    base + (2 * yo + 1) * w + 2 * xo,
                    base + (2 * yo + 1) * w + 2 * xo + 1,
                ];
                loop {
                    let mut ok = true;
                    'pairs: for i in 0..4 {
                        for j in i + 1..4 {
                            if (data[idx[i]] - data[idx[j]]).abs() < margin {
                                ok = false;
                                break 'pairs;
                            }
                        }
                    }
                    if ok {
                        break;
                    }
                    for &i in &idx {
                        data[i] = rng.uniform_in(-2.0, 2.0);
                    }
                }
            }
        }
    }
    t
}

/// Runs every op's check on `rounds` random shapes each (seeded), plus a
/// composite graph, and returns one report per (op, round).
pub fn full_suite(seed: u64, rounds: usize) -> Result<Vec<CheckReport>> {
    let mut rng = Rng::new(seed);
    let mut reports = Vec::new();

    for round in 0..rounds {
        let n = 1 + rng.below(2);
        let c = 1 + rng.below(3);
        let o = 1 + rng.below(3);
        let h = 2 * (1 + rng.below(3));
        let w = 2 * (1 + rng.below(3));

        // conv2d: 3x3 SAME and 1x1 variants alternate by round.
        let (k, pad) = if round % 2 == 0 { (3, 1) } else { (1, 0) };
        let x = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let wt = Tensor::uniform(&[o, c, k, k], -2.0, 2.0, &mut rng);
        let b = Tensor::uniform(&[o], -2.0, 2.0, &mut rng);
        let proj = Tensor::uniform(&[n, o, h, w], -1.0, 1.0, &mut rng);
        reports.push(check_op(
            "conv2d",
            &[x, wt, b],
            DEFAULT_TOLERANCE,
            move |tape, vars| {
                let y = tape.conv2d(vars[0], vars[1], vars[2], pad)?;
                tape.weighted_sum(y, &proj)
            },
        )?);

        let x = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let wt = Tensor::uniform(&[c, o, 2, 2], -2.0, 2.0, &mut rng);
        let b = Tensor::uniform(&[o], -2.0, 2.0, &mut rng);
        let proj = Tensor::uniform(&[n, o, 2 * h, 2 * w], -1.0, 1.0, &mut rng);
        reports.push(check_op(
            "conv_transpose2d",
            &[x, wt, b],
            DEFAULT_TOLERANCE,
            move |tape, vars| {
                let y = tape.conv_transpose2d(vars[0], vars[1], vars[2])?;
                tape.weighted_sum(y, &proj)
            },
        )?);

        let x = pool_safe(&[n, c, h, w], 1e-3, &mut rng);
        let proj = Tensor::uniform(&[n, c, h / 2, w / 2], -1.0, 1.0, &mut rng);
        reports.push(check_op("maxpool2d", &[x], DEFAULT_TOLERANCE, move |tape, vars| {
            let y = tape.maxpool2d(vars[0])?;
            tape.weighted_sum(y, &proj)
        })?);

        let x = away_from_zero(&[n, c, h, w], 1e-3, &mut rng);
        let proj = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng);
        reports.push(check_op("relu", &[x], DEFAULT_TOLERANCE, move |tape, vars| {
            let y = tape.relu(vars[0]);
            tape.weighted_sum(y, &proj)
        })?);

        let x = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let proj = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng);
        reports.push(check_op("sigmoid", &[x], DEFAULT_TOLERANCE, move |tape, vars| {
            let y = tape.sigmoid(vars[0]);
            tape.weighted_sum(y, &proj)
        })?);

        let a = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let bb = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let proj = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng);
        reports.push(check_op("add", &[a, bb], DEFAULT_TOLERANCE, move |tape, vars| {
            let y = tape.add(vars[0], vars[1])?;
            tape.weighted_sum(y, &proj)
        })?);

        let c2 = 1 + rng.below(3);
        let a = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let bb = Tensor::uniform(&[n, c2, h, w], -2.0, 2.0, &mut rng);
        let proj = Tensor::uniform(&[n, c + c2, h, w], -1.0, 1.0, &mut rng);
        reports.push(check_op("concat", &[a, bb], DEFAULT_TOLERANCE, move |tape, vars| {
            let y = tape.concat(vars[0], vars[1])?;
            tape.weighted_sum(y, &proj)
        })?);

        let x = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let proj = Tensor::uniform(&[n, c, 2 * h, 2 * w], -1.0, 1.0, &mut rng);
        reports.push(check_op(
            "upsample_nearest2x",
            &[x],
            DEFAULT_TOLERANCE,
            move |tape, vars| {
                let y = tape.upsample_nearest2x(vars[0])?;
                tape.weighted_sum(y, &proj)
            },
        )?);

        let x = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let gate = Tensor::uniform(&[n, 1, h, w], -2.0, 2.0, &mut rng);
        let proj = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng);
        reports.push(check_op(
            "channel_scale",
            &[x, gate],
            DEFAULT_TOLERANCE,
            move |tape, vars| {
                let y = tape.channel_scale(vars[0], vars[1])?;
                tape.weighted_sum(y, &proj)
            },
        )?);

        // Batch statistics shift under perturbation, so this one is checked
        // at the relaxed tolerance.
        let x = Tensor::uniform(&[2.max(n), c, h, w], -2.0, 2.0, &mut rng);
        let gamma = Tensor::uniform(&[c], 0.5, 1.5, &mut rng);
        let proj = Tensor::uniform(&[2.max(n), c, h, w], -1.0, 1.0, &mut rng);
        reports.push(check_op(
            "batch_norm",
            &[x, gamma],
            BATCH_NORM_TOLERANCE,
            move |tape, vars| {
                let mut stats = RunningStats::new(tape.value(vars[1]).numel());
                let y = tape.batch_norm(vars[0], vars[1], &mut stats)?;
                tape.weighted_sum(y, &proj)
            },
        )?);

        // Frozen statistics are constants, so the full tolerance applies.
        let x = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let gamma = Tensor::uniform(&[c], 0.5, 1.5, &mut rng);
        let mean: Vec<f64> = (0..c).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.uniform_in(0.2, 2.0)).collect();
        let proj = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng);
        reports.push(check_op(
            "frozen_norm",
            &[x, gamma],
            DEFAULT_TOLERANCE,
            move |tape, vars| {
                let mut stats = RunningStats::new(mean.len());
                stats.set(mean.clone(), var.clone());
                let y = tape.frozen_norm(vars[0], vars[1], &stats)?;
                tape.weighted_sum(y, &proj)
            },
        )?);

        let x = Tensor::uniform(&[n, c, h, w], -2.0, 2.0, &mut rng);
        let proj = Tensor::uniform(&[n, c, h, w], -1.0, 1.0, &mut rng);
        let mask_seed = rng.next_u64();
        reports.push(check_op("dropout", &[x], DEFAULT_TOLERANCE, move |tape, vars| {
            let mut mask_rng = Rng::new(mask_seed);
            let y = tape.dropout(vars[0], 0.3, &mut mask_rng)?;
            tape.weighted_sum(y, &proj)
        })?);

        let classes = 2 + rng.below(3);
        let logits = Tensor::uniform(&[n, classes, h, w], -2.0, 2.0, &mut rng);
        let mut target = Tensor::zeros(&[n, classes, h, w]);
        for ni in 0..n {
            for p in 0..h * w {
                let cls = rng.below(classes);
                target.data_mut()[(ni * classes + cls) * h * w + p] = 1.0;
            }
        }
        reports.push(check_op(
            "softmax_ce_loss",
            &[logits],
            DEFAULT_TOLERANCE,
            move |tape, vars| tape.softmax_ce_loss(vars[0], &target),
        )?);

        // Composite graph: conv -> relu -> pool -> loss, gradients flowing
        // through several records at once.
        let x = Tensor::uniform(&[1, c, h, w], -2.0, 2.0, &mut rng);
        let wt = Tensor::uniform(&[o, c, 3, 3], -0.5, 0.5, &mut rng);
        let b = Tensor::uniform(&[o], -0.5, 0.5, &mut rng);
        let mut target = Tensor::zeros(&[1, o, h / 2, w / 2]);
        for p in 0..(h / 2) * (w / 2) {
            let cls = rng.below(o);
            target.data_mut()[cls * (h / 2) * (w / 2) + p] = 1.0;
        }
        reports.push(check_op(
            "composite_conv_relu_pool_ce",
            &[x, wt, b],
            DEFAULT_TOLERANCE,
            move |tape, vars| {
                let y = tape.conv2d(vars[0], vars[1], vars[2], 1)?;
                let y = tape.relu(y);
                let y = tape.maxpool2d(y)?;
                tape.softmax_ce_loss(y, &target)
            },
        )?);
    }
    Ok(reports)
}
