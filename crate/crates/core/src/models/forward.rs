//! One shared architecture walk serving both training and inference.
//! Training mode records batch-statistics normalization and live dropout;
//! eval mode freezes the running statistics and drops nothing, so repeated
//! calls are bit-identical.

use super::{DoubleConv, Fuse, Gate, Model, ParamId, ParamSet, StatsSet, Topology, UNetConfig, UpConv};
use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A completed forward pass: the tape it was recorded on, the logits node,
/// and the leaf each parameter was bound to (for reading gradients back).
pub struct Forward<S> {
    pub tape: Tape<S>,
    pub logits: VarId,
    vars: Vec<VarId>,
}

impl<S: Scalar> std::fmt::Debug for Forward<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Forward")
            .field("tape_len", &self.tape.len())
            .field("params", &self.vars.len())
            .finish()
    }
}

impl<S: Scalar> Forward<S> {
    pub fn var(&self, id: ParamId) -> VarId {
        self.vars[id.0]
    }

    pub fn logits_value(&self) -> &Tensor<S> {
        self.tape.value(self.logits)
    }
}

enum Mode<'m, 'r, S> {
    Train {
        stats: &'m mut StatsSet<S>,
        rng: &'r mut Rng,
    },
    Eval {
        stats: &'m StatsSet<S>,
    },
}

struct Ctx<'m, 'r, S: Scalar> {
    tape: Tape<S>,
    vars: Vec<VarId>,
    dropout_rate: f64,
    mode: Mode<'m, 'r, S>,
}

impl<S: Scalar> Ctx<'_, '_, S> {
    fn var(&self, id: ParamId) -> VarId {
        self.vars[id.0]
    }

    fn double(&mut self, block: &DoubleConv, mut x: VarId) -> Result<VarId> {
        for unit in [&block.a, &block.b] {
            x = self.tape.conv2d(x, self.vars[unit.weight.0], self.vars[unit.bias.0], unit.pad)?;
            if let Some((gamma, sid)) = unit.norm {
                let gv = self.vars[gamma.0];
                x = match &mut self.mode {
                    Mode::Train { stats, .. } => self.tape.batch_norm(x, gv, stats.get_mut(sid))?,
                    Mode::Eval { stats } => self.tape.frozen_norm(x, gv, stats.get(sid))?,
                };
            }
            x = self.tape.relu(x);
        }
        if self.dropout_rate > 0.0 {
            if let Mode::Train { rng, .. } = &mut self.mode {
                return self.tape.dropout(x, self.dropout_rate, rng);
            }
        }
        Ok(x)
    }

    /// α = sigmoid(ψ(ReLU(Wg·g + Wx·x))), broadcast over the skip's
    /// channels. `g` is the decoder feature before upsampling, so the Wg
    /// path is carried up to the skip's resolution.
    fn gate(&mut self, gate: &Gate, skip: VarId, g: VarId) -> Result<VarId> {
        let gg = self.tape.conv2d(g, self.var(gate.wg.0), self.var(gate.wg.1), 0)?;
        let gg = self.tape.upsample_nearest2x(gg)?;
        let xx = self.tape.conv2d(skip, self.var(gate.wx.0), self.var(gate.wx.1), 0)?;
        let s = self.tape.add(gg, xx)?;
        let s = self.tape.relu(s);
        let a = self.tape.conv2d(s, self.var(gate.psi.0), self.var(gate.psi.1), 0)?;
        let alpha = self.tape.sigmoid(a);
        self.tape.channel_scale(skip, alpha)
    }

    fn fuse(&mut self, fuse: &Fuse, feats: &[VarId]) -> Result<VarId> {
        match fuse.proj {
            Some((w, b)) => {
                let mut cat = feats[0];
                for &f in &feats[1..] {
                    cat = self.tape.concat(cat, f)?;
                }
                self.tape.conv2d(cat, self.var(w), self.var(b), 0)
            }
            None => {
                let mut acc = feats[0];
                for &f in &feats[1..] {
                    acc = self.tape.add(acc, f)?;
                }
                Ok(acc)
            }
        }
    }

    fn decode(
        &mut self,
        ups: &[UpConv],
        dec: &[DoubleConv],
        gates: Option<&Vec<Gate>>,
        head: (ParamId, ParamId),
        skips: &[VarId],
        mut x: VarId,
    ) -> Result<VarId> {
        for (i, level) in (0..skips.len()).rev().enumerate() {
            let g = x;
            x = self
                .tape
                .conv_transpose2d(x, self.var(ups[i].weight), self.var(ups[i].bias))?;
            let mut skip = skips[level];
            if let Some(gs) = gates {
                skip = self.gate(&gs[i], skip, g)?;
            }
            x = self.tape.concat(skip, x)?;
            x = self.double(&dec[i], x)?;
        }
        self.tape.conv2d(x, self.var(head.0), self.var(head.1), 0)
    }
}

/// Copies channel `plane` of an N×C×H×W batch into its own N×1×H×W tensor.
fn extract_plane<S: Scalar>(batch: &Tensor<S>, plane: usize) -> Tensor<S> {
    let (n, c, h, w) = batch.dims4().expect("caller validated rank");
    let hw = h * w;
    let mut out = Vec::with_capacity(n * hw);
    for ni in 0..n {
        let off = (ni * c + plane) * hw;
        out.extend_from_slice(&batch.data()[off..off + hw]);
    }
    Tensor::new(vec![n, 1, h, w], out).expect("plane bounds")
}

fn run<S: Scalar>(
    config: &UNetConfig,
    topology: &Topology,
    params: &ParamSet<S>,
    batch: &Tensor<S>,
    mode: Mode<'_, '_, S>,
) -> Result<Forward<S>> {
    let (_, c, h, w) = batch.dims4()?;
    if c != config.in_channels {
        return Err(Error::shape(
            "model input channels",
            &[config.in_channels],
            &[c],
        ));
    }
    let div = 1usize << config.depth;
    if h % div != 0 || w % div != 0 {
        return Err(Error::invalid(format!(
            "spatial dims {h}x{w} must divide {div} (2^depth) for pooling to round-trip"
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<VarId> = params.iter().map(|(_, _, t)| tape.leaf(t.clone())).collect();
    let mut ctx = Ctx {
        tape,
        vars,
        dropout_rate: config.dropout_rate,
        mode,
    };

    let logits = match topology {
        Topology::Single {
            enc,
            bottleneck,
            ups,
            dec,
            gates,
            head,
        } => {
            let mut x = ctx.tape.leaf(batch.clone());
            let mut skips = Vec::with_capacity(enc.len());
            for block in enc {
                x = ctx.double(block, x)?;
                skips.push(x);
                x = ctx.tape.maxpool2d(x)?;
            }
            x = ctx.double(bottleneck, x)?;
            ctx.decode(ups, dec, gates.as_ref(), *head, &skips, x)?
        }
        Topology::Branched {
            branches,
            skip_fuse,
            bottom_fuse,
            bottleneck,
            ups,
            dec,
            head,
        } => {
            let mut xs: Vec<VarId> = (0..branches.len())
                .map(|b| ctx.tape.leaf(extract_plane(batch, b)))
                .collect();
            let depth = branches[0].len();
            let mut skips = Vec::with_capacity(depth);
            for level in 0..depth {
                let mut feats = Vec::with_capacity(xs.len());
                for (bi, branch) in branches.iter().enumerate() {
                    xs[bi] = ctx.double(&branch[level], xs[bi])?;
                    feats.push(xs[bi]);
                }
                skips.push(ctx.fuse(&skip_fuse[level], &feats)?);
                for x in &mut xs {
                    *x = ctx.tape.maxpool2d(*x)?;
                }
            }
            let bottom = ctx.fuse(bottom_fuse, &xs)?;
            let x = ctx.double(bottleneck, bottom)?;
            ctx.decode(ups, dec, None, *head, &skips, x)?
        }
    };

    Ok(Forward {
        tape: ctx.tape,
        logits,
        vars: ctx.vars,
    })
}

impl<S: Scalar> Model<S> {
    /// Records a training-mode pass: batch statistics update the running
    /// estimates and dropout draws from `rng`.
    pub fn forward_train(&mut self, batch: &Tensor<S>, rng: &mut Rng) -> Result<Forward<S>> {
        run(
            &self.config,
            &self.topology,
            &self.params,
            batch,
            Mode::Train {
                stats: &mut self.stats,
                rng,
            },
        )
    }

    /// Inference-mode pass: frozen statistics, no dropout. Fails with
    /// [`Error::UninitializedStats`] if the model normalizes but has never
    /// seen a training step (or loaded statistics).
    pub fn forward_eval(&self, batch: &Tensor<S>) -> Result<Forward<S>> {
        run(
            &self.config,
            &self.topology,
            &self.params,
            batch,
            Mode::Eval { stats: &self.stats },
        )
    }

    /// Eval-mode logits without the tape plumbing.
    pub fn logits_eval(&self, batch: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward_eval(batch)?.logits_value().clone())
    }
}
