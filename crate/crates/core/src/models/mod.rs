//! The three segmentation architectures as layer graphs over the autodiff
//! tape: the plain encoder–decoder network, its attention-gated variant, and
//! the fuzzified-input variant that consumes (μ, ν, π) planes.
//!
//! A built [`Model`] owns a named parameter set and per-layer normalization
//! statistics; each forward pass replays the architecture onto a fresh tape,
//! so training steps and inference share one definition of the wiring.

mod build;
mod forward;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::autodiff::norm::RunningStats;
use crate::container;
use crate::error::{Error, Result};
use crate::ifs::{MembershipSpec, NegationSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use build::{build_attention_unet, build_ifunet, build_unet};
pub use forward::Forward;

/// Normalization flavor applied after each 3x3 convolution inside the
/// double-conv blocks. Scale-only keeps a single learnable gain per channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    ScaleOnlyBn,
    None,
}

#[derive(Debug, Clone)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Encoder levels before the bottleneck; spatial dims must divide 2^depth.
    pub depth: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub norm: Norm,
}

impl UNetConfig {
    /// Full-size configuration: single raw input channel, 64 base channels,
    /// 4 encoder levels, 4 tissue classes, scale-only normalization.
    pub fn full_scale() -> Self {
        UNetConfig {
            in_channels: 1,
            base_channels: 64,
            depth: 4,
            num_classes: 4,
            dropout_rate: 0.0,
            norm: Norm::ScaleOnlyBn,
        }
    }

    /// Small configuration that trains in seconds on synthetic slices.
    pub fn desk_scale() -> Self {
        UNetConfig {
            in_channels: 1,
            base_channels: 8,
            depth: 2,
            num_classes: 4,
            dropout_rate: 0.1,
            norm: Norm::ScaleOnlyBn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.depth == 0 || self.num_classes == 0 {
            return Err(Error::invalid(
                "in_channels, base_channels, depth, and num_classes must all be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// How the fuzzified planes enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfVariant {
    /// All three planes stacked into a 3-channel input of a single encoder.
    Stacked3,
    /// Separate weight-independent encoders over μ and ν, fused per level.
    DualBranch,
    /// Like `DualBranch` plus a third encoder over π.
    TriBranch,
}

/// How multi-branch encoder features merge at each resolution level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Channel concat followed by a 1x1 projection back to the level width.
    Concat,
    /// Elementwise sum (parameter-free).
    Sum,
}

#[derive(Debug, Clone)]
pub struct IfUNetConfig {
    pub unet: UNetConfig,
    pub variant: IfVariant,
    pub fusion: Fusion,
    /// How raw intensities become the μ plane (applied upstream of the model).
    pub membership: MembershipSpec,
    /// Complement generating the ν plane (applied upstream of the model).
    pub negation: NegationSpec,
}

impl IfUNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        if self.unet.in_channels != 3 {
            return Err(Error::invalid(format!(
                "fuzzified input is the three-plane stack; in_channels must be 3, got {}",
                self.unet.in_channels
            )));
        }
        Ok(())
    }
}

/// Index of one named parameter tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered, named collection of trainable tensors. The insertion order fixes
/// the optimizer slot numbering and the weights-file layout.
#[derive(Debug, Clone)]
pub struct ParamSet<S> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ParamSet<S> {
    fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    fn add(&mut self, name: String, tensor: Tensor<S>) -> ParamId {
        debug_assert!(self.entries.iter().all(|(n, _)| *n != name));
        self.entries.push((name, tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].1
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct StatsId(usize);

/// Running normalization statistics, one slot per normalized conv unit.
#[derive(Debug, Clone)]
pub struct StatsSet<S> {
    entries: Vec<(String, RunningStats<S>)>,
}

impl<S: Scalar> StatsSet<S> {
    fn new() -> Self {
        StatsSet { entries: Vec::new() }
    }

    fn add(&mut self, name: String, stats: RunningStats<S>) -> StatsId {
        self.entries.push((name, stats));
        StatsId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    fn get(&self, id: StatsId) -> &RunningStats<S> {
        &self.entries[id.0].1
    }

    fn get_mut(&mut self, id: StatsId) -> &mut RunningStats<S> {
        &mut self.entries[id.0].1
    }
}

/// One convolution with optional scale-only normalization; ReLU follows
/// inside double-conv blocks, nothing follows in projection layers.
#[derive(Debug, Clone)]
pub(crate) struct ConvUnit {
    weight: ParamId,
    bias: ParamId,
    norm: Option<(ParamId, StatsId)>,
    pad: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct DoubleConv {
    a: ConvUnit,
    b: ConvUnit,
}

#[derive(Debug, Clone)]
pub(crate) struct UpConv {
    weight: ParamId,
    bias: ParamId,
}

/// Additive attention gate parameters: two 1x1 projections into an
/// intermediate width and a 1x1 collapse to a single-channel mask.
#[derive(Debug, Clone)]
pub(crate) struct Gate {
    wg: (ParamId, ParamId),
    wx: (ParamId, ParamId),
    psi: (ParamId, ParamId),
}

/// Per-level branch fusion; `None` projection means elementwise sum.
#[derive(Debug, Clone)]
pub(crate) struct Fuse {
    proj: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
pub(crate) enum Topology {
    Single {
        enc: Vec<DoubleConv>,
        bottleneck: DoubleConv,
        /// Decoder stages deepest-first, aligned with `dec` and `gates`.
        ups: Vec<UpConv>,
        dec: Vec<DoubleConv>,
        gates: Option<Vec<Gate>>,
        head: (ParamId, ParamId),
    },
    Branched {
        /// One encoder column per input plane, each `depth` levels deep.
        branches: Vec<Vec<DoubleConv>>,
        /// Skip fusion per level, then one more ahead of the bottleneck.
        skip_fuse: Vec<Fuse>,
        bottom_fuse: Fuse,
        bottleneck: DoubleConv,
        ups: Vec<UpConv>,
        dec: Vec<DoubleConv>,
        head: (ParamId, ParamId),
    },
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    name: String,
    config: UNetConfig,
    topology: Topology,
    params: ParamSet<S>,
    stats: StatsSet<S>,
}

impl<S: Scalar> Model<S> {
    /// Architecture name, e.g. `unet` or `ifunet_dual_branch`.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    /// Total trainable scalars, brute-forced from the parameter set itself.
    pub fn count_params(&self) -> usize {
        self.params.total_elements()
    }

    /// Whether eval-mode forwards are possible yet (normalization statistics
    /// exist, or the model has no normalization at all).
    pub fn ready_for_eval(&self) -> bool {
        self.stats.entries.iter().all(|(_, rs)| rs.initialized)
    }

    /// Marks every normalization slot as identity (zero mean, unit variance)
    /// so an untrained model can run inference; used for timing fresh
    /// weights, where real statistics do not exist yet.
    pub fn assume_identity_stats(&mut self) {
        for (_, rs) in &mut self.stats.entries {
            let c = rs.channels();
            rs.set(vec![S::zero(); c], vec![S::one(); c]);
        }
    }

    /// One line per parameter tensor (`name shape count`), then totals: the
    /// grand total, the slice of it held in normalization gains, and the
    /// remainder a norm-free build would have.
    pub fn ledger(&self) -> String {
        let mut out = String::new();
        let mut total = 0usize;
        let mut gamma_total = 0usize;
        for (_, name, tensor) in self.params.iter() {
            let n = tensor.numel();
            total += n;
            if name.ends_with(".gamma") {
                gamma_total += n;
            }
            out.push_str(&format!("{} {:?} {}\n", name, tensor.shape(), n));
        }
        out.push_str(&format!("TOTAL {total}\n"));
        out.push_str(&format!("TOTAL_NORM_GAMMA {gamma_total}\n"));
        out.push_str(&format!("TOTAL_EXCL_NORM {}\n", total - gamma_total));
        out
    }

    /// Writes every parameter, plus normalization statistics when they have
    /// been trained, to one container file.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut entries: Vec<(String, Tensor<S>)> = self
            .params
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect();
        for (name, rs) in &self.stats.entries {
            if rs.initialized {
                entries.push((
                    format!("stats.{name}.mean"),
                    Tensor::new(vec![rs.channels()], rs.mean.clone())?,
                ));
                entries.push((
                    format!("stats.{name}.var"),
                    Tensor::new(vec![rs.channels()], rs.var.clone())?,
                ));
            }
        }
        container::write_entries(path, &entries)
    }

    /// Replaces every parameter (and statistics, when present) from a saved
    /// container. All checks run before anything is written back, so a
    /// failed load leaves the model untouched; the error names the first
    /// offending parameter.
    pub fn load<P: AsRef<Path>>(&mut self, path: P) -> Result<()> {
        let entries = container::read_entries::<S, _>(path)?;
        let mut by_name: HashMap<&str, &Tensor<S>> = HashMap::new();
        for (name, tensor) in &entries {
            if by_name.insert(name.as_str(), tensor).is_some() {
                return Err(Error::ParamMismatch {
                    name: name.clone(),
                    reason: "duplicated in file".to_string(),
                });
            }
        }
        let mut expected: HashSet<String> = self.params.entries.iter().map(|(n, _)| n.clone()).collect();
        for (name, _) in &self.stats.entries {
            expected.insert(format!("stats.{name}.mean"));
            expected.insert(format!("stats.{name}.var"));
        }
        if let Some((name, _)) = entries.iter().find(|(n, _)| !expected.contains(n.as_str())) {
            return Err(Error::ParamMismatch {
                name: name.clone(),
                reason: "not a parameter of this architecture".to_string(),
            });
        }

        let mut staged_params: Vec<Tensor<S>> = Vec::with_capacity(self.params.len());
        for (_, name, current) in self.params.iter() {
            let found = by_name.get(name).copied().ok_or_else(|| Error::ParamMismatch {
                name: name.to_string(),
                reason: "missing from file".to_string(),
            })?;
            if found.shape() != current.shape() {
                return Err(Error::ParamMismatch {
                    name: name.to_string(),
                    reason: format!(
                        "shape {:?} in file, model expects {:?}",
                        found.shape(),
                        current.shape()
                    ),
                });
            }
            staged_params.push(found.clone());
        }

        let mut staged_stats: Vec<Option<(Vec<S>, Vec<S>)>> = Vec::with_capacity(self.stats.len());
        for (name, rs) in &self.stats.entries {
            let mean_name = format!("stats.{name}.mean");
            let var_name = format!("stats.{name}.var");
            let mean = by_name.get(mean_name.as_str()).copied();
            let var = by_name.get(var_name.as_str()).copied();
            match (mean, var) {
                (None, None) => staged_stats.push(None),
                (Some(m), Some(v)) => {
                    for (label, t) in [(&mean_name, m), (&var_name, v)] {
                        if t.shape() != [rs.channels()] {
                            return Err(Error::ParamMismatch {
                                name: label.clone(),
                                reason: format!(
                                    "shape {:?} in file, model expects {:?}",
                                    t.shape(),
                                    [rs.channels()]
                                ),
                            });
                        }
                    }
                    staged_stats.push(Some((m.data().to_vec(), v.data().to_vec())));
                }
                _ => {
                    return Err(Error::ParamMismatch {
                        name: format!("stats.{name}"),
                        reason: "statistics pair incomplete (one of mean/var missing)".to_string(),
                    });
                }
            }
        }

        for (i, tensor) in staged_params.into_iter().enumerate() {
            self.params.entries[i].1 = tensor;
        }
        for (slot, staged) in self.stats.entries.iter_mut().zip(staged_stats) {
            if let Some((mean, var)) = staged {
                slot.1.set(mean, var);
            }
        }
        Ok(())
    }
}
