//! Flat `key = value` experiment configuration.
//!
//! Every key has a default, so an empty file (or no file at all) is a valid
//! experiment; unknown keys are rejected rather than ignored so a typo like
//! `epochz = 100` fails loudly instead of silently training for 10. `#`
//! starts a comment, blank lines are skipped, and later assignments win.

use std::path::PathBuf;

use ifseg_core::error::{Error, Result};
use ifseg_core::ifs::{MembershipSpec, NegationSpec};
use ifseg_core::models::{
    build_attention_unet, build_ifunet, build_unet, Fusion, IfUNetConfig, IfVariant, Norm,
    UNetConfig,
};
use ifseg_core::{Model, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Unet,
    AttentionUnet,
    IfUnet,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Unet => "unet",
            ModelKind::AttentionUnet => "attention_unet",
            ModelKind::IfUnet => "ifunet",
        }
    }

    /// Channel count the model expects: the fuzzified three-plane stack or
    /// a single intensity plane.
    pub fn in_channels(self) -> usize {
        match self {
            ModelKind::IfUnet => 3,
            _ => 1,
        }
    }
}

/// The complement generator, before a concrete lambda is chosen (sweeps try
/// several lambdas against one config).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NegationChoice {
    Standard,
    Sugeno,
    Yager { w: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Phantom,
    Ibsr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Analyze,
    Raw16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelScheme {
    Identity,
    GrayLevels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    All,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Branch layout for `model = ifunet`; ignored otherwise.
    pub variant: IfVariant,
    pub fusion: Fusion,
    pub base_channels: usize,
    pub depth: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub norm: Norm,
    pub membership: MembershipSpec,
    pub negation: NegationChoice,
    /// Sugeno lambda value(s); train/eval/segment/bench need exactly one,
    /// sweep trains one column per value.
    pub lambdas: Vec<f64>,
    /// Sweep only: also train plain and attention UNets as extra columns.
    pub include_baselines: bool,
    pub dataset: DataSource,
    pub phantom_count: usize,
    pub phantom_size: usize,
    pub phantom_regions: usize,
    pub phantom_blur: f64,
    pub phantom_noise: f64,
    pub ibsr_dir: Option<PathBuf>,
    pub ibsr_format: VolumeFormat,
    /// Subjects used, in sorted id order (IBSR runs take the first N).
    pub ibsr_subjects: usize,
    /// depth x height x width of headerless raw volumes.
    pub raw_dims: Option<(usize, usize, usize)>,
    pub labels: LabelScheme,
    pub slice_axis: usize,
    pub keep_empty: bool,
    /// Slices are center padded/cropped to this square extent.
    pub target_size: usize,
    pub split_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// Weights container path; `fresh` lets `bench` time an untrained model.
    pub weights: Option<String>,
    /// Which slices `segment` writes maps for.
    pub partition: Partition,
    /// Segment only: also write one binary map per class.
    pub class_maps: bool,
    /// Segment only: dump the fuzzified planes next to each label map.
    pub dump_ifs: bool,
    pub repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::IfUnet,
            variant: IfVariant::DualBranch,
            fusion: Fusion::Concat,
            base_channels: 8,
            depth: 2,
            num_classes: 4,
            dropout: 0.1,
            norm: Norm::ScaleOnlyBn,
            membership: MembershipSpec::MinMax,
            negation: NegationChoice::Sugeno,
            lambdas: vec![1.2],
            include_baselines: false,
            dataset: DataSource::Phantom,
            phantom_count: 10,
            phantom_size: 64,
            phantom_regions: 4,
            phantom_blur: 1.0,
            phantom_noise: 0.02,
            ibsr_dir: None,
            ibsr_format: VolumeFormat::Analyze,
            ibsr_subjects: 10,
            raw_dims: None,
            labels: LabelScheme::Identity,
            slice_axis: 0,
            keep_empty: true,
            target_size: 64,
            split_ratio: 0.8,
            epochs: 10,
            batch_size: 2,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 42,
            out: PathBuf::from("out"),
            weights: None,
            partition: Partition::Val,
            class_maps: false,
            dump_ifs: false,
            repeats: 50,
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::invalid(format!("config key `{key}`: `{value}` is not {want}"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(bad(key, v, "a finite number")),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "`true` or `false`")),
    }
}

impl ExperimentConfig {
    /// Parses one file, layering assignments over the defaults.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {}: `{raw}` is not `key = value`", lineno + 1))
            })?;
            config.apply(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Applies one assignment; this is also how command-line overrides land.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => {
                self.model = match value {
                    "unet" => ModelKind::Unet,
                    "attention_unet" => ModelKind::AttentionUnet,
                    "ifunet" => ModelKind::IfUnet,
                    _ => return Err(bad(key, value, "one of unet|attention_unet|ifunet")),
                }
            }
            "variant" => {
                self.variant = match value {
                    "stacked3" => IfVariant::Stacked3,
                    "dual_branch" => IfVariant::DualBranch,
                    "tri_branch" => IfVariant::TriBranch,
                    _ => return Err(bad(key, value, "one of stacked3|dual_branch|tri_branch")),
                }
            }
            "fusion" => {
                self.fusion = match value {
                    "concat" => Fusion::Concat,
                    "sum" => Fusion::Sum,
                    _ => return Err(bad(key, value, "one of concat|sum")),
                }
            }
            "base_channels" => self.base_channels = parse_usize(key, value)?,
            "depth" => self.depth = parse_usize(key, value)?,
            "num_classes" => self.num_classes = parse_usize(key, value)?,
            "dropout" => self.dropout = parse_f64(key, value)?,
            "norm" => {
                self.norm = match value {
                    "scale_only_bn" => Norm::ScaleOnlyBn,
                    "none" => Norm::None,
                    _ => return Err(bad(key, value, "one of scale_only_bn|none")),
                }
            }
            "membership" => self.membership = parse_membership(value)?,
            "negation" => self.negation = parse_negation(value)?,
            "lambda" => {
                let mut lambdas = Vec::new();
                for part in value.split(',') {
                    lambdas.push(parse_f64(key, part.trim())?);
                }
                if lambdas.is_empty() {
                    return Err(bad(key, value, "a comma-separated list of numbers"));
                }
                self.lambdas = lambdas;
            }
            "include_baselines" => self.include_baselines = parse_bool(key, value)?,
            "dataset" => {
                self.dataset = match value {
                    "phantom" => DataSource::Phantom,
                    "ibsr" => DataSource::Ibsr,
                    _ => return Err(bad(key, value, "one of phantom|ibsr")),
                }
            }
            "phantom_count" => self.phantom_count = parse_usize(key, value)?,
            "phantom_size" => self.phantom_size = parse_usize(key, value)?,
            "phantom_regions" => self.phantom_regions = parse_usize(key, value)?,
            "phantom_blur" => self.phantom_blur = parse_f64(key, value)?,
            "phantom_noise" => self.phantom_noise = parse_f64(key, value)?,
            "ibsr_dir" => self.ibsr_dir = Some(PathBuf::from(value)),
            "ibsr_format" => {
                self.ibsr_format = match value {
                    "analyze" => VolumeFormat::Analyze,
                    "raw16" => VolumeFormat::Raw16,
                    _ => return Err(bad(key, value, "one of analyze|raw16")),
                }
            }
            "ibsr_subjects" => self.ibsr_subjects = parse_usize(key, value)?,
            "raw_dims" => {
                let parts: Vec<&str> = value.split('x').collect();
                if parts.len() != 3 {
                    return Err(bad(key, value, "DxHxW (e.g. 128x256x256)"));
                }
                let d = parse_usize(key, parts[0])?;
                let h = parse_usize(key, parts[1])?;
                let w = parse_usize(key, parts[2])?;
                if d == 0 || h == 0 || w == 0 {
                    return Err(bad(key, value, "three positive extents"));
                }
                self.raw_dims = Some((d, h, w));
            }
            "labels" => {
                self.labels = match value {
                    "identity" => LabelScheme::Identity,
                    "gray_levels" => LabelScheme::GrayLevels,
                    _ => return Err(bad(key, value, "one of identity|gray_levels")),
                }
            }
            "slice_axis" => self.slice_axis = parse_usize(key, value)?,
            "keep_empty" => self.keep_empty = parse_bool(key, value)?,
            "target_size" => self.target_size = parse_usize(key, value)?,
            "split_ratio" => self.split_ratio = parse_f64(key, value)?,
            "epochs" => self.epochs = parse_usize(key, value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "lr" => self.lr = parse_f64(key, value)?,
            "beta1" => self.beta1 = parse_f64(key, value)?,
            "beta2" => self.beta2 = parse_f64(key, value)?,
            "seed" => self.seed = parse_u64(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "weights" => self.weights = Some(value.to_string()),
            "partition" => {
                self.partition = match value {
                    "train" => Partition::Train,
                    "val" => Partition::Val,
                    "all" => Partition::All,
                    _ => return Err(bad(key, value, "one of train|val|all")),
                }
            }
            "class_maps" => self.class_maps = parse_bool(key, value)?,
            "dump_ifs" => self.dump_ifs = parse_bool(key, value)?,
            "repeats" => self.repeats = parse_usize(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// The single lambda non-sweep commands run with. Only a Sugeno
    /// complement on a fuzzified model actually consumes it; anything else
    /// accepts whatever list is configured and ignores it.
    pub fn single_lambda(&self) -> Result<f64> {
        if self.model != ModelKind::IfUnet || self.negation != NegationChoice::Sugeno {
            return Ok(self.lambdas.first().copied().unwrap_or(1.0));
        }
        match self.lambdas.as_slice() {
            [one] => Ok(*one),
            many => Err(Error::invalid(format!(
                "this command takes exactly one lambda, got {} (`sweep` takes a list)",
                many.len()
            ))),
        }
    }

    pub fn negation_spec(&self, lambda: f64) -> Result<NegationSpec> {
        match self.negation {
            NegationChoice::Standard => Ok(NegationSpec::Standard),
            NegationChoice::Sugeno => NegationSpec::sugeno(lambda),
            NegationChoice::Yager { w } => NegationSpec::yager(w),
        }
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            in_channels: self.model.in_channels(),
            base_channels: self.base_channels,
            depth: self.depth,
            num_classes: self.num_classes,
            dropout_rate: self.dropout,
            norm: self.norm,
        }
    }

    /// Builds the configured architecture with freshly initialized weights.
    pub fn build_model(&self, lambda: f64, rng: &mut Rng) -> Result<Model> {
        let unet = self.unet_config();
        match self.model {
            ModelKind::Unet => build_unet(&unet, rng),
            ModelKind::AttentionUnet => build_attention_unet(&unet, rng),
            ModelKind::IfUnet => build_ifunet(
                &IfUNetConfig {
                    unet,
                    variant: self.variant,
                    fusion: self.fusion,
                    membership: self.membership,
                    negation: self.negation_spec(lambda)?,
                },
                rng,
            ),
        }
    }
}

fn parse_membership(value: &str) -> Result<MembershipSpec> {
    let parts: Vec<&str> = value.split(':').collect();
    match parts.as_slice() {
        ["minmax"] => Ok(MembershipSpec::MinMax),
        ["gaussian", center, width] => Ok(MembershipSpec::Gaussian {
            center: parse_f64("membership", center)?,
            width: parse_f64("membership", width)?,
        }),
        ["sigmoid", slope, center] => Ok(MembershipSpec::Sigmoid {
            slope: parse_f64("membership", slope)?,
            center: parse_f64("membership", center)?,
        }),
        _ => Err(bad(
            "membership",
            value,
            "one of minmax|gaussian:CENTER:WIDTH|sigmoid:SLOPE:CENTER",
        )),
    }
}

fn parse_negation(value: &str) -> Result<NegationChoice> {
    let parts: Vec<&str> = value.split(':').collect();
    match parts.as_slice() {
        ["standard"] => Ok(NegationChoice::Standard),
        ["sugeno"] => Ok(NegationChoice::Sugeno),
        ["yager", w] => Ok(NegationChoice::Yager {
            w: parse_f64("negation", w)?,
        }),
        _ => Err(bad("negation", value, "one of standard|sugeno|yager:W")),
    }
}
