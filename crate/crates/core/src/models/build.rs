//! Architecture construction and weight initialization. Convolution weights
//! draw from the He-uniform fan-in distribution (limit √(6/fan_in), suited
//! to ReLU); biases start at zero, normalization gains at one.

use super::{
    ConvUnit, DoubleConv, Fuse, Fusion, Gate, IfUNetConfig, IfVariant, Model, Norm, ParamId,
    ParamSet, StatsSet, Topology, UNetConfig, UpConv,
};
use crate::autodiff::norm::RunningStats;
use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Builder<'a, S> {
    params: ParamSet<S>,
    stats: StatsSet<S>,
    norm: Norm,
    rng: &'a mut Rng,
}

impl<'a, S: Scalar> Builder<'a, S> {
    fn new(norm: Norm, rng: &'a mut Rng) -> Self {
        Builder {
            params: ParamSet::new(),
            stats: StatsSet::new(),
            norm,
            rng,
        }
    }

    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<S> {
        let limit = (6.0 / fan_in as f64).sqrt();
        Tensor::uniform(shape, S::cast(-limit), S::cast(limit), self.rng)
    }

    /// Bare convolution (projection layers: head, gates, fusions) — never
    /// normalized, activation decided by the caller.
    fn plain_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> (ParamId, ParamId) {
        let weight = self.he_uniform(&[cout, cin, k, k], cin * k * k);
        let weight = self.params.add(format!("{name}.weight"), weight);
        let bias = self.params.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        (weight, bias)
    }

    /// Normalized 3x3 unit used inside double-conv blocks.
    fn conv_unit(&mut self, name: &str, cin: usize, cout: usize) -> ConvUnit {
        let (weight, bias) = self.plain_conv(name, cin, cout, 3);
        let norm = match self.norm {
            Norm::ScaleOnlyBn => {
                let gamma = self
                    .params
                    .add(format!("{name}.gamma"), Tensor::full(&[cout], S::one()));
                let sid = self.stats.add(name.to_string(), RunningStats::new(cout));
                Some((gamma, sid))
            }
            Norm::None => None,
        };
        ConvUnit {
            weight,
            bias,
            norm,
            pad: 1,
        }
    }

    fn double(&mut self, name: &str, cin: usize, cout: usize) -> DoubleConv {
        DoubleConv {
            a: self.conv_unit(&format!("{name}.conv0"), cin, cout),
            b: self.conv_unit(&format!("{name}.conv1"), cout, cout),
        }
    }

    fn up(&mut self, name: &str, cin: usize, cout: usize) -> UpConv {
        let weight = self.he_uniform(&[cin, cout, 2, 2], cin * 4);
        let weight = self.params.add(format!("{name}.weight"), weight);
        let bias = self.params.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        UpConv { weight, bias }
    }

    fn gate(&mut self, name: &str, skip_width: usize, gating_width: usize) -> Gate {
        let inter = (skip_width / 2).max(1);
        Gate {
            wg: self.plain_conv(&format!("{name}.wg"), gating_width, inter, 1),
            wx: self.plain_conv(&format!("{name}.wx"), skip_width, inter, 1),
            psi: self.plain_conv(&format!("{name}.psi"), inter, 1, 1),
        }
    }

    /// Decoder column shared by every architecture: transposed convolutions
    /// deepest-first, a double block per restored level, and the 1x1 head.
    fn decoder(
        &mut self,
        config: &UNetConfig,
    ) -> (Vec<UpConv>, Vec<DoubleConv>, (ParamId, ParamId)) {
        let base = config.base_channels;
        let mut ups = Vec::with_capacity(config.depth);
        let mut dec = Vec::with_capacity(config.depth);
        for level in (0..config.depth).rev() {
            let width = base << level;
            ups.push(self.up(&format!("up{level}"), width * 2, width));
            dec.push(self.double(&format!("dec{level}"), width * 2, width));
        }
        let head = self.plain_conv("head", base, config.num_classes, 1);
        (ups, dec, head)
    }
}

fn build_single<S: Scalar>(
    config: &UNetConfig,
    name: &str,
    with_gates: bool,
    rng: &mut Rng,
) -> Model<S> {
    let mut b = Builder::new(config.norm, rng);
    let base = config.base_channels;

    let mut enc = Vec::with_capacity(config.depth);
    for level in 0..config.depth {
        let cin = if level == 0 {
            config.in_channels
        } else {
            base << (level - 1)
        };
        enc.push(b.double(&format!("enc{level}"), cin, base << level));
    }
    let bottleneck = b.double("bottleneck", base << (config.depth - 1), base << config.depth);

    let gates = with_gates.then(|| {
        (0..config.depth)
            .rev()
            .map(|level| {
                let width = base << level;
                // The gating signal is the decoder feature before upsampling,
                // which is twice the skip width.
                b.gate(&format!("gate{level}"), width, width * 2)
            })
            .collect()
    });
    let (ups, dec, head) = b.decoder(config);

    Model {
        name: name.to_string(),
        config: config.clone(),
        topology: Topology::Single {
            enc,
            bottleneck,
            ups,
            dec,
            gates,
            head,
        },
        params: b.params,
        stats: b.stats,
    }
}

fn build_branched<S: Scalar>(config: &IfUNetConfig, planes: usize, name: &str, rng: &mut Rng) -> Model<S> {
    let unet = &config.unet;
    let base = unet.base_channels;
    let mut b = Builder::new(unet.norm, rng);

    let mut branches = Vec::with_capacity(planes);
    for branch in 0..planes {
        let mut levels = Vec::with_capacity(unet.depth);
        for level in 0..unet.depth {
            let cin = if level == 0 { 1 } else { base << (level - 1) };
            levels.push(b.double(&format!("branch{branch}.enc{level}"), cin, base << level));
        }
        branches.push(levels);
    }

    let fuse_at = |b: &mut Builder<S>, name: &str, width: usize| Fuse {
        proj: match config.fusion {
            Fusion::Concat => Some(b.plain_conv(name, planes * width, width, 1)),
            Fusion::Sum => None,
        },
    };
    let skip_fuse = (0..unet.depth)
        .map(|level| fuse_at(&mut b, &format!("fuse{level}"), base << level))
        .collect();
    let bottom_fuse = fuse_at(&mut b, "fuse_bottleneck", base << (unet.depth - 1));

    let bottleneck = b.double("bottleneck", base << (unet.depth - 1), base << unet.depth);
    let (ups, dec, head) = b.decoder(unet);

    Model {
        name: name.to_string(),
        config: unet.clone(),
        topology: Topology::Branched {
            branches,
            skip_fuse,
            bottom_fuse,
            bottleneck,
            ups,
            dec,
            head,
        },
        params: b.params,
        stats: b.stats,
    }
}

pub fn build_unet<S: Scalar>(config: &UNetConfig, rng: &mut Rng) -> Result<Model<S>> {
    config.validate()?;
    Ok(build_single(config, "unet", false, rng))
}

pub fn build_attention_unet<S: Scalar>(config: &UNetConfig, rng: &mut Rng) -> Result<Model<S>> {
    config.validate()?;
    Ok(build_single(config, "attention_unet", true, rng))
}

pub fn build_ifunet<S: Scalar>(config: &IfUNetConfig, rng: &mut Rng) -> Result<Model<S>> {
    config.validate()?;
    Ok(match config.variant {
        IfVariant::Stacked3 => build_single(&config.unet, "ifunet_stacked3", false, rng),
        IfVariant::DualBranch => build_branched(config, 2, "ifunet_dual_branch", rng),
        IfVariant::TriBranch => build_branched(config, 3, "ifunet_tri_branch", rng),
    })
}
