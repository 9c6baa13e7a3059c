//! Turns a configuration into model-ready slices: loads phantoms or IBSR
//! volumes, center pads/crops every slice to the configured square extent,
//! normalizes, fuzzifies when the model wants the three-plane stack, and
//! tags a train/holdout partition.

use std::path::Path;

use ifseg_core::data::load::{assemble_volume, load_analyze, load_raw16};
use ifseg_core::data::phantom::{phantom_slices, PhantomSpec};
use ifseg_core::data::{
    normalize_slice, one_hot, pad_or_crop, slice_volume, train_val_split, LabelMapping, SliceItem,
    Split,
};
use ifseg_core::error::{Error, Result};
use ifseg_core::ifs::{ifs_encode, IfsImage, MembershipSpec, NegationSpec};
use ifseg_core::Tensor;

use crate::config::{DataSource, ExperimentConfig, LabelScheme, ModelKind, VolumeFormat};
use crate::seeds;

/// Everything a command needs per slice, in dataset order.
pub struct Prepared {
    /// `1 x C x H x W` model inputs (C = 1 raw plane or 3 fuzzified planes).
    pub inputs: Vec<Tensor>,
    /// `1 x K x H x W` one-hot targets.
    pub targets: Vec<Tensor>,
    /// Padded/cropped ground-truth masks, row major.
    pub masks: Vec<Vec<u8>>,
    pub hw: (usize, usize),
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Loads the raw slice list for the configured source, before any resizing.
pub fn load_slices(config: &ExperimentConfig) -> Result<Vec<SliceItem>> {
    match config.dataset {
        DataSource::Phantom => {
            let spec = PhantomSpec {
                size: (config.phantom_size, config.phantom_size),
                num_regions: config.phantom_regions,
                blur_width: config.phantom_blur,
                noise_sigma: config.phantom_noise,
            };
            phantom_slices(
                &spec,
                config.phantom_count,
                seeds::stream(config.seed, seeds::DATA).next_u64(),
            )
        }
        DataSource::Ibsr => load_ibsr(config),
    }
}

fn load_ibsr(config: &ExperimentConfig) -> Result<Vec<SliceItem>> {
    let dir = config
        .ibsr_dir
        .as_deref()
        .ok_or_else(|| Error::invalid("dataset = ibsr needs ibsr_dir = PATH"))?;
    let extension = match config.ibsr_format {
        VolumeFormat::Analyze => "hdr",
        VolumeFormat::Raw16 => "raw",
    };
    let mut subjects = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(extension) {
            continue;
        }
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s.to_string(),
            None => continue,
        };
        // Segmentation companions are `<id>_seg.<ext>`, not subjects.
        if !stem.ends_with("_seg") {
            subjects.push(stem);
        }
    }
    if subjects.is_empty() {
        return Err(Error::invalid(format!(
            "no .{extension} volumes found in {}",
            dir.display()
        )));
    }
    if config.ibsr_subjects == 0 {
        return Err(Error::invalid("ibsr_subjects must be at least 1"));
    }
    subjects.sort();
    subjects.truncate(config.ibsr_subjects);

    let mapping = match config.labels {
        LabelScheme::Identity => LabelMapping::identity(),
        LabelScheme::GrayLevels => LabelMapping::gray_levels(),
    };
    let mut items = Vec::new();
    for id in &subjects {
        let scan_path = dir.join(format!("{id}.{extension}"));
        let seg_path = dir.join(format!("{id}_seg.{extension}"));
        let (scan, seg) = match config.ibsr_format {
            VolumeFormat::Analyze => (load_analyze(&scan_path)?, load_analyze(&seg_path)?),
            VolumeFormat::Raw16 => {
                let dims = config.raw_dims.ok_or_else(|| {
                    Error::invalid("ibsr_format = raw16 needs raw_dims = DxHxW")
                })?;
                (load_raw16(&scan_path, dims)?, load_raw16(&seg_path, dims)?)
            }
        };
        let volume = assemble_volume(&scan, &seg, &mapping, id.clone())?;
        items.extend(slice_volume(&volume, config.slice_axis, config.keep_empty)?);
    }
    Ok(items)
}

/// Normalizes one already-resized slice and lifts it to the input layout the
/// model expects. Membership parameters therefore always refer to the
/// normalized `[0, 1]` intensity range, whatever the source units were.
pub fn encode_input(
    model: ModelKind,
    membership: &MembershipSpec,
    negation: &NegationSpec,
    image: &Tensor,
) -> Result<Tensor> {
    let plane = normalize_slice(image);
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    match model {
        ModelKind::IfUnet => {
            let stacked = ifs_encode(&plane, membership, negation)?.stacked();
            Tensor::new(vec![1, 3, h, w], stacked.into_data())
        }
        _ => Tensor::new(vec![1, 1, h, w], plane.into_data()),
    }
}

/// The fuzzified planes for one resized slice, for dumping alongside maps.
pub fn fuzzify(
    membership: &MembershipSpec,
    negation: &NegationSpec,
    image: &Tensor,
) -> Result<IfsImage<f64>> {
    ifs_encode(&normalize_slice(image), membership, negation)
}

pub fn prepare(config: &ExperimentConfig, negation: &NegationSpec) -> Result<Prepared> {
    let target = (config.target_size, config.target_size);
    let mut items = Vec::new();
    for item in load_slices(config)? {
        let (image, mask) = pad_or_crop(&item.image, &item.mask, target)?;
        items.push(SliceItem { image, mask, ..item });
    }
    let dataset = train_val_split(
        items,
        config.split_ratio,
        seeds::stream(config.seed, seeds::SPLIT).next_u64(),
    )?;

    let mut inputs = Vec::with_capacity(dataset.items.len());
    let mut targets = Vec::with_capacity(dataset.items.len());
    let mut masks = Vec::with_capacity(dataset.items.len());
    for item in &dataset.items {
        inputs.push(encode_input(
            config.model,
            &config.membership,
            negation,
            &item.image,
        )?);
        let class_planes: Tensor = one_hot(&item.mask, target.0, target.1, config.num_classes)?;
        targets.push(Tensor::new(
            vec![1, config.num_classes, target.0, target.1],
            class_planes.into_data(),
        )?);
        masks.push(item.mask.clone());
    }
    Ok(Prepared {
        inputs,
        targets,
        masks,
        hw: target,
        train: dataset.indices(Split::Train),
        val: dataset.indices(Split::Val),
    })
}

/// Writes one subject volume pair in the headerless big-endian layout, for
/// tests and for converting external data.
pub fn write_raw16_pair(
    dir: &Path,
    id: &str,
    dims: (usize, usize, usize),
    scan: &[u16],
    seg: &[u16],
) -> Result<()> {
    let numel = dims.0 * dims.1 * dims.2;
    if scan.len() != numel || seg.len() != numel {
        return Err(Error::shape("raw16 pair", &[numel], &[scan.len(), seg.len()]));
    }
    for (name, values) in [(format!("{id}.raw"), scan), (format!("{id}_seg.raw"), seg)] {
        let path = dir.join(name);
        let mut bytes = Vec::with_capacity(2 * numel);
        for &v in values {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NegationChoice;

    fn phantom_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.phantom_count = 5;
        config.phantom_size = 32;
        config.target_size = 32;
        config
    }

    #[test]
    fn prepare_shapes_and_partition() {
        let config = phantom_config();
        let negation = config.negation_spec(1.2).unwrap();
        let prepared = prepare(&config, &negation).unwrap();
        assert_eq!(prepared.inputs.len(), 5);
        assert_eq!(prepared.inputs[0].shape(), &[1, 3, 32, 32]);
        assert_eq!(prepared.targets[0].shape(), &[1, 4, 32, 32]);
        assert_eq!(prepared.masks[0].len(), 32 * 32);
        // ratio 0.8 of 5 -> 4 train + 1 holdout, disjoint and exhaustive.
        assert_eq!(prepared.train.len(), 4);
        assert_eq!(prepared.val.len(), 1);
        let mut all: Vec<usize> = prepared.train.iter().chain(&prepared.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn plain_models_get_one_channel() {
        let mut config = phantom_config();
        config.model = ModelKind::Unet;
        let negation = config.negation_spec(1.2).unwrap();
        let prepared = prepare(&config, &negation).unwrap();
        assert_eq!(prepared.inputs[0].shape(), &[1, 1, 32, 32]);
    }

    #[test]
    fn encoded_planes_keep_the_ifs_identity() {
        let config = phantom_config();
        let negation = config.negation_spec(0.7).unwrap();
        let prepared = prepare(&config, &negation).unwrap();
        let data = prepared.inputs[0].data();
        let plane = 32 * 32;
        for p in 0..plane {
            let (mu, nu, pi) = (data[p], data[plane + p], data[2 * plane + p]);
            assert!((mu + nu + pi - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&mu) && (0.0..=1.0).contains(&nu));
        }
    }

    #[test]
    fn same_seed_same_slices() {
        let config = phantom_config();
        let negation = config.negation_spec(1.2).unwrap();
        let a = prepare(&config, &negation).unwrap();
        let b = prepare(&config, &negation).unwrap();
        assert_eq!(a.train, b.train);
        for (x, y) in a.inputs.iter().zip(&b.inputs) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn standard_negation_zeroes_hesitation() {
        let mut config = phantom_config();
        config.negation = NegationChoice::Standard;
        let negation = config.negation_spec(1.2).unwrap();
        let prepared = prepare(&config, &negation).unwrap();
        let data = prepared.inputs[0].data();
        let plane = 32 * 32;
        for p in 0..plane {
            assert!(data[2 * plane + p].abs() < 1e-15);
        }
    }

    #[test]
    fn raw16_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dims = (3, 8, 8);
        let numel = 3 * 8 * 8;
        // Two subjects; values chosen so normalization is non-degenerate.
        for (id, offset) in [("s01", 0u16), ("s02", 7u16)] {
            let scan: Vec<u16> = (0..numel).map(|i| i as u16 * 3 + offset).collect();
            let seg: Vec<u16> = (0..numel).map(|i| (i % 4) as u16).collect();
            write_raw16_pair(dir.path(), id, dims, &scan, &seg).unwrap();
        }
        let mut config = ExperimentConfig::default();
        config.dataset = DataSource::Ibsr;
        config.ibsr_dir = Some(dir.path().to_path_buf());
        config.ibsr_format = VolumeFormat::Raw16;
        config.raw_dims = Some(dims);
        let items = load_slices(&config).unwrap();
        // 2 subjects x 3 axial slices, sorted subject order.
        assert_eq!(items.len(), 6);
        assert_eq!(items[0].subject_id, "s01");
        assert_eq!(items[5].subject_id, "s02");
        assert_eq!(items[0].image.shape(), &[8, 8]);
        assert_eq!(items[1].mask[0], ((8 * 8) % 4) as u8);
    }

    #[test]
    fn subject_cap_takes_first_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let dims = (1, 8, 8);
        for id in ["b", "a", "c"] {
            write_raw16_pair(dir.path(), id, dims, &[1u16; 64], &[0u16; 64]).unwrap();
        }
        let mut config = ExperimentConfig::default();
        config.dataset = DataSource::Ibsr;
        config.ibsr_dir = Some(dir.path().to_path_buf());
        config.ibsr_format = VolumeFormat::Raw16;
        config.raw_dims = Some(dims);
        config.ibsr_subjects = 2;
        let items = load_slices(&config).unwrap();
        let ids: Vec<&str> = items.iter().map(|i| i.subject_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn missing_companion_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let dims = (1, 8, 8);
        write_raw16_pair(dir.path(), "s01", dims, &[1u16; 64], &[0u16; 64]).unwrap();
        std::fs::remove_file(dir.path().join("s01_seg.raw")).unwrap();
        let mut config = ExperimentConfig::default();
        config.dataset = DataSource::Ibsr;
        config.ibsr_dir = Some(dir.path().to_path_buf());
        config.ibsr_format = VolumeFormat::Raw16;
        config.raw_dims = Some(dims);
        assert!(matches!(
            load_slices(&config).unwrap_err(),
            Error::Io { .. }
        ));
    }
}
