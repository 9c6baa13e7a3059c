//! Labeled brain volumes, their 2D slice datasets, and the synthetic
//! phantoms used for desk-scale experiments.
//!
//! Volumes hold raw intensities plus a 4-class label field (0 background,
//! 1 CSF, 2 gray matter, 3 white matter). Slicing is axial by default
//! (axis 0 of depth x height x width), keeping empty slices, so a stack of
//! 256-slice subjects yields exactly 256 items each.

pub mod load;
pub mod phantom;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 4;

/// One subject: co-registered intensity and label fields.
#[derive(Debug, Clone)]
pub struct Volume {
    dims: (usize, usize, usize),
    intensities: Vec<f64>,
    labels: Vec<u8>,
    subject_id: String,
}

impl Volume {
    pub fn new(
        dims: (usize, usize, usize),
        intensities: Vec<f64>,
        labels: Vec<u8>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        let numel = dims.0 * dims.1 * dims.2;
        if numel == 0 {
            return Err(Error::invalid("volume dims must be nonzero"));
        }
        if intensities.len() != numel || labels.len() != numel {
            return Err(Error::shape(
                "volume fields",
                &[numel],
                &[intensities.len(), labels.len()],
            ));
        }
        if intensities.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("volume intensities must be finite and non-negative"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::UnmappedLabels(vec![bad as u32]));
        }
        Ok(Volume {
            dims,
            intensities,
            labels,
            subject_id: subject_id.into(),
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }
}

/// Source labels -> canonical {0 BG, 1 CSF, 2 GM, 3 WM}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    pairs: Vec<(u16, u8)>,
}

impl LabelMapping {
    /// For files already labeled 0..3.
    pub fn identity() -> Self {
        LabelMapping {
            pairs: (0..NUM_CLASSES as u16).map(|i| (i, i as u8)).collect(),
        }
    }

    /// For 8-bit exports where tissue classes are stored as gray levels
    /// {0, 128, 192, 254}.
    pub fn gray_levels() -> Self {
        LabelMapping {
            pairs: vec![(0, 0), (128, 1), (192, 2), (254, 3)],
        }
    }

    pub fn new(pairs: Vec<(u16, u8)>) -> Result<Self> {
        for &(_, dst) in &pairs {
            if dst as usize >= NUM_CLASSES {
                return Err(Error::invalid(format!(
                    "mapping target {dst} outside 0..{NUM_CLASSES}"
                )));
            }
        }
        for (i, &(src, _)) in pairs.iter().enumerate() {
            if pairs[..i].iter().any(|&(s, _)| s == src) {
                return Err(Error::invalid(format!("duplicate mapping source {src}")));
            }
        }
        if pairs.is_empty() {
            return Err(Error::invalid("empty label mapping"));
        }
        Ok(LabelMapping { pairs })
    }

    /// Remaps every value; any value without a rule aborts the whole
    /// operation, listing the distinct offenders.
    pub fn apply(&self, raw: &[u16]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(raw.len());
        let mut unmapped: Vec<u32> = Vec::new();
        for &v in raw {
            match self.pairs.iter().find(|&&(src, _)| src == v) {
                Some(&(_, dst)) => out.push(dst),
                None => {
                    if !unmapped.contains(&(v as u32)) {
                        unmapped.push(v as u32);
                    }
                }
            }
        }
        if !unmapped.is_empty() {
            unmapped.sort_unstable();
            return Err(Error::UnmappedLabels(unmapped));
        }
        Ok(out)
    }
}

/// One 2D training pair.
#[derive(Debug, Clone)]
pub struct SliceItem {
    /// `H x W` intensity plane.
    pub image: Tensor<f64>,
    /// Row-major labels, same extent as `image`.
    pub mask: Vec<u8>,
    pub subject_id: String,
    pub slice_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Items plus a per-item train/val tag produced by [`train_val_split`].
#[derive(Debug, Clone)]
pub struct SliceDataset {
    pub items: Vec<SliceItem>,
    pub split: Vec<Split>,
    pub seed: u64,
}

impl SliceDataset {
    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == which)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Cuts a volume into 2D pairs along `axis` (0 = axial stack order).
/// `keep_empty = false` drops slices whose mask is entirely background.
pub fn slice_volume(volume: &Volume, axis: usize, keep_empty: bool) -> Result<Vec<SliceItem>> {
    let (d, h, w) = volume.dims();
    if axis > 2 {
        return Err(Error::invalid(format!("slice axis {axis} outside 0..3")));
    }
    // Extents of the slicing axis and of the resulting plane.
    let (count, sh, sw) = match axis {
        0 => (d, h, w),
        1 => (h, d, w),
        _ => (w, d, h),
    };
    let voxel = |i: usize, y: usize, x: usize| -> usize {
        let (zi, yi, xi) = match axis {
            0 => (i, y, x),
            1 => (y, i, x),
            _ => (y, x, i),
        };
        (zi * h + yi) * w + xi
    };
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let mut image = Vec::with_capacity(sh * sw);
        let mut mask = Vec::with_capacity(sh * sw);
        for y in 0..sh {
            for x in 0..sw {
                let v = voxel(i, y, x);
                image.push(volume.intensities()[v]);
                mask.push(volume.labels()[v]);
            }
        }
        if !keep_empty && mask.iter().all(|&l| l == 0) {
            continue;
        }
        items.push(SliceItem {
            image: Tensor::new(vec![sh, sw], image)?,
            mask,
            subject_id: volume.subject_id().to_string(),
            slice_index: i,
        });
    }
    Ok(items)
}

/// Symmetric center pad (zeros / background) or crop to `target`, per axis
/// independently; the extra element of an odd difference lands on the
/// trailing side in both directions.
pub fn pad_or_crop(image: &Tensor<f64>, mask: &[u8], target: (usize, usize)) -> Result<(Tensor<f64>, Vec<u8>)> {
    let shape = image.shape();
    if shape.len() != 2 {
        return Err(Error::invalid(format!(
            "pad_or_crop expects a 2-D image, got {shape:?}"
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    if mask.len() != h * w {
        return Err(Error::shape("pad_or_crop mask", &[h * w], &[mask.len()]));
    }
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::invalid("pad_or_crop target must be nonzero"));
    }
    // Map output row/col to input row/col offsets.
    let offset = |cur: usize, tgt: usize| -> (usize, usize) {
        // (pad_before, crop_before)
        if tgt >= cur {
            ((tgt - cur) / 2, 0)
        } else {
            (0, (cur - tgt) / 2)
        }
    };
    let (pad_y, crop_y) = offset(h, th);
    let (pad_x, crop_x) = offset(w, tw);

    let mut out_img = vec![0.0f64; th * tw];
    let mut out_mask = vec![0u8; th * tw];
    for oy in 0..th {
        if oy < pad_y || oy >= pad_y + h.min(th) {
            continue;
        }
        let iy = oy - pad_y + crop_y;
        for ox in 0..tw {
            if ox < pad_x || ox >= pad_x + w.min(tw) {
                continue;
            }
            let ix = ox - pad_x + crop_x;
            out_img[oy * tw + ox] = image.data()[iy * w + ix];
            out_mask[oy * tw + ox] = mask[iy * w + ix];
        }
    }
    Ok((Tensor::new(vec![th, tw], out_img)?, out_mask))
}

/// Seeded shuffle, then the first `round(ratio * n)` (clamped so neither
/// side is empty) become the training partition.
pub fn train_val_split(items: Vec<SliceItem>, ratio: f64, seed: u64) -> Result<SliceDataset> {
    let n = items.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} item(s)")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut order);
    let train_count = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let mut split = vec![Split::Val; n];
    for &idx in &order[..train_count] {
        split[idx] = Split::Train;
    }
    Ok(SliceDataset { items, split, seed })
}

/// Exact one-hot planes, `C x H x W`, for feeding the cross-entropy loss.
pub fn one_hot<S: Scalar>(mask: &[u8], h: usize, w: usize, classes: usize) -> Result<Tensor<S>> {
    if mask.len() != h * w {
        return Err(Error::shape("one_hot mask", &[h * w], &[mask.len()]));
    }
    let mut data = vec![S::zero(); classes * h * w];
    for (i, &l) in mask.iter().enumerate() {
        if (l as usize) >= classes {
            return Err(Error::invalid(format!("label {l} outside 0..{classes}")));
        }
        data[l as usize * h * w + i] = S::one();
    }
    Tensor::new(vec![classes, h, w], data)
}

/// Per-slice min-max normalization to [0, 1]; constant slices become zeros.
/// The default intensity preparation before fuzzification or direct input.
pub fn normalize_slice(image: &Tensor<f64>) -> Tensor<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in image.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo >= hi {
        return Tensor::zeros(image.shape());
    }
    image.map(|v| (v - lo) / (hi - lo))
}
