//! Synthetic labeled slices: wobbled concentric rings on a dark background,
//! one intensity band per tissue class. Useful for end-to-end training tests
//! where real scans would be too slow or unavailable.

use crate::data::{SliceItem, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Mean intensity of each class band (background outward-in to core).
pub const CLASS_MEANS: [f64; 4] = [0.05, 0.35, 0.65, 0.95];

/// Base ring radii as fractions of the shorter image side, outermost first.
/// Chosen so wobble and center jitter can never make adjacent rings cross
/// or push the outer ring off the image.
const RING_FRACTIONS: [f64; 3] = [0.42, 0.28, 0.15];
const WOBBLE_MIN: f64 = 0.05;
const WOBBLE_MAX: f64 = 0.12;
const CENTER_JITTER: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    /// (height, width); each side must be at least 16.
    pub size: (usize, usize),
    /// Classes present including background; 2..=4.
    pub num_regions: usize,
    /// Box-blur radius applied to the intensity image (not the mask); the
    /// value is rounded to whole pixels, 0 disables blurring.
    pub blur_width: f64,
    /// Standard deviation of additive Gaussian intensity noise.
    pub noise_sigma: f64,
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        if h < 16 || w < 16 {
            return Err(Error::invalid(format!(
                "phantom size {h}x{w} too small; need at least 16x16"
            )));
        }
        if !(2..=NUM_CLASSES).contains(&self.num_regions) {
            return Err(Error::invalid(format!(
                "num_regions {} outside 2..={NUM_CLASSES}",
                self.num_regions
            )));
        }
        if !self.blur_width.is_finite() || self.blur_width < 0.0 {
            return Err(Error::invalid(format!("blur_width {} invalid", self.blur_width)));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid(format!("noise_sigma {} invalid", self.noise_sigma)));
        }
        Ok(())
    }
}

struct Ring {
    base: f64,
    amplitude: f64,
    lobes: f64,
    phase: f64,
}

impl Ring {
    fn radius(&self, theta: f64) -> f64 {
        self.base * (1.0 + self.amplitude * (self.lobes * theta + self.phase).sin())
    }
}

/// Draws one phantom sample: an intensity image in `[0, 1]` and its class
/// mask. With `blur_width = 0` and `noise_sigma = 0` every pixel equals its
/// class mean exactly.
pub fn gen_phantom(spec: &PhantomSpec, rng: &mut Rng) -> Result<(Tensor<f64>, Vec<u8>)> {
    spec.validate()?;
    let (h, w) = spec.size;
    let min_dim = h.min(w) as f64;

    let cy = h as f64 / 2.0 + rng.uniform_in::<f64>(-CENTER_JITTER, CENTER_JITTER) * min_dim;
    let cx = w as f64 / 2.0 + rng.uniform_in::<f64>(-CENTER_JITTER, CENTER_JITTER) * min_dim;
    let rings: Vec<Ring> = RING_FRACTIONS[..spec.num_regions - 1]
        .iter()
        .map(|&base| Ring {
            base,
            amplitude: rng.uniform_in(WOBBLE_MIN, WOBBLE_MAX),
            lobes: (3 + rng.below(4)) as f64,
            phase: rng.uniform_in(0.0, std::f64::consts::TAU),
        })
        .collect();

    let mut mask = vec![0u8; h * w];
    let mut image = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let dist = (dy * dy + dx * dx).sqrt() / min_dim;
            let theta = dy.atan2(dx);
            let class = rings.iter().filter(|r| dist < r.radius(theta)).count() as u8;
            mask[y * w + x] = class;
            image[y * w + x] = CLASS_MEANS[class as usize];
        }
    }

    let radius = spec.blur_width.round() as usize;
    if radius > 0 {
        image = box_blur(&image, h, w, radius);
    }
    if spec.noise_sigma > 0.0 {
        for v in &mut image {
            *v = (*v + rng.normal::<f64>() * spec.noise_sigma).clamp(0.0, 1.0);
        }
    }

    Ok((Tensor::new(vec![h, w], image)?, mask))
}

/// Generates `count` independent samples as dataset slices under one
/// synthetic subject id.
pub fn phantom_slices(spec: &PhantomSpec, count: usize, seed: u64) -> Result<Vec<SliceItem>> {
    if count == 0 {
        return Err(Error::invalid("phantom slice count must be positive"));
    }
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|i| {
            let (image, mask) = gen_phantom(spec, &mut rng)?;
            Ok(SliceItem {
                image,
                mask,
                subject_id: "phantom".to_string(),
                slice_index: i,
            })
        })
        .collect()
}

/// Separable mean filter with clamp-to-edge sampling.
fn box_blur(src: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let norm = 1.0 / (2 * radius + 1) as f64;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for k in -r..=r {
                let xs = (x + k).clamp(0, w as isize - 1);
                acc += src[(y * w as isize + xs) as usize];
            }
            tmp[(y * w as isize + x) as usize] = acc * norm;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for k in -r..=r {
                let ys = (y + k).clamp(0, h as isize - 1);
                acc += tmp[(ys * w as isize + x) as usize];
            }
            out[(y * w as isize + x) as usize] = acc * norm;
        }
    }
    out
}
