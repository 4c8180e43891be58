//! Input/target pairs, patch tiling and geometric augmentation.

use rand::{Rng, RngExt};

use super::config::TrainTarget;
use crate::bitcore::{extract_bitplane, quantize, Bitplane, ImageTensor, RecoveryRange, Role, Shape};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PairTarget {
    Plane(Bitplane),
    Image(ImageTensor),
}

/// What network `k` learns from one ground-truth image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    /// `quantize(O, q + k - 1)`.
    pub input: ImageTensor,
    /// Plane `N - (q + k)` of `O`, or `quantize(O, q + k)`.
    pub target: PairTarget,
}

pub fn make_training_pair(
    ground_truth: &ImageTensor,
    k: u32,
    range: RecoveryRange,
    target: TrainTarget,
) -> Result<TrainingPair> {
    if ground_truth.role() != Role::Full || ground_truth.container_bits() != range.target_bits() {
        return Err(invalid(format!(
            "training pairs need a full {}-bit ground truth",
            range.target_bits()
        )));
    }
    let input_bits = range.input_bits_for_step(k)?;
    let plane = range.plane_for_step(k)?;
    let input = quantize(ground_truth, input_bits)?;
    let target = match target {
        TrainTarget::Bitplane => PairTarget::Plane(extract_bitplane(ground_truth, plane)?),
        TrainTarget::NextImage => PairTarget::Image(quantize(ground_truth, input_bits + 1)?),
    };
    Ok(TrainingPair { input, target })
}

/// Non-overlapping `size x size` tiles from the top-left corner, row-major.
/// Partial tiles at the right and bottom borders are dropped.
pub fn extract_patches(img: &ImageTensor, size: usize) -> Vec<ImageTensor> {
    if size == 0 || img.height() < size || img.width() < size {
        log::warn!("{} image is smaller than a {size}x{size} patch; no patches taken", img.shape());
        return Vec::new();
    }
    let mut out = Vec::with_capacity((img.height() / size) * (img.width() / size));
    for row in (0..=img.height() - size).step_by(size) {
        for col in (0..=img.width() - size).step_by(size) {
            out.push(img.crop(row, col, size, size).expect("tile lies inside the image"));
        }
    }
    out
}

/// Coin flips for one patch, applied as horizontal flip, then vertical flip,
/// then a 90 degree clockwise rotation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augmentation {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
}

impl Augmentation {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self { hflip: rng.random_bool(0.5), vflip: rng.random_bool(0.5), rot90: rng.random_bool(0.5) }
    }

    pub fn is_identity(&self) -> bool {
        !(self.hflip || self.vflip || self.rot90)
    }

    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        if img.height() != img.width() {
            return Err(invalid(format!("augmentation needs a square patch, got {}", img.shape())));
        }
        let mut out = img.clone();
        if self.hflip {
            out = remap(&out, |s, y, x| (y, s - 1 - x));
        }
        if self.vflip {
            out = remap(&out, |s, y, x| (s - 1 - y, x));
        }
        if self.rot90 {
            // Clockwise: out[y][x] = in[s - 1 - x][y].
            out = remap(&out, |s, y, x| (s - 1 - x, y));
        }
        Ok(out)
    }
}

/// `out[c][y][x] = in[c][src(y, x)]` for a square image of side `s`.
fn remap(img: &ImageTensor, src: impl Fn(usize, usize, usize) -> (usize, usize)) -> ImageTensor {
    let s = img.width();
    let mut codes = Vec::with_capacity(img.codes().len());
    for c in 0..img.channels() {
        let plane = img.channel(c);
        for y in 0..s {
            for x in 0..s {
                let (sy, sx) = src(s, y, x);
                codes.push(plane[sy * s + sx]);
            }
        }
    }
    img.with_codes(Shape::new(s, s, img.channels()), codes)
}

pub fn augment<R: Rng + ?Sized>(patch: &ImageTensor, rng: &mut R) -> Result<ImageTensor> {
    Augmentation::random(rng).apply(patch)
}
