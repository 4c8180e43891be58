//! Deterministic synthetic corpus: smooth ramps, sinusoids and soft blobs.

use std::f64::consts::TAU;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitcore::{ImageTensor, Shape};
use crate::error::{invalid, Result};

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

struct Blob {
    cy: f64,
    cx: f64,
    inv_two_var: f64,
    amp: f64,
}

/// Smooth field on the unit square, roughly in `[-1, 1]`.
struct Field {
    ramp: (f64, f64),
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
}

impl Field {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let angle = rng.random_range(0.0..TAU);
        let strength = rng.random_range(0.6..1.2);
        let waves = (0..2)
            .map(|_| Wave {
                fy: rng.random_range(-2.5..2.5),
                fx: rng.random_range(-2.5..2.5),
                phase: rng.random_range(0.0..TAU),
                amp: rng.random_range(0.1..0.3),
            })
            .collect();
        let blobs = (0..3)
            .map(|_| {
                let sigma: f64 = rng.random_range(0.08..0.3);
                Blob {
                    cy: rng.random_range(0.0..1.0),
                    cx: rng.random_range(0.0..1.0),
                    inv_two_var: 1.0 / (2.0 * sigma * sigma),
                    amp: rng.random_range(-0.5..0.5),
                }
            })
            .collect();
        Self { ramp: (strength * angle.sin(), strength * angle.cos()), waves, blobs }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        let mut v = self.ramp.0 * (y - 0.5) + self.ramp.1 * (x - 0.5);
        for w in &self.waves {
            v += w.amp * (TAU * (w.fy * y + w.fx * x) + w.phase).sin();
        }
        for b in &self.blobs {
            let d2 = (y - b.cy).powi(2) + (x - b.cx).powi(2);
            v += b.amp * (-d2 * b.inv_two_var).exp();
        }
        v
    }
}

/// `count` RGB images of `size x size` at `bits` depth.
pub fn generate_synthetic(count: usize, size: usize, bits: u32, seed: u64) -> Result<Vec<ImageTensor>> {
    generate_synthetic_with_channels(count, size, bits, seed, 3)
}

/// Same corpus family with 1 or 3 channels. Every image is stretched to span
/// most of the code range, so all bitplanes carry both values.
pub fn generate_synthetic_with_channels(
    count: usize,
    size: usize,
    bits: u32,
    seed: u64,
    channels: usize,
) -> Result<Vec<ImageTensor>> {
    if !(2..=16).contains(&bits) {
        return Err(invalid(format!("synthetic images need 2..=16 bits, got {bits}")));
    }
    if size == 0 || (channels != 1 && channels != 3) {
        return Err(invalid("synthetic images need a positive size and 1 or 3 channels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let peak = f64::from((1u32 << bits) - 1);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let base = Field::random(&mut rng);
        let tints: Vec<(f64, f64, f64)> = (0..channels)
            .map(|_| {
                let a = rng.random_range(0.0..TAU);
                let s = rng.random_range(0.0..0.15);
                (s * a.sin(), s * a.cos(), rng.random_range(-0.1..0.1))
            })
            .collect();
        let (lo, hi) = (rng.random_range(0.02..0.12), rng.random_range(0.88..0.98));
        let scale = 1.0 / size as f64;
        let mut raw = Vec::with_capacity(channels * size * size);
        for &(ty, tx, off) in &tints {
            for y in 0..size {
                for x in 0..size {
                    let (fy, fx) = ((y as f64 + 0.5) * scale, (x as f64 + 0.5) * scale);
                    raw.push(base.at(fy, fx) + ty * (fy - 0.5) + tx * (fx - 0.5) + off);
                }
            }
        }
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (max - min).max(1e-12);
        let codes = raw.iter().map(|&v| ((lo + (hi - lo) * (v - min) / span) * peak).round() as u16).collect();
        out.push(ImageTensor::new(Shape::new(size, size, channels), codes, bits)?);
    }
    Ok(out)
}
