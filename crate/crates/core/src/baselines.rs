//! Closed-form de-quantization: zero padding, ideal gain, bit replication.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bitcore::{ImageTensor, Role};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Leave the padded zeros in place.
    ZeroPad,
    /// Multiply the `q`-bit value by `(2^N - 1) / (2^q - 1)`.
    IdealGain,
    /// Repeat the `q`-bit value down the `N`-bit field.
    BitReplicate,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::ZeroPad, Baseline::IdealGain, Baseline::BitReplicate];

    pub fn label(self) -> &'static str {
        match self {
            Baseline::ZeroPad => "zp",
            Baseline::IdealGain => "mig",
            Baseline::BitReplicate => "br",
        }
    }

    pub fn apply(self, img: &ImageTensor) -> Result<ImageTensor> {
        match self {
            Baseline::ZeroPad => zero_pad(img),
            Baseline::IdealGain => ideal_gain(img),
            Baseline::BitReplicate => bit_replicate(img),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zp" | "zero_pad" => Ok(Baseline::ZeroPad),
            "mig" | "ideal_gain" => Ok(Baseline::IdealGain),
            "br" | "bit_replicate" => Ok(Baseline::BitReplicate),
            other => Err(invalid(format!("unknown baseline `{other}` (expected zp, mig or br)"))),
        }
    }
}

fn check_recoverable(img: &ImageTensor) -> Result<(u32, u32)> {
    let (q, n) = (img.effective_bits(), img.container_bits());
    if img.role() == Role::Residual {
        return Err(invalid("baselines operate on quantized images, not residuals"));
    }
    if q >= n {
        return Err(invalid(format!("image already has all {n} bits; nothing to recover")));
    }
    Ok((q, n))
}

fn map_codes(img: &ImageTensor, f: impl Fn(u32) -> u32) -> ImageTensor {
    let codes = img.codes().iter().map(|&c| f(u32::from(c)) as u16).collect();
    img.with_codes(img.shape(), codes).into_full()
}

pub fn zero_pad(img: &ImageTensor) -> Result<ImageTensor> {
    check_recoverable(img)?;
    Ok(img.clone().into_full())
}

/// `round(c * (2^N - 1) / (2^q - 1))` with ties away from zero, where `c` is
/// the `q`-bit value held in the top bits.
pub fn ideal_gain(img: &ImageTensor) -> Result<ImageTensor> {
    let (q, n) = check_recoverable(img)?;
    let num = (1u64 << n) - 1;
    let den = (1u64 << q) - 1;
    Ok(map_codes(img, |code| {
        let c = u64::from(code >> (n - q));
        ((2 * c * num + den) / (2 * den)) as u32
    }))
}

/// Fills the field with copies of the `q`-bit value, most significant copy
/// first, truncating the last copy at the least significant end.
pub fn bit_replicate(img: &ImageTensor) -> Result<ImageTensor> {
    let (q, n) = check_recoverable(img)?;
    Ok(map_codes(img, |code| {
        let c = code >> (n - q);
        let mut out = 0u32;
        let mut shift = n as i32 - q as i32;
        while shift > -(q as i32) {
            out |= if shift >= 0 { c << shift } else { c >> (-shift) };
            shift -= q as i32;
        }
        out
    }))
}
