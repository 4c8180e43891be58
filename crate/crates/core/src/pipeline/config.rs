//! Training configuration and its flat `key = value` text format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTarget {
    /// The next missing bitplane.
    Bitplane,
    /// The image quantized one bit deeper than the input.
    NextImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// One network per lost plane.
    Bitplanewise,
    /// One deep network regressing the whole residual.
    SingleShot,
}

macro_rules! keyword_enum {
    ($t:ty, $($name:literal => $v:expr),+ $(,)?) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($v),)+
                    other => Err(invalid(format!(
                        "unknown value `{other}` (expected one of: {})",
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $v { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(LossKind, "bce" => LossKind::Bce, "mse" => LossKind::Mse);
keyword_enum!(TrainTarget, "bitplane" => TrainTarget::Bitplane, "next_image" => TrainTarget::NextImage);
keyword_enum!(TrainMode, "bitplanewise" => TrainMode::Bitplanewise, "single_shot" => TrainMode::SingleShot);

/// Hyperparameters for training one bundle.
///
/// In `single_shot` mode the network always regresses the normalized residual
/// with MSE; `loss` and `target` only apply to bitplane-wise training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: u32,
    /// The learning rate is divided by `lr_drop_factor` after this many epochs.
    pub lr_drop_epoch: u32,
    pub lr_drop_factor: f64,
    pub augment: bool,
    pub seed: u64,
    pub loss: LossKind,
    pub target: TrainTarget,
    pub mode: TrainMode,
    pub binarize_at_inference: bool,
    /// Residual blocks per network.
    pub depth: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 48,
            batch_size: 128,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 30,
            lr_drop_epoch: 16,
            lr_drop_factor: 5.0,
            augment: true,
            seed: 0,
            loss: LossKind::Bce,
            target: TrainTarget::Bitplane,
            mode: TrainMode::Bitplanewise,
            binarize_at_inference: true,
            depth: 4,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| invalid(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(format!("bad boolean `{value}` for `{key}`"))),
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("line {}: expected `key = value`", n + 1)))?;
        let v = v.trim().trim_matches('"');
        out.push((k.trim().to_string(), v.to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    /// Applies one setting. Returns `Ok(false)` for keys this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "patch_size" => self.patch_size = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr_drop_epoch" => self.lr_drop_epoch = parse(key, value)?,
            "lr_drop_factor" => self.lr_drop_factor = parse(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "loss" => self.loss = value.parse()?,
            "target" => self.target = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "binarize_at_inference" => self.binarize_at_inference = parse_bool(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            if !cfg.set(&k, &v)? {
                return Err(invalid(format!("unknown config key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 1 || self.batch_size < 1 {
            return Err(invalid("patch_size and batch_size must be positive"));
        }
        if self.epochs < 1 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.lr_drop_factor >= 1.0) {
            return Err(invalid("lr_drop_factor must be at least 1"));
        }
        if self.depth < 1 {
            return Err(invalid("depth must be at least 1"));
        }
        if self.mode == TrainMode::Bitplanewise && self.loss == LossKind::Bce && self.target != TrainTarget::Bitplane {
            return Err(invalid("bce loss needs a binary bitplane target"));
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch`.
    pub fn lr_for_epoch(&self, epoch: u32) -> f64 {
        if epoch > self.lr_drop_epoch {
            self.lr / self.lr_drop_factor
        } else {
            self.lr
        }
    }

    /// Canonical `key = value` rendering; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        format!(
            "patch_size = {}\nbatch_size = {}\nlr = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\nadam_epsilon = {:?}\n\
             epochs = {}\nlr_drop_epoch = {}\nlr_drop_factor = {:?}\naugment = {}\nseed = {}\nloss = {}\n\
             target = {}\nmode = {}\nbinarize_at_inference = {}\ndepth = {}\n",
            self.patch_size,
            self.batch_size,
            self.lr,
            self.beta1,
            self.beta2,
            self.adam_epsilon,
            self.epochs,
            self.lr_drop_epoch,
            self.lr_drop_factor,
            self.augment,
            self.seed,
            self.loss,
            self.target,
            self.mode,
            self.binarize_at_inference,
            self.depth
        )
    }

    /// SHA-256 of [`TrainConfig::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Where training images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Manifest(PathBuf),
    Synthetic { count: usize, size: usize, seed: u64, channels: usize },
}

/// A config file for the `train` command: hyperparameters plus the bit
/// depths and the data source.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainJob {
    pub config: TrainConfig,
    pub source_bits: u32,
    pub target_bits: u32,
    pub data: DataSource,
}

impl TrainJob {
    /// Relative manifest paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config = TrainConfig::default();
        let (mut q, mut n) = (None, None);
        let mut manifest = None;
        let (mut count, mut size, mut seed, mut channels) = (None, 64usize, 0u64, 3usize);
        for (k, v) in parse_pairs(text)? {
            if config.set(&k, &v)? {
                continue;
            }
            match k.as_str() {
                "source_bits" => q = Some(parse(&k, &v)?),
                "target_bits" => n = Some(parse(&k, &v)?),
                "manifest" => manifest = Some(base_dir.join(&v)),
                "synth_count" => count = Some(parse(&k, &v)?),
                "synth_size" => size = parse(&k, &v)?,
                "synth_seed" => seed = parse(&k, &v)?,
                "synth_channels" => channels = parse(&k, &v)?,
                _ => return Err(invalid(format!("unknown config key `{k}`"))),
            }
        }
        config.validate()?;
        let source_bits = q.ok_or_else(|| invalid("config needs `source_bits`"))?;
        let target_bits = n.ok_or_else(|| invalid("config needs `target_bits`"))?;
        let data = match (manifest, count) {
            (Some(path), None) => DataSource::Manifest(path),
            (None, Some(count)) => DataSource::Synthetic { count, size, seed, channels },
            (Some(_), Some(_)) => return Err(invalid("give either `manifest` or `synth_count`, not both")),
            (None, None) => return Err(invalid("config needs `manifest` or `synth_count`")),
        };
        Ok(Self { config, source_bits, target_bits, data })
    }
}
