//! A trained set of networks for one `(q, N)` pair, and its directory layout.
//!
//! ```text
//! <dir>/bundle.json      manifest: depths, mode, config snapshot and hash
//! <dir>/plane_<p>.bitr   one model per restored plane (bitplane-wise mode)
//! <dir>/residual.bitr    the single network (single-shot mode)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{TrainConfig, TrainMode};
use crate::bitcore::RecoveryRange;
use crate::error::{invalid, Error, Result};
use crate::net::model_io::{load_model, save_model};
use crate::net::{BitplaneNetwork, Head, TargetKind};

pub const MANIFEST_FILE: &str = "bundle.json";
pub const RESIDUAL_FILE: &str = "residual.bitr";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum BundleModels {
    /// Network `k` (index `k - 1`) restores plane `N - (q + k)`.
    Bitplanewise(Vec<BitplaneNetwork<f32>>),
    SingleShot(BitplaneNetwork<f32>),
    /// No networks: recovery reads the true planes from the ground truth.
    /// Only usable where the ground truth is known (evaluation).
    Oracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    range: RecoveryRange,
    config: TrainConfig,
    models: BundleModels,
}

pub fn plane_file(p: u32) -> String {
    format!("plane_{p}.bitr")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub file: String,
    pub plane_index: u32,
    pub input_bits: u32,
    pub depth: u32,
    pub sha256: String,
}

/// Contents of `bundle.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    /// `bitplanewise`, `single_shot` or `oracle`.
    pub mode: String,
    pub source_bits: u32,
    pub target_bits: u32,
    pub depth: u32,
    pub binarize_at_inference: bool,
    pub config_hash: String,
    pub config: TrainConfig,
    pub networks: Vec<NetworkEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelBundle {
    pub fn new(range: RecoveryRange, config: TrainConfig, models: BundleModels) -> Result<Self> {
        let n = range.target_bits();
        match &models {
            BundleModels::Bitplanewise(nets) => {
                if nets.len() != range.steps() as usize {
                    return Err(invalid(format!(
                        "{} networks for {} missing planes",
                        nets.len(),
                        range.steps()
                    )));
                }
                for (i, net) in nets.iter().enumerate() {
                    let k = i as u32 + 1;
                    let m = net.meta();
                    if m.plane_index != range.plane_for_step(k)?
                        || m.input_bits != range.input_bits_for_step(k)?
                        || m.container_bits != n
                        || m.head != Head::Sigmoid
                        || m.channels != nets[0].meta().channels
                    {
                        return Err(invalid(format!(
                            "network {k} (plane {}, input {} bits, {} channels) does not fit step {k} of {}-to-{n} bits",
                            m.plane_index,
                            m.input_bits,
                            m.channels,
                            range.source_bits()
                        )));
                    }
                }
            }
            BundleModels::SingleShot(net) => {
                let m = net.meta();
                if m.target != TargetKind::Residual || m.input_bits != range.source_bits() || m.container_bits != n {
                    return Err(invalid("single-shot network does not match the recovery range"));
                }
            }
            BundleModels::Oracle => {}
        }
        Ok(Self { range, config, models })
    }

    pub fn oracle(range: RecoveryRange) -> Self {
        Self { range, config: TrainConfig::default(), models: BundleModels::Oracle }
    }

    pub fn range(&self) -> RecoveryRange {
        self.range
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn models(&self) -> &BundleModels {
        &self.models
    }

    pub fn models_mut(&mut self) -> &mut BundleModels {
        &mut self.models
    }

    pub fn mode_label(&self) -> &'static str {
        match self.models {
            BundleModels::Bitplanewise(_) => "bitplanewise",
            BundleModels::SingleShot(_) => "single_shot",
            BundleModels::Oracle => "oracle",
        }
    }

    /// Label for reports: how planes are turned into codes.
    pub fn inference_mode(&self) -> &'static str {
        match self.models {
            BundleModels::Bitplanewise(_) if self.config.binarize_at_inference => "bitplanewise_binarized",
            BundleModels::Bitplanewise(_) => "bitplanewise_raw",
            BundleModels::SingleShot(_) => "single_shot",
            BundleModels::Oracle => "oracle",
        }
    }

    /// Model files in manifest order, as `(file name, bytes)`.
    pub fn model_files(&self) -> Vec<(String, Vec<u8>)> {
        match &self.models {
            BundleModels::Bitplanewise(nets) => {
                nets.iter().map(|net| (plane_file(net.meta().plane_index), save_model(net))).collect()
            }
            BundleModels::SingleShot(net) => vec![(RESIDUAL_FILE.to_string(), save_model(net))],
            BundleModels::Oracle => Vec::new(),
        }
    }

    pub fn manifest(&self) -> BundleManifest {
        let nets: Vec<&BitplaneNetwork<f32>> = match &self.models {
            BundleModels::Bitplanewise(nets) => nets.iter().collect(),
            BundleModels::SingleShot(net) => vec![net],
            BundleModels::Oracle => Vec::new(),
        };
        let networks = nets
            .iter()
            .zip(self.model_files())
            .map(|(net, (file, bytes))| NetworkEntry {
                file,
                plane_index: net.meta().plane_index,
                input_bits: net.meta().input_bits,
                depth: net.meta().depth,
                sha256: sha256_hex(&bytes),
            })
            .collect();
        BundleManifest {
            format_version: MANIFEST_VERSION,
            mode: self.mode_label().to_string(),
            source_bits: self.range.source_bits(),
            target_bits: self.range.target_bits(),
            depth: self.config.depth,
            binarize_at_inference: self.config.binarize_at_inference,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            networks,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (file, bytes) in self.model_files() {
            fs::write(dir.join(file), bytes)?;
        }
        let mut json = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        json.push('\n');
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: 0,
            message: format!("{}: {e}", MANIFEST_FILE),
        })?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Format {
                offset: 0,
                message: format!("unsupported bundle format version {}", manifest.format_version),
            });
        }
        let range = RecoveryRange::new(manifest.source_bits, manifest.target_bits)?;
        let mut nets = Vec::with_capacity(manifest.networks.len());
        for entry in &manifest.networks {
            let bytes = fs::read(dir.join(&entry.file))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("{} does not match its checksum in {MANIFEST_FILE}", entry.file),
                });
            }
            let net = load_model(&bytes)?;
            let m = net.meta();
            if m.plane_index != entry.plane_index || m.input_bits != entry.input_bits || m.depth != entry.depth {
                return Err(invalid(format!("{} metadata disagrees with {MANIFEST_FILE}", entry.file)));
            }
            nets.push(net);
        }
        let models = match manifest.mode.as_str() {
            "bitplanewise" => BundleModels::Bitplanewise(nets),
            "single_shot" if nets.len() == 1 => BundleModels::SingleShot(nets.pop().expect("one network")),
            "oracle" if nets.is_empty() => BundleModels::Oracle,
            other => return Err(invalid(format!("bundle mode `{other}` with {} networks", nets.len()))),
        };
        let mut config = manifest.config;
        config.binarize_at_inference = manifest.binarize_at_inference;
        if matches!(models, BundleModels::SingleShot(_)) {
            config.mode = TrainMode::SingleShot;
        }
        Self::new(range, config, models)
    }
}
