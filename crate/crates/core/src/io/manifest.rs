//! Dataset manifests: a JSON list of image files with a declared bit depth.
//!
//! ```json
//! { "container_bits": 16,
//!   "images": [ { "path": "a.png", "split": "train" }, { "path": "b.ppm" } ] }
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image_io::load_image;
use crate::error::{invalid, Error, Result};
use crate::pipeline::EvalImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub container_bits: u32,
    pub images: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(container_bits: u32, images: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self { container_bits, images, base_dir: base_dir.into() }
    }

    /// Parses and checks the manifest: no duplicate paths, every file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if !(2..=16).contains(&manifest.container_bits) {
            return Err(invalid(format!("manifest declares {} bits", manifest.container_bits)));
        }
        let mut seen = HashSet::new();
        for entry in &manifest.images {
            if !seen.insert(&entry.path) {
                return Err(invalid(format!("manifest lists {} twice", entry.path.display())));
            }
            let full = manifest.resolve(entry);
            if !full.is_file() {
                return Err(invalid(format!("manifest image {} does not exist", full.display())));
            }
        }
        Ok(manifest)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        fs::write(path, json)?;
        Ok(())
    }

    /// Decodes the listed images (optionally one split), checking each
    /// against the declared depth. Ids are the paths as written.
    pub fn load_images(&self, split: Option<Split>) -> Result<Vec<EvalImage>> {
        self.images
            .iter()
            .filter(|e| split.is_none() || e.split == split)
            .map(|entry| {
                let image = load_image(&self.resolve(entry))?;
                if image.container_bits() != self.container_bits {
                    return Err(invalid(format!(
                        "{} decodes to {} bits, manifest declares {}",
                        entry.path.display(),
                        image.container_bits(),
                        self.container_bits
                    )));
                }
                Ok(EvalImage { id: entry.path.display().to_string(), image })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::{ImageTensor, Shape};
    use crate::io::image_io::save_image;

    #[test]
    fn loads_relative_paths_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::from_fn(Shape::new(3, 3, 1), 16, |_, y, x| (y * 1000 + x) as u16).unwrap();
        save_image(&img, &dir.path().join("a.pgm")).unwrap();
        save_image(&img, &dir.path().join("b.png")).unwrap();
        let m = DatasetManifest::new(
            16,
            vec![
                ManifestEntry { path: "a.pgm".into(), split: Some(Split::Train) },
                ManifestEntry { path: "b.png".into(), split: Some(Split::Test) },
            ],
            dir.path(),
        );
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded.load_images(None).unwrap().len(), 2);
        let test = loaded.load_images(Some(Split::Test)).unwrap();
        assert_eq!(test.len(), 1);
        assert_eq!(test[0].id, "b.png");
        assert_eq!(test[0].image, img);
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"{"container_bits": 8, "images": [{"path": "missing.png"}]}"#).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
        let img = ImageTensor::zeros(Shape::new(2, 2, 1), 8).unwrap();
        save_image(&img, &dir.path().join("x.pgm")).unwrap();
        fs::write(&path, r#"{"container_bits": 8, "images": [{"path": "x.pgm"}, {"path": "x.pgm"}]}"#).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
        fs::write(&path, r#"{"container_bits": 16, "images": [{"path": "x.pgm"}]}"#).unwrap();
        assert!(DatasetManifest::load(&path).unwrap().load_images(None).is_err());
        fs::write(&path, "not json").unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Format { .. })));
    }
}
