use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Where single-view training images live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub root: PathBuf,
    /// Required resolution; inferred from the first image when absent.
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default = "default_category")]
    pub category: String,
    #[serde(default = "default_views")]
    pub views_per_instance: usize,
}

fn default_category() -> String {
    "chair".into()
}

fn default_views() -> usize {
    1
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetSpec { root: root.into(), resolution: None, category: default_category(), views_per_instance: 1 }
    }
}

/// A folder of square RGB images held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Image>,
    names: Vec<String>,
    resolution: usize,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png") | Some("jpg") | Some("jpeg")
    )
}

/// Load every decodable image under `spec.root` (sorted by file name).
/// Undecodable files are skipped with a warning.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if !spec.root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", spec.root.display())));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&spec.root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    let mut names = Vec::with_capacity(paths.len());
    let mut resolution = spec.resolution;
    for path in paths {
        let img = match Image::load(&path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        if img.width() != img.height() {
            return Err(Error::Dataset(format!("{} is not square ({}x{})", path.display(), img.width(), img.height())));
        }
        match resolution {
            None => resolution = Some(img.width()),
            Some(r) if r != img.width() => {
                return Err(Error::Dataset(format!(
                    "resolution mismatch: {} is {}px, dataset is {r}px",
                    path.display(),
                    img.width()
                )))
            }
            Some(_) => {}
        }
        names.push(path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string());
        images.push(img);
    }
    if images.is_empty() {
        return Err(Error::Dataset(format!("no decodable images in {}", spec.root.display())));
    }
    Ok(Dataset { images, names, resolution: resolution.expect("set by first image") })
}

impl Dataset {
    pub fn from_images(images: Vec<Image>) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Dataset("dataset is empty".into()))?;
        let resolution = first.width();
        if images.iter().any(|i| i.width() != resolution || i.height() != resolution) {
            return Err(Error::Dataset("resolution mismatch".into()));
        }
        let names = (0..images.len()).map(|i| format!("{i:05}")).collect();
        Ok(Dataset { images, names, resolution })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Shuffled visiting order for one epoch, fixed by `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        idx.shuffle(&mut rng);
        idx
    }

    /// Endless seed-deterministic stream of indices, epoch after epoch.
    pub fn sampler(&self, seed: u64) -> EpochSampler {
        EpochSampler { len: self.len(), seed, epoch: 0, order: Vec::new(), pos: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct EpochSampler {
    len: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Iterator for EpochSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.len == 0 {
            return None;
        }
        if self.pos >= self.order.len() {
            let mut idx: Vec<usize> = (0..self.len).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            idx.shuffle(&mut rng);
            self.order = idx;
            self.pos = 0;
            self.epoch += 1;
        }
        self.pos += 1;
        Some(self.order[self.pos - 1])
    }
}
