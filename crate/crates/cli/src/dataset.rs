//! Dataset manifests: synthetic phantoms written as PGM, directories of PGM
//! files, or an IDX image stack.

use std::path::{Path, PathBuf};

use d2gp::io::{phantom, read_idx_images, read_pgm, resize_nearest, write_pgm};
use d2gp::rng::{self, Purpose};
use d2gp::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Context, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    PgmDir,
    IdxPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub source: Source,
    pub count: usize,
    pub image_side: usize,
    /// Always `"unit"`: pixel values divided by the file's maximum value.
    pub normalization: String,
    pub split_seed: u64,
    pub train_fraction: f64,
    /// Paths relative to the manifest; one IDX file for `idx_pair`.
    pub files: Vec<PathBuf>,
    /// Free-form provenance, e.g. the seed a synthetic set came from.
    #[serde(default)]
    pub note: String,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                message: format!("manifest version {} is not supported", m.version),
            });
        }
        if !(0.0..=1.0).contains(&m.train_fraction) {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                message: format!("train_fraction {} outside [0, 1]", m.train_fraction),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }

    /// Index order after the seeded split shuffle; the first
    /// `train_count()` entries form the training pool.
    pub fn split_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.count).collect();
        order.shuffle(&mut rng::stream(self.split_seed, Purpose::Split));
        order
    }

    pub fn train_count(&self) -> usize {
        (self.train_fraction * self.count as f64).round() as usize
    }
}

/// Seed of the `i`-th synthetic phantom under `root`.
pub fn phantom_seed(root: u64, i: usize) -> u64 {
    rng::derive_seed(root, Purpose::Data, i as u64)
}

/// Writes `count` phantoms as `img_00000.pgm`... plus `manifest.json`.
pub fn gen_data(
    count: usize,
    image_side: usize,
    seed: u64,
    train_fraction: f64,
    out: &Path,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(CliError::Config {
            path: PathBuf::from("--count"),
            message: "count must be >= 1".into(),
        });
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut files = Vec::with_capacity(count);
    for i in 0..count {
        let name = PathBuf::from(format!("img_{i:05}.pgm"));
        let path = out.join(&name);
        write_pgm(&path, &phantom(image_side, phantom_seed(seed, i))).context(path.display().to_string())?;
        files.push(name);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        source: Source::Synthetic,
        count,
        image_side,
        normalization: "unit".into(),
        split_seed: seed,
        train_fraction,
        files,
        note: format!("synthetic phantoms, root seed {seed}"),
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Decodes every image the manifest lists, in listing order, resized to
/// `image_side` and flattened.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<Tensor>)> {
    let m = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let raw: Vec<Tensor> = match m.source {
        Source::Synthetic | Source::PgmDir => m
            .files
            .iter()
            .map(|f| {
                let p = base.join(f);
                read_pgm(&p).context(p.display().to_string())
            })
            .collect::<Result<_>>()?,
        Source::IdxPair => {
            let [file] = m.files.as_slice() else {
                return Err(CliError::Config {
                    path: manifest_path.to_path_buf(),
                    message: "idx_pair lists exactly one image file".into(),
                });
            };
            let p = base.join(file);
            read_idx_images(&p).context(p.display().to_string())?
        }
    };
    if raw.len() != m.count {
        return Err(CliError::Config {
            path: manifest_path.to_path_buf(),
            message: format!("manifest lists {} images, found {}", m.count, raw.len()),
        });
    }
    let n = m.image_side * m.image_side;
    let images = raw
        .iter()
        .map(|img| {
            let r = if img.shape() == [m.image_side, m.image_side] {
                img.clone()
            } else {
                resize_nearest(img, m.image_side).context("resize")?
            };
            r.reshape(&[n]).context("flatten")
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, images))
}
