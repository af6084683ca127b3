use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::TensorContainer;
use crate::error::{Error, Result};
use crate::image::{dequantize, ImageBuffer, Provenance, QuantizedImage};
use crate::keyed::{derive_seed, seeded_rng, sha256_hex};

use super::Geometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

/// Normalized images plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: Geometry,
    pub images: Vec<ImageBuffer>,
    pub sources: Vec<String>,
    pub skipped: Vec<SkippedFile>,
}

impl Dataset {
    pub fn new(geometry: Geometry, images: Vec<ImageBuffer>, sources: Vec<String>) -> Result<Self> {
        if images.len() != sources.len() {
            return Err(Error::invalid("one source name per image is required"));
        }
        if images
            .iter()
            .any(|i| i.shape() != (geometry.width, geometry.height, geometry.channels))
        {
            return Err(Error::invalid("image shape differs from dataset geometry"));
        }
        Ok(Dataset {
            geometry,
            images,
            sources,
            skipped: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn to_container(&self) -> TensorContainer {
        let g = self.geometry;
        let meta = serde_json::json!({
            "width": g.width,
            "height": g.height,
            "channels": g.channels,
            "sources": self.sources,
            "skipped": self.skipped,
        });
        let mut c = TensorContainer::new("dataset", meta);
        let data: Vec<f64> = self
            .images
            .iter()
            .flat_map(|i| i.values().iter().copied())
            .collect();
        c.push(
            "images",
            vec![self.images.len(), g.channels, g.height, g.width],
            data,
        );
        c
    }

    pub fn from_container(mut c: TensorContainer) -> Result<Self> {
        if c.kind != "dataset" {
            return Err(Error::invalid(format!(
                "container holds {:?}, not a dataset",
                c.kind
            )));
        }
        let meta = c.meta.clone();
        let field = |k: &str| {
            meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::invalid(format!("dataset header lacks {k}")))
        };
        let geometry = Geometry {
            width: field("width")?,
            height: field("height")?,
            channels: field("channels")?,
        };
        let sources: Vec<String> = serde_json::from_value(meta["sources"].clone())
            .map_err(|e| Error::invalid(format!("dataset sources: {e}")))?;
        let skipped: Vec<SkippedFile> =
            serde_json::from_value(meta["skipped"].clone()).unwrap_or_default();
        let tensor = c.take("images")?;
        let per = geometry.width * geometry.height * geometry.channels;
        if per == 0 || tensor.data.len() != per * sources.len() {
            return Err(Error::invalid(
                "dataset tensor size does not match its header",
            ));
        }
        let images = tensor
            .data
            .chunks_exact(per)
            .map(|v| {
                ImageBuffer::new(
                    geometry.width,
                    geometry.height,
                    geometry.channels,
                    v.to_vec(),
                    Provenance::Dataset,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            geometry,
            images,
            sources,
            skipped,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dataset::from_container(TensorContainer::load(path)?)
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_container().to_bytes())
    }

    /// Keyed split into (training, held-out); the held-out part has
    /// `ceil(n * fraction)` images.
    pub fn split(&self, holdout_fraction: f64, seed: u64) -> (Vec<ImageBuffer>, Vec<ImageBuffer>) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed(seed, "dataset/holdout", 0)));
        let held = ((self.len() as f64) * holdout_fraction).ceil() as usize;
        let (train_idx, held_idx) = order.split_at(self.len() - held.min(self.len()));
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.images[i].clone()).collect();
        (pick(train_idx), pick(held_idx))
    }
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

fn load_normalized(path: &Path, g: Geometry) -> std::result::Result<ImageBuffer, String> {
    let img = image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())?;
    let side = img.width().min(img.height());
    if side == 0 {
        return Err("empty image".into());
    }
    let cropped = img.crop_imm(
        (img.width() - side) / 2,
        (img.height() - side) / 2,
        side,
        side,
    );
    let resized = cropped.resize_exact(
        g.width as u32,
        g.height as u32,
        image::imageops::FilterType::Triangle,
    );
    let n = g.pixels();
    let values = match g.channels {
        1 => resized.to_luma8().into_raw(),
        _ => {
            let rgb = resized.to_rgb8().into_raw();
            let mut planar = vec![0u8; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    planar[c * n + i] = rgb[3 * i + c];
                }
            }
            planar
        }
    };
    let q = QuantizedImage {
        width: g.width,
        height: g.height,
        channels: g.channels,
        values,
    };
    Ok(dequantize(&q, Provenance::Dataset))
}

/// Read every image in `src` (sorted by file name), center-crop to a square,
/// resize and normalize. Unreadable files are skipped and listed.
pub fn ingest(src: &Path, geometry: Geometry) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(src)
        .map_err(|e| Error::io(src, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    let mut ds = Dataset::new(geometry, Vec::new(), Vec::new())?;
    for path in paths {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match load_normalized(&path, geometry) {
            Ok(img) => {
                ds.images.push(img);
                ds.sources.push(name);
            }
            Err(reason) => {
                log::warn!("skipping {}: {reason}", path.display());
                ds.skipped.push(SkippedFile { path: name, reason });
            }
        }
    }
    Ok(ds)
}

/// Smooth synthetic scenes: a tilted background plus a few soft blobs and
/// faint noise. Stand-in corpus when no photographs are at hand.
pub fn synth_image(geometry: Geometry, rng: &mut impl Rng) -> QuantizedImage {
    let (w, h) = (geometry.width, geometry.height);
    let noise = Normal::new(0.0, 0.02).expect("valid sigma");
    let mut values = Vec::with_capacity(w * h * geometry.channels);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| {
            (
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.1..0.3),
                rng.random_range(-1.2..1.2),
            )
        })
        .collect();
    for c in 0..geometry.channels {
        let (gx, gy) = (rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
        let tint = if c == 0 {
            0.0
        } else {
            rng.random_range(-0.2..0.2)
        };
        for i in 0..h {
            for j in 0..w {
                let (x, y) = ((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64);
                let mut v = gx * (x - 0.5) + gy * (y - 0.5) + tint;
                for &(cx, cy, s, a) in &blobs {
                    v += a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp();
                }
                v += noise.sample(rng);
                values.push(crate::image::quantize_value(v.tanh()));
            }
        }
    }
    QuantizedImage {
        width: w,
        height: h,
        channels: geometry.channels,
        values,
    }
}

pub fn synth_corpus(n: usize, geometry: Geometry, seed: u64) -> Vec<QuantizedImage> {
    (0..n)
        .map(|i| {
            synth_image(
                geometry,
                &mut seeded_rng(derive_seed(seed, "synth", i as u64)),
            )
        })
        .collect()
}

pub fn synth_dataset(n: usize, geometry: Geometry, seed: u64) -> Result<Dataset> {
    let images = synth_corpus(n, geometry, seed)
        .iter()
        .map(|q| dequantize(q, Provenance::Dataset))
        .collect();
    let sources = (0..n).map(|i| format!("synth-{i:05}")).collect();
    Dataset::new(geometry, images, sources)
}
