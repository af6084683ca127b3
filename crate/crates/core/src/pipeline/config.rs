use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::TrainConfig;
use crate::grille_key::MaskPattern;
use crate::keyed::sha256_hex;
use crate::latent_search::SearchConfig;
use crate::steganalysis::EnsembleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Geometry {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub pattern: MaskPattern,
    pub missing_fraction: f64,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            pattern: MaskPattern::Block,
            missing_fraction: 0.25,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrilleConfig {
    /// Fraction of known cells that carry message bits.
    pub density: f64,
    pub bpi: u8,
    pub channel: usize,
}

impl Default for GrilleConfig {
    fn default() -> Self {
        GrilleConfig {
            density: 0.01,
            bpi: 8,
            channel: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_images: usize,
    pub bpis: Vec<u8>,
    /// Bits per pixel.
    pub payloads: Vec<f64>,
    pub splits: usize,
    /// Iteration counts at which `eval-ber` records the best iterate's BER.
    pub checkpoints: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_images: 50,
            bpis: vec![1, 3, 5, 8],
            payloads: vec![0.0, 0.1],
            splits: 10,
            checkpoints: vec![0, 100, 300, 1000],
        }
    }
}

/// Everything a campaign needs; a TOML file with every key optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Dataset archive written by `ingest`.
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
    pub geometry: Geometry,
    /// Fraction of the dataset never used for training.
    pub holdout_fraction: f64,
    pub mask: MaskConfig,
    pub grille: GrilleConfig,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            dataset: PathBuf::from("dataset.grl"),
            checkpoint: PathBuf::from("model.ckpt"),
            output_dir: PathBuf::from("out"),
            geometry: Geometry {
                width: 32,
                height: 32,
                channels: 1,
            },
            holdout_fraction: 0.1,
            mask: MaskConfig::default(),
            grille: GrilleConfig::default(),
            search: SearchConfig {
                learning_rate: 0.03,
                message_weight: 300.0,
                ..SearchConfig::default()
            },
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.geometry;
        if g.width == 0 || g.height == 0 || !(g.channels == 1 || g.channels == 3) {
            return Err(Error::invalid(
                "geometry needs positive size and 1 or 3 channels",
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::invalid("holdout fraction must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.mask.missing_fraction) {
            return Err(Error::invalid("missing fraction must lie in [0, 1]"));
        }
        if !(self.grille.density > 0.0 && self.grille.density <= 1.0) {
            return Err(Error::invalid("grille density must lie in (0, 1]"));
        }
        for &bpi in std::iter::once(&self.grille.bpi).chain(&self.eval.bpis) {
            if !(1..=8).contains(&bpi) {
                return Err(Error::invalid(format!(
                    "bit plane index {bpi} outside 1..=8"
                )));
            }
        }
        if self.grille.channel >= g.channels {
            return Err(Error::invalid("grille channel exceeds channel count"));
        }
        if self.eval.payloads.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("payloads must lie in [0, 1] bits per pixel"));
        }
        if self.eval.splits == 0 {
            return Err(Error::invalid("at least one split is required"));
        }
        self.search.validate()
    }
}
