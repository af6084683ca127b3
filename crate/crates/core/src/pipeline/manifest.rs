use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{json_parse_error, Error, Result};
use crate::latent_search::{LossBreakdown, StegoMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub stego_path: String,
    pub trace_path: String,
    /// Embedded message as a `0`/`1` string.
    pub message: String,
    pub ber: f64,
    pub best_loss: LossBreakdown,
    pub best_iteration: usize,
    pub seconds: f64,
}

/// Provenance of one encryption run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config_digest: String,
    pub checkpoint_digest: String,
    pub key_digest: String,
    pub key_path: String,
    pub mask_digest: String,
    pub stego_mode: StegoMode,
    pub bpi: u8,
    pub message_bits: usize,
    /// 8-bit samples per image (pixels times channels).
    pub image_samples: usize,
    /// Message bits per 8-bit image sample.
    pub embedding_rate: f64,
    /// Ciphertext bits per plaintext bit; always `8 / embedding_rate`.
    pub blowup_factor: f64,
    pub records: Vec<ImageRecord>,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| json_parse_error(text, &e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunManifest::from_json(&text)
    }
}

/// Message bits per 8-bit sample of a `samples`-sample image.
pub fn embedding_rate(message_bits: usize, samples: usize) -> f64 {
    message_bits as f64 / samples as f64
}

/// `8 / embedding_rate`, computed from integers so that round rates come out
/// exact.
pub fn blowup_factor(message_bits: usize, samples: usize) -> f64 {
    (8 * samples) as f64 / message_bits as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blowup_at_tenth_rate() {
        assert_eq!(embedding_rate(40, 400), 0.1);
        assert_eq!(blowup_factor(40, 400), 80.0);
        assert_eq!(blowup_factor(1, 1), 8.0);
    }
}
