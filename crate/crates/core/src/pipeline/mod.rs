//! End-to-end orchestration behind the command line verbs.

mod commands;
mod config;
mod dataset;
mod manifest;

use std::path::Path;

use rand::Rng;

pub use commands::{
    ber_rows_to_csv, cmd_audit, cmd_decrypt, cmd_encrypt, cmd_eval_ber, cmd_eval_pe, cmd_ingest,
    cmd_keygen, cmd_synth_corpus, cmd_train, held_out_covers, load_key, pe_rows_to_csv,
    toy_demo_csv, AuditReport, BerRow, EncryptRequest,
};
pub use config::{EvalConfig, Geometry, GrilleConfig, MaskConfig, PipelineConfig};
pub use dataset::{ingest, synth_corpus, synth_dataset, synth_image, Dataset, SkippedFile};
pub use manifest::{blowup_factor, embedding_rate, ImageRecord, RunManifest};

use crate::error::Result;
use crate::generator::{Checkpoint, DiscriminatorModel, GeneratorModel};
use crate::grille_key::{generate_completion_mask, GrilleKey, Mask};
use crate::image::ImageBuffer;
use crate::keyed::sha256_hex;
use crate::latent_search::{find_z, make_stego, SearchConfig, SearchResult};
use crate::message_codec::{expand_message, extract, MessageBits};

/// A frozen generator/discriminator pair and the digest of its checkpoint.
#[derive(Debug, Clone)]
pub struct Models {
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub digest: String,
}

impl Models {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
        let ckpt =
            Checkpoint::from_container(crate::container::TensorContainer::from_bytes(&bytes)?)?;
        Ok(Models {
            generator: ckpt.generator,
            discriminator: ckpt.discriminator,
            digest: sha256_hex(&bytes),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Encryption {
    pub expanded: ImageBuffer,
    pub stego: ImageBuffer,
    pub search: SearchResult,
}

/// Expand the message into the cover, search for the latent vector, and
/// form the stego image in the configured mode.
#[allow(clippy::too_many_arguments)]
pub fn encrypt_image(
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    cover: &ImageBuffer,
    mask: &Mask,
    key: &GrilleKey,
    msg: &MessageBits,
    cfg: &SearchConfig,
    rng: &mut impl Rng,
) -> Result<Encryption> {
    let expanded = expand_message(cover, mask, key, msg)?;
    let search = find_z(g, d, &expanded, mask, key, cfg, rng)?;
    let stego = make_stego(&g.forward(&search.z)?, &expanded, mask, cfg.stego_mode)?;
    Ok(Encryption {
        expanded,
        stego,
        search,
    })
}

/// Message bits as the receiver sees them: the stego is quantized exactly as
/// it would be on disk, then read through the grille.
pub fn decrypt_image(stego: &ImageBuffer, key: &GrilleKey) -> Result<MessageBits> {
    extract(&stego.snapped(), key)
}

pub fn config_mask(cfg: &PipelineConfig) -> Result<Mask> {
    let g = cfg.geometry;
    generate_completion_mask(
        g.width,
        g.height,
        cfg.mask.pattern,
        cfg.mask.missing_fraction,
        cfg.mask.seed,
    )
}
