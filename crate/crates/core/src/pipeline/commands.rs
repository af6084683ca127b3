use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{train, Checkpoint, TrainReport};
use crate::grille_key::{derive_grille, parse_key, serialize_key, GrilleKey, Mask};
use crate::image::{ImageBuffer, Provenance, QuantizedImage};
use crate::keyed::{derive_seed, seeded_rng, Secret};
use crate::latent_search::{find_z_observed, make_stego, trace_to_csv, LossBreakdown};
use crate::message_codec::{bit_error_rate, expand_message, extract, MessageBits};
use crate::steganalysis::{evaluate_pe, PeEstimate, PeSetup};
use crate::toy_cipher::{toy_decrypt, toy_sample_mode, PlanePoint, SampleMode};

use super::{
    blowup_factor, config_mask, decrypt_image, embedding_rate, encrypt_image, ingest, synth_corpus,
    Dataset, Geometry, ImageRecord, Models, PipelineConfig, RunManifest,
};

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Writes the archive and a JSON summary (sources, skipped files, digest)
/// next to it.
pub fn cmd_ingest(src: &Path, out: &Path, geometry: Geometry) -> Result<Dataset> {
    let ds = ingest(src, geometry)?;
    ensure_parent(out)?;
    ds.save(out)?;
    let summary = serde_json::json!({
        "records": ds.len(),
        "sources": ds.sources,
        "skipped": ds.skipped,
        "digest": ds.digest(),
    });
    write_text(
        &out.with_extension("json"),
        &serde_json::to_string_pretty(&summary).expect("json"),
    )?;
    Ok(ds)
}

/// Writes `n` synthetic PNGs named `synth-NNNNN.png` into `dir`.
pub fn cmd_synth_corpus(dir: &Path, n: usize, geometry: Geometry, seed: u64) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, img) in synth_corpus(n, geometry, seed).iter().enumerate() {
        img.save_png(&dir.join(format!("synth-{i:05}.png")))?;
    }
    Ok(n)
}

fn load_split(cfg: &PipelineConfig) -> Result<(Vec<ImageBuffer>, Vec<ImageBuffer>)> {
    let ds = Dataset::load(&cfg.dataset)?;
    if ds.geometry != cfg.geometry {
        return Err(Error::invalid(format!(
            "dataset geometry {:?} differs from configured {:?}",
            ds.geometry, cfg.geometry
        )));
    }
    if ds.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    Ok(ds.split(cfg.holdout_fraction, cfg.seed))
}

/// Images never seen in training.
pub fn held_out_covers(cfg: &PipelineConfig) -> Result<Vec<ImageBuffer>> {
    let (train, held) = load_split(cfg)?;
    Ok(if held.is_empty() { train } else { held })
}

/// Train on the non-held-out part of the dataset; writes the checkpoint and
/// the per-epoch report (CSV and JSON).
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainReport> {
    let (train_set, _) = load_split(cfg)?;
    let (g, d, report) = train(&train_set, &cfg.train)?;
    ensure_parent(&cfg.checkpoint)?;
    Checkpoint {
        epoch: report.epochs(),
        seed: cfg.train.seed,
        generator: g,
        discriminator: d,
    }
    .save(&cfg.checkpoint)?;
    write_text(&cfg.output_dir.join("train_report.csv"), &report.to_csv())?;
    write_text(
        &cfg.output_dir.join("train_report.json"),
        &serde_json::to_string_pretty(&report).expect("json"),
    )?;
    Ok(report)
}

/// Derive a grille for the configured mask; writes the key file and the mask
/// (as `<key>.mask.json`).
pub fn cmd_keygen(
    cfg: &PipelineConfig,
    key_path: &Path,
    secret: Option<Secret>,
) -> Result<(GrilleKey, Mask)> {
    let mask = config_mask(cfg)?;
    let secret = secret.unwrap_or_else(|| Secret::from_u64(derive_seed(cfg.seed, "keygen", 0)));
    let key = derive_grille(
        &secret,
        &mask,
        cfg.grille.density,
        cfg.grille.bpi,
        cfg.grille.channel,
    )?;
    ensure_parent(key_path)?;
    std::fs::write(key_path, serialize_key(&key)).map_err(|e| Error::io(key_path, e))?;
    write_text(&key_path.with_extension("mask.json"), &mask.to_json())?;
    Ok((key, mask))
}

pub fn load_key(path: &Path) -> Result<GrilleKey> {
    parse_key(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone)]
pub struct EncryptRequest {
    pub message: MessageBits,
    pub key: GrilleKey,
    pub key_path: PathBuf,
    /// Explicit cover; otherwise held-out image `cover_index` is used.
    pub cover: Option<ImageBuffer>,
    pub cover_index: usize,
    /// Stego PNG path; the trace (`.trace.csv`) and manifest
    /// (`.manifest.json`) are written beside it.
    pub out: PathBuf,
}

pub fn cmd_encrypt(
    cfg: &PipelineConfig,
    models: &Models,
    req: &EncryptRequest,
) -> Result<RunManifest> {
    if !is_png(&req.out) {
        return Err(Error::LossyFormat(req.out.clone()));
    }
    let started = Instant::now();
    let mask = config_mask(cfg)?;
    req.key.check_pairing(&mask)?;
    let cover = match &req.cover {
        Some(c) => c.clone(),
        None => {
            let covers = held_out_covers(cfg)?;
            covers[req.cover_index % covers.len()].clone()
        }
    };
    let mut rng = seeded_rng(derive_seed(cfg.seed, "encrypt/z", req.cover_index as u64));
    let enc = encrypt_image(
        &models.generator,
        &models.discriminator,
        &cover,
        &mask,
        &req.key,
        &req.message,
        &cfg.search,
        &mut rng,
    )?;
    ensure_parent(&req.out)?;
    enc.stego.save_png(&req.out)?;
    let trace_path = req.out.with_extension("trace.csv");
    write_text(&trace_path, &trace_to_csv(&enc.search.trace))?;

    let on_disk = ImageBuffer::load_png(&req.out, Provenance::Stego)?;
    let recovered = extract(&on_disk, &req.key)?.prefix(req.message.len());
    let ber = bit_error_rate(&req.message, &recovered)?;
    let file_name = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let samples = cover.values().len();
    let manifest = RunManifest {
        seed: cfg.seed,
        config_digest: cfg.digest(),
        checkpoint_digest: models.digest.clone(),
        key_digest: req.key.digest(),
        key_path: req.key_path.to_string_lossy().into_owned(),
        mask_digest: mask.digest(),
        stego_mode: cfg.search.stego_mode,
        bpi: req.key.bpi(),
        message_bits: req.message.len(),
        image_samples: samples,
        embedding_rate: embedding_rate(req.message.len(), samples),
        blowup_factor: blowup_factor(req.message.len(), samples),
        records: vec![ImageRecord {
            stego_path: file_name(&req.out),
            trace_path: file_name(&trace_path),
            message: req.message.to_bit_string(),
            ber,
            best_loss: enc.search.best,
            best_iteration: enc.search.best_iteration,
            seconds: started.elapsed().as_secs_f64(),
        }],
        total_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.save(&req.out.with_extension("manifest.json"))?;
    Ok(manifest)
}

/// All `capacity` bits under the grille of a stego PNG.
pub fn cmd_decrypt(stego_path: &Path, key_path: &Path) -> Result<MessageBits> {
    let key = load_key(key_path)?;
    let q = QuantizedImage::load_png(stego_path)?;
    let img = crate::image::dequantize(&q, Provenance::Stego);
    extract(&img, &key)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub bpi: u8,
    pub iterations: usize,
    pub mean_ber: f64,
    pub stderr: f64,
    pub n_images: usize,
}

pub fn ber_rows_to_csv(rows: &[BerRow]) -> String {
    let mut out = String::from("bpi,iterations,mean_ber,stderr,n_images\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.bpi, r.iterations, r.mean_ber, r.stderr, r.n_images
        ));
    }
    out
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Bit error rate of the best iterate at each configured checkpoint, per
/// bit plane. Image `i` uses the same cover, message, grille seed and start
/// point under every bit plane.
pub fn cmd_eval_ber(
    cfg: &PipelineConfig,
    models: &Models,
    covers: &[ImageBuffer],
) -> Result<Vec<BerRow>> {
    if covers.is_empty() || cfg.eval.n_images == 0 {
        return Err(Error::invalid(
            "BER evaluation needs covers and n_images >= 1",
        ));
    }
    let mask = config_mask(cfg)?;
    let mut checkpoints: Vec<usize> = cfg
        .eval
        .checkpoints
        .iter()
        .copied()
        .filter(|&c| c <= cfg.search.iterations)
        .chain([cfg.search.iterations])
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let (g, d) = (&models.generator, &models.discriminator);
    let mut rows = Vec::new();
    for &bpi in &cfg.eval.bpis {
        let per_image: Vec<Vec<f64>> = (0..cfg.eval.n_images)
            .into_par_iter()
            .map(|i| -> Result<Vec<f64>> {
                let idx = i as u64;
                let cover = &covers[i % covers.len()];
                let secret = Secret::from_u64(derive_seed(cfg.seed, "ber/key", idx));
                let key =
                    derive_grille(&secret, &mask, cfg.grille.density, bpi, cfg.grille.channel)?;
                let msg = MessageBits::random(
                    key.capacity(),
                    &mut seeded_rng(derive_seed(cfg.seed, "ber/msg", idx)),
                );
                let expanded = expand_message(cover, &mask, &key, &msg)?;
                let mut bers = Vec::with_capacity(checkpoints.len());
                let mut failure = None;
                let mut observe = |step: usize,
                                   z: &crate::generator::LatentVector,
                                   _: &LossBreakdown| {
                    if failure.is_some() || !checkpoints.contains(&step) {
                        return;
                    }
                    let ber = g
                        .forward(z)
                        .and_then(|img| make_stego(&img, &expanded, &mask, cfg.search.stego_mode))
                        .and_then(|stego| decrypt_image(&stego, &key))
                        .and_then(|got| bit_error_rate(&msg, &got));
                    match ber {
                        Ok(b) => bers.push(b),
                        Err(e) => failure = Some(e),
                    }
                };
                find_z_observed(
                    g,
                    d,
                    &expanded,
                    &mask,
                    &key,
                    &cfg.search,
                    &mut seeded_rng(derive_seed(cfg.seed, "ber/z", idx)),
                    &mut observe,
                )?;
                match failure {
                    Some(e) => Err(e),
                    None => Ok(bers),
                }
            })
            .collect::<Result<_>>()?;
        for (k, &iterations) in checkpoints.iter().enumerate() {
            let xs: Vec<f64> = per_image.iter().map(|b| b[k]).collect();
            let (mean_ber, stderr) = mean_stderr(&xs);
            rows.push(BerRow {
                bpi,
                iterations,
                mean_ber,
                stderr,
                n_images: xs.len(),
            });
        }
    }
    Ok(rows)
}

pub fn cmd_eval_pe(
    cfg: &PipelineConfig,
    models: &Models,
    covers: &[ImageBuffer],
) -> Result<Vec<PeEstimate>> {
    let setup = PeSetup {
        generator: &models.generator,
        discriminator: &models.discriminator,
        covers,
        mask: config_mask(cfg)?,
        channel: cfg.grille.channel,
        search: cfg.search,
        ensemble: cfg.ensemble,
        n_images: cfg.eval.n_images,
        splits: cfg.eval.splits,
        seed: cfg.seed,
    };
    evaluate_pe(&setup, &cfg.eval.payloads, &cfg.eval.bpis)
}

pub fn pe_rows_to_csv(rows: &[PeEstimate]) -> String {
    let mut out = String::from("payload_bpp,bpi,iterations,p_e,stderr,p_fa,p_md,n_images,splits\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.report.payload_bpp.unwrap_or(0.0),
            r.report.bpi.unwrap_or(0),
            r.report.iterations.unwrap_or(0),
            r.report.p_e,
            r.p_e_stderr,
            r.report.p_fa,
            r.report.p_md,
            r.n_images,
            r.splits
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub records: usize,
    pub mismatches: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recompute every BER in a manifest from the stored stego PNGs and key.
/// `key_override` replaces the key path recorded in the manifest.
pub fn cmd_audit(manifest_path: &Path, key_override: Option<&Path>) -> Result<AuditReport> {
    let manifest = RunManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new(""));
    let key_path =
        key_override.map_or_else(|| PathBuf::from(&manifest.key_path), Path::to_path_buf);
    let key = load_key(&key_path)?;
    let mut mismatches = Vec::new();
    if key.digest() != manifest.key_digest {
        mismatches.push(format!(
            "key digest differs from manifest ({})",
            key_path.display()
        ));
    }
    let (bits, samples) = (manifest.message_bits, manifest.image_samples);
    if manifest.embedding_rate != embedding_rate(bits, samples)
        || manifest.blowup_factor != blowup_factor(bits, samples)
    {
        mismatches
            .push("embedding rate or blowup factor disagrees with message and image size".into());
    }
    for rec in &manifest.records {
        let stego = ImageBuffer::load_png(&dir.join(&rec.stego_path), Provenance::Stego)?;
        let msg = MessageBits::from_bit_string(&rec.message)?;
        let got = extract(&stego, &key)?.prefix(msg.len());
        let ber = bit_error_rate(&msg, &got)?;
        if ber != rec.ber {
            mismatches.push(format!(
                "{}: manifest BER {} but recomputed {}",
                rec.stego_path, rec.ber, ber
            ));
        }
    }
    Ok(AuditReport {
        records: manifest.records.len(),
        mismatches,
    })
}

/// Ciphertext clouds for one message under both sampling modes, with the
/// decrypted value of every point.
pub fn toy_demo_csv(n: usize, m: f64, key: PlanePoint, seed: u64) -> Result<String> {
    let mut out = String::from("mode,x,y,decrypted\n");
    for (name, mode) in [
        ("uniform", SampleMode::uniform()),
        ("data-like", SampleMode::data_like()),
    ] {
        let mut rng = seeded_rng(derive_seed(seed, "toy-demo", name.len() as u64));
        for _ in 0..n {
            let c = toy_sample_mode(mode, m, key, &mut rng)?;
            out.push_str(&format!(
                "{name},{},{},{}\n",
                c.x,
                c.y,
                toy_decrypt(c, key)?
            ));
        }
    }
    Ok(out)
}
