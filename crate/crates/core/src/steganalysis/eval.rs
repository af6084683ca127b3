use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{DiscriminatorModel, GeneratorModel};
use crate::grille_key::{derive_grille, Mask};
use crate::image::ImageBuffer;
use crate::keyed::{derive_seed, seeded_rng, Secret};
use crate::latent_search::{complete_image, make_stego, SearchConfig};
use crate::message_codec::MessageBits;
use crate::pipeline::encrypt_image;
use crate::security_metrics::{detection_at, DetectionReport};

use super::{spam_features, train_ensemble, EnsembleConfig, EnsembleModel, DEFAULT_T};

/// Inputs of a detection-error campaign.
#[derive(Debug, Clone)]
pub struct PeSetup<'a> {
    pub generator: &'a GeneratorModel,
    pub discriminator: &'a DiscriminatorModel,
    /// Corrupted-image sources, used cyclically.
    pub covers: &'a [ImageBuffer],
    pub mask: Mask,
    pub channel: usize,
    pub search: SearchConfig,
    pub ensemble: EnsembleConfig,
    /// Images per class.
    pub n_images: usize,
    pub splits: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeEstimate {
    /// Rates averaged over the splits, at the fixed vote threshold `L / 2`.
    pub report: DetectionReport,
    pub p_e_stderr: f64,
    pub n_images: usize,
    pub splits: usize,
}

/// SPAM features of the image as it would be stored (8-bit, luma for color).
pub fn image_features(img: &ImageBuffer) -> Result<Vec<f64>> {
    let q = img.quantize();
    Ok(spam_features(&q.to_gray8(), q.width, q.height, DEFAULT_T)?.values)
}

/// Votes of `model` for every feature vector.
pub fn vote_scores(model: &EnsembleModel, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    features
        .iter()
        .map(|f| model.votes(f).map(|v| v as f64))
        .collect()
}

/// Held-out detection error of the ensemble averaged over random halvings.
/// Cover `i` and stego `i` stay on the same side of every split.
pub fn split_detection_error(
    cover: &[Vec<f64>],
    stego: &[Vec<f64>],
    ensemble: &EnsembleConfig,
    splits: usize,
    seed: u64,
) -> Result<(DetectionReport, f64)> {
    let n = cover.len();
    if n != stego.len() || n < 4 || splits == 0 {
        return Err(Error::invalid(
            "need matching cover/stego sets of at least 4 and one split",
        ));
    }
    let mut reports = Vec::with_capacity(splits);
    for s in 0..splits {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeded_rng(derive_seed(seed, "pe/split", s as u64)));
        let (train_idx, test_idx) = order.split_at(n / 2);
        let pick = |set: &[Vec<f64>], idx: &[usize]| -> Vec<Vec<f64>> {
            idx.iter().map(|&i| set[i].clone()).collect()
        };
        let model = train_ensemble(
            &pick(cover, train_idx),
            &pick(stego, train_idx),
            ensemble,
            &mut seeded_rng(derive_seed(seed, "pe/ensemble", s as u64)),
        )?;
        let cs = vote_scores(&model, &pick(cover, test_idx))?;
        let ss = vote_scores(&model, &pick(stego, test_idx))?;
        reports.push(detection_at(&cs, &ss, model.vote_threshold)?);
    }
    let k = reports.len() as f64;
    let mean = |f: fn(&DetectionReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let p_e = mean(|r| r.p_e);
    let stderr = if reports.len() > 1 {
        (reports.iter().map(|r| (r.p_e - p_e).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    Ok((
        DetectionReport {
            p_fa: mean(|r| r.p_fa),
            p_md: mean(|r| r.p_md),
            p_e,
            threshold: reports[0].threshold,
            payload_bpp: None,
            bpi: None,
            iterations: None,
        },
        stderr,
    ))
}

/// For every (payload, bit plane): `n_images` stego images carrying a random
/// message and `n_images` plainly completed images from the same covers and
/// mask, SPAM features, then [`split_detection_error`]. A zero payload runs
/// the plain completion for both classes with independent start points.
pub fn evaluate_pe(setup: &PeSetup<'_>, payloads: &[f64], bpis: &[u8]) -> Result<Vec<PeEstimate>> {
    if setup.covers.is_empty() || setup.n_images < 4 {
        return Err(Error::invalid(
            "detection campaign needs covers and at least 4 images per class",
        ));
    }
    let (g, d, mask, search) = (
        setup.generator,
        setup.discriminator,
        &setup.mask,
        &setup.search,
    );
    let pixels = mask.width() * mask.height();
    let plain = |tag: &str| -> Result<Vec<Vec<f64>>> {
        (0..setup.n_images)
            .into_par_iter()
            .map(|i| {
                let cover = &setup.covers[i % setup.covers.len()];
                let mut rng = seeded_rng(derive_seed(setup.seed, tag, i as u64));
                let r = complete_image(g, d, cover, mask, search, &mut rng)?;
                image_features(&make_stego(
                    &g.forward(&r.z)?,
                    cover,
                    mask,
                    search.stego_mode,
                )?)
            })
            .collect()
    };
    let clean = plain("pe/clean")?;
    let mut null_stego = None;
    let mut out = Vec::new();
    for &payload in payloads {
        for &bpi in bpis {
            let bits = (payload * pixels as f64).round() as usize;
            let stego = if bits == 0 {
                if null_stego.is_none() {
                    null_stego = Some(plain("pe/stego")?);
                }
                null_stego.clone().expect("set above")
            } else {
                let known = mask.known_count();
                if bits > known {
                    return Err(Error::CapacityExceeded {
                        message: bits,
                        capacity: known,
                    });
                }
                let density = bits as f64 / known as f64;
                (0..setup.n_images)
                    .into_par_iter()
                    .map(|i| {
                        let idx = i as u64;
                        let cover = &setup.covers[i % setup.covers.len()];
                        let secret = Secret::from_u64(derive_seed(setup.seed, "pe/key", idx));
                        let key = derive_grille(&secret, mask, density, bpi, setup.channel)?;
                        let msg = MessageBits::random(
                            bits,
                            &mut seeded_rng(derive_seed(setup.seed, "pe/msg", idx)),
                        );
                        let mut rng = seeded_rng(derive_seed(setup.seed, "pe/stego", idx));
                        let enc = encrypt_image(g, d, cover, mask, &key, &msg, search, &mut rng)?;
                        image_features(&enc.stego)
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let (report, p_e_stderr) =
                split_detection_error(&clean, &stego, &setup.ensemble, setup.splits, setup.seed)?;
            out.push(PeEstimate {
                report: report.with_context(payload, bpi, search.iterations),
                p_e_stderr,
                n_images: setup.n_images,
                splits: setup.splits,
            });
        }
    }
    Ok(out)
}
