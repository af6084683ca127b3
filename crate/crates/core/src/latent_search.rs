//! Search for the latent vector whose generated image best matches the
//! known context and the embedded message bits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{log_one_minus_d, DiscriminatorModel, GeneratorModel, LatentVector};
use crate::grille_key::{GrilleKey, Mask};
use crate::image::{ImageBuffer, Provenance};
use crate::nn::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StegoMode {
    /// Known pixels copied from the expanded cover, the rest generated.
    Blend,
    /// The generated image as is.
    #[default]
    Generate,
}

impl std::str::FromStr for StegoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blend" => Ok(StegoMode::Blend),
            "generate" => Ok(StegoMode::Generate),
            other => Err(Error::invalid(format!("unknown stego mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub lambda_perceptual: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub message_weight: f64,
    pub stego_mode: StegoMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda_perceptual: 0.1,
            iterations: 1000,
            learning_rate: 0.01,
            message_weight: 1.0,
            stego_mode: StegoMode::Generate,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_perceptual >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.message_weight >= 0.0) {
            return Err(Error::invalid(
                "step size must be positive and message weight non-negative",
            ));
        }
        Ok(())
    }
}

/// `total = contextual + message_weight * message + lambda * perceptual`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contextual: f64,
    pub perceptual: f64,
    pub message: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.contextual.is_finite()
            && self.perceptual.is_finite()
            && self.message.is_finite()
            && self.total.is_finite()
    }
}

fn check_shapes(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "image shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_mask(img: &ImageBuffer, mask: &Mask) -> Result<()> {
    if mask.width() != img.width() || mask.height() != img.height() {
        return Err(Error::invalid(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width(),
            mask.height(),
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn check_key(img: &ImageBuffer, key: &GrilleKey) -> Result<()> {
    if key.width() != img.width() || key.height() != img.height() || key.channel() >= img.channels()
    {
        return Err(Error::invalid("grille key does not fit the image"));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 distance over known pixels, all channels.
pub fn contextual_loss(
    gen_img: &ImageBuffer,
    expanded_cover: &ImageBuffer,
    mask: &Mask,
) -> Result<f64> {
    check_shapes(gen_img, expanded_cover)?;
    check_mask(gen_img, mask)?;
    let mut sum = 0.0;
    for c in 0..gen_img.channels() {
        for p in mask.known_indices() {
            sum += (gen_img.get(c, p) - expanded_cover.get(c, p)).abs();
        }
    }
    Ok(sum)
}

/// `ln(1 - D(G(z)))` with the probability clamped.
pub fn perceptual_loss(d: &DiscriminatorModel, gen_img: &ImageBuffer) -> Result<f64> {
    Ok(log_one_minus_d(d.forward_traced(gen_img)?.logit()).0)
}

/// L1 distance over grille cells in the key's channel.
pub fn message_loss(
    gen_img: &ImageBuffer,
    expanded_cover: &ImageBuffer,
    key: &GrilleKey,
) -> Result<f64> {
    check_shapes(gen_img, expanded_cover)?;
    check_key(gen_img, key)?;
    let c = key.channel();
    Ok(key
        .positions()
        .into_iter()
        .map(|p| (gen_img.get(c, p) - expanded_cover.get(c, p)).abs())
        .sum())
}

/// Everything about one search problem that does not depend on `z`.
struct Problem<'a> {
    g: &'a GeneratorModel,
    d: &'a DiscriminatorModel,
    target: &'a ImageBuffer,
    /// Flat value indices of known pixels, every channel.
    context: Vec<usize>,
    /// Flat value indices of grille cells.
    grille: Vec<usize>,
    cfg: SearchConfig,
}

impl<'a> Problem<'a> {
    fn new(
        g: &'a GeneratorModel,
        d: &'a DiscriminatorModel,
        target: &'a ImageBuffer,
        mask: &Mask,
        key: Option<&GrilleKey>,
        cfg: SearchConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if g.output_shape() != target.shape() {
            return Err(Error::invalid(format!(
                "generator produces {:?}, cover is {:?}",
                g.output_shape(),
                target.shape()
            )));
        }
        check_mask(target, mask)?;
        if let Some(key) = key {
            check_key(target, key)?;
            key.check_pairing(mask)?;
        }
        let known = mask.known_indices();
        let context = (0..target.channels())
            .flat_map(|c| known.iter().map(move |&p| target.index(c, p)))
            .collect();
        let grille = key.map_or_else(Vec::new, |key| {
            key.positions()
                .into_iter()
                .map(|p| target.index(key.channel(), p))
                .collect()
        });
        Ok(Problem {
            g,
            d,
            target,
            context,
            grille,
            cfg,
        })
    }

    fn evaluate(&self, z: &LatentVector, want_grad: bool) -> Result<(LossBreakdown, Vec<f64>)> {
        let (img, g_trace) = self.g.forward_traced(z)?;
        let (x, t) = (img.values(), self.target.values());
        let mut grad = vec![0.0; x.len()];
        let mut contextual = 0.0;
        for &i in &self.context {
            let diff = x[i] - t[i];
            contextual += diff.abs();
            grad[i] += sign(diff);
        }
        let mut message = 0.0;
        let w = self.cfg.message_weight;
        for &i in &self.grille {
            let diff = x[i] - t[i];
            message += diff.abs();
            grad[i] += w * sign(diff);
        }
        let lambda = self.cfg.lambda_perceptual;
        let d_trace = self.d.forward_traced(&img)?;
        let (perceptual, dp) = log_one_minus_d(d_trace.logit());
        if lambda != 0.0 && want_grad {
            for (gi, di) in grad
                .iter_mut()
                .zip(self.d.backward_input(&d_trace, lambda * dp))
            {
                *gi += di;
            }
        }
        let loss = LossBreakdown {
            contextual,
            perceptual,
            message,
            total: contextual + w * message + lambda * perceptual,
        };
        let gz = if want_grad {
            self.g.backward_latent(&g_trace, &grad)
        } else {
            Vec::new()
        };
        Ok((loss, gz))
    }
}

/// Loss at `z` and its gradient with respect to `z`.
pub fn loss_and_gradient(
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    expanded_cover: &ImageBuffer,
    mask: &Mask,
    key: &GrilleKey,
    cfg: &SearchConfig,
    z: &LatentVector,
) -> Result<(LossBreakdown, Vec<f64>)> {
    Problem::new(g, d, expanded_cover, mask, Some(key), *cfg)?.evaluate(z, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Lowest-loss iterate seen.
    pub z: LatentVector,
    pub best: LossBreakdown,
    pub best_iteration: usize,
    /// Entry `i` is the loss after `i` steps; entry 0 is the initial point.
    pub trace: Vec<LossBreakdown>,
}

/// Progress callback: step index, best iterate so far, its loss.
pub type Observer<'a> = dyn FnMut(usize, &LatentVector, &LossBreakdown) + 'a;

/// Adam on the total loss from a uniform random start, projecting onto
/// `[-1, 1]^d` after every step.
pub fn find_z(
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    expanded_cover: &ImageBuffer,
    mask: &Mask,
    key: &GrilleKey,
    cfg: &SearchConfig,
    rng: &mut impl Rng,
) -> Result<SearchResult> {
    find_z_observed(g, d, expanded_cover, mask, key, cfg, rng, &mut |_, _, _| {})
}

#[allow(clippy::too_many_arguments)]
pub fn find_z_observed(
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    expanded_cover: &ImageBuffer,
    mask: &Mask,
    key: &GrilleKey,
    cfg: &SearchConfig,
    rng: &mut impl Rng,
    observer: &mut Observer<'_>,
) -> Result<SearchResult> {
    search(
        &Problem::new(g, d, expanded_cover, mask, Some(key), *cfg)?,
        rng,
        observer,
    )
}

/// Plain image completion: the same search without a message term.
pub fn complete_image(
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    corrupted: &ImageBuffer,
    mask: &Mask,
    cfg: &SearchConfig,
    rng: &mut impl Rng,
) -> Result<SearchResult> {
    search(
        &Problem::new(g, d, corrupted, mask, None, *cfg)?,
        rng,
        &mut |_, _, _| {},
    )
}

fn search(
    problem: &Problem<'_>,
    rng: &mut impl Rng,
    observer: &mut Observer<'_>,
) -> Result<SearchResult> {
    let (g, cfg) = (problem.g, &problem.cfg);
    let dim = g.latent_dim();
    let mut z = LatentVector::uniform(dim, rng);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        },
        &[dim],
    );
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut best: Option<(LatentVector, LossBreakdown, usize)> = None;
    for step in 0..=cfg.iterations {
        let last = step == cfg.iterations;
        let (loss, grad) = problem.evaluate(&z, !last)?;
        trace.push(loss);
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::SearchDiverged {
                iteration: step,
                trace,
            });
        }
        if best.as_ref().is_none_or(|b| loss.total < b.1.total) {
            best = Some((z.clone(), loss, step));
        }
        let b = best.as_ref().expect("set above");
        observer(step, &b.0, &b.1);
        if last {
            break;
        }
        let mut values = z.values().to_vec();
        adam.begin_step();
        adam.update(0, &mut values, &grad);
        z = LatentVector::projected(values);
    }
    let (z, best, best_iteration) = best.expect("at least one evaluation");
    Ok(SearchResult {
        z,
        best,
        best_iteration,
        trace,
    })
}

/// Blend copies every known pixel (all channels) from the expanded cover;
/// generate returns the generated image unchanged.
pub fn make_stego(
    gen_img: &ImageBuffer,
    expanded_cover: &ImageBuffer,
    mask: &Mask,
    mode: StegoMode,
) -> Result<ImageBuffer> {
    check_shapes(gen_img, expanded_cover)?;
    check_mask(gen_img, mask)?;
    let mut out = gen_img.clone().with_provenance(Provenance::Stego);
    if mode == StegoMode::Blend {
        for c in 0..gen_img.channels() {
            for p in mask.known_indices() {
                out.set(c, p, expanded_cover.get(c, p));
            }
        }
    }
    Ok(out)
}

pub fn trace_to_csv(trace: &[LossBreakdown]) -> String {
    let mut out = String::from("iteration,contextual,perceptual,message,total\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{}\n",
            l.contextual, l.perceptual, l.message, l.total
        ));
    }
    out
}
