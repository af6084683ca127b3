//! Divergence-based channel security and the steganalyzer detection error.
//!
//! All logarithms are base 2, which bounds the Jensen-Shannon divergence by
//! one. Image distributions are compared through histograms over some
//! feature or pixel marginal; that estimator is an approximation of the
//! divergence between the underlying image distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Binning {
    /// `n` unlabeled categories.
    Categorical(usize),
    /// Category labels.
    Labels(Vec<String>),
    /// `bins` equal-width bins on `[lo, hi]`; samples outside are clamped.
    Uniform { lo: f64, hi: f64, bins: usize },
}

impl Binning {
    fn len(&self) -> usize {
        match self {
            Binning::Categorical(n) => *n,
            Binning::Labels(l) => l.len(),
            Binning::Uniform { bins, .. } => *bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    binning: Binning,
    probabilities: Vec<f64>,
}

impl Histogram {
    pub fn new(binning: Binning, probabilities: Vec<f64>) -> Result<Self> {
        if binning.len() != probabilities.len() || probabilities.is_empty() {
            return Err(Error::invalid("histogram needs one probability per bin"));
        }
        if probabilities.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid(
                "probabilities must be finite and non-negative",
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Histogram {
            binning,
            probabilities,
        })
    }

    pub fn categorical(probabilities: Vec<f64>) -> Result<Self> {
        Histogram::new(Binning::Categorical(probabilities.len()), probabilities)
    }

    /// Normalize non-negative weights.
    pub fn from_counts(binning: Binning, counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("histogram counts sum to zero"));
        }
        Histogram::new(binning, counts.iter().map(|c| c / total).collect())
    }

    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::invalid("uniform binning needs bins > 0 and hi > lo"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("no samples to histogram"));
        }
        let mut counts = vec![0.0; bins];
        let width = (hi - lo) / bins as f64;
        for &s in samples {
            let b = (((s - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1.0;
        }
        Histogram::from_counts(Binning::Uniform { lo, hi, bins }, &counts)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }
}

fn same_binning(p: &Histogram, q: &Histogram) -> Result<()> {
    if p.binning != q.binning {
        return Err(Error::invalid("histograms use different binnings"));
    }
    Ok(())
}

/// `sum p log2(p/q)`; `+inf` when `p` has mass where `q` has none.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    same_binning(p, q)?;
    let mut total = 0.0;
    for (&pi, &qi) in p.probabilities.iter().zip(&q.probabilities) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi * (pi / qi).log2();
    }
    Ok(total.max(0.0))
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`.
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    same_binning(p, q)?;
    // Summed term by term so that swapping p and q adds the same numbers.
    let mut total = 0.0;
    for (&pi, &qi) in p.probabilities.iter().zip(&q.probabilities) {
        let m = 0.5 * (pi + qi);
        let term = |a: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
        total += 0.5 * term(pi) + 0.5 * term(qi);
    }
    Ok(total.clamp(0.0, 1.0))
}

/// `js_divergence(p, q) <= eps`.
pub fn epsilon_secure(p: &Histogram, q: &Histogram, eps: f64) -> Result<bool> {
    if !(eps >= 0.0) {
        return Err(Error::invalid("epsilon must be non-negative"));
    }
    Ok(js_divergence(p, q)? <= eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub p_fa: f64,
    pub p_md: f64,
    pub p_e: f64,
    /// Scores strictly above the threshold are called stego.
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_bpp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpi: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl DetectionReport {
    pub fn with_context(mut self, payload_bpp: f64, bpi: u8, iterations: usize) -> Self {
        self.payload_bpp = Some(payload_bpp);
        self.bpi = Some(bpi);
        self.iterations = Some(iterations);
        self
    }
}

/// False alarm and missed detection rates when everything scoring above
/// `threshold` is called stego.
pub fn detection_at(
    scores_cover: &[f64],
    scores_stego: &[f64],
    threshold: f64,
) -> Result<DetectionReport> {
    if scores_cover.is_empty() || scores_stego.is_empty() {
        return Err(Error::invalid(
            "detection error needs cover and stego scores",
        ));
    }
    let p_fa =
        scores_cover.iter().filter(|&&s| s > threshold).count() as f64 / scores_cover.len() as f64;
    let p_md =
        scores_stego.iter().filter(|&&s| s <= threshold).count() as f64 / scores_stego.len() as f64;
    Ok(DetectionReport {
        p_fa,
        p_md,
        p_e: 0.5 * (p_fa + p_md),
        threshold,
        payload_bpp: None,
        bpi: None,
        iterations: None,
    })
}

/// Minimum of `(P_FA + P_MD) / 2` over all thresholds, by one sweep over the
/// sorted pooled scores.
pub fn detection_error(scores_cover: &[f64], scores_stego: &[f64]) -> Result<DetectionReport> {
    if scores_cover.is_empty() || scores_stego.is_empty() {
        return Err(Error::invalid(
            "detection error needs cover and stego scores",
        ));
    }
    if scores_cover.iter().chain(scores_stego).any(|s| s.is_nan()) {
        return Err(Error::invalid("scores must not be NaN"));
    }
    let (nc, ns) = (scores_cover.len() as f64, scores_stego.len() as f64);
    let mut pooled: Vec<(f64, bool)> = scores_cover
        .iter()
        .map(|&s| (s, false))
        .chain(scores_stego.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Threshold below everything: all called stego.
    let mut covers_above = nc;
    let mut stegos_at_or_below = 0.0;
    let mut best = (
        0.5 * (covers_above / nc + stegos_at_or_below / ns),
        f64::NEG_INFINITY,
    );
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == t {
            if pooled[i].1 {
                stegos_at_or_below += 1.0;
            } else {
                covers_above -= 1.0;
            }
            i += 1;
        }
        let pe = 0.5 * (covers_above / nc + stegos_at_or_below / ns);
        if pe < best.0 {
            best = (pe, t);
        }
    }
    detection_at(scores_cover, scores_stego, best.1)
}
