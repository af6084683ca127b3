use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::security_metrics::detection_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Cover,
    Stego,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Number of base learners `L`.
    pub learners: usize,
    /// Random subspace dimension `d_sub`.
    pub subspace: usize,
    /// Train each learner on a per-class bootstrap sample.
    pub bootstrap: bool,
    /// Ridge term relative to the mean eigenvalue of the within-class scatter.
    pub ridge: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            learners: 51,
            subspace: 64,
            bootstrap: true,
            ridge: 1e-6,
        }
    }
}

/// Fisher linear discriminant on a feature subset. Scores strictly above
/// `threshold` vote stego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseLearner {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub threshold: f64,
}

impl BaseLearner {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.weights)
            .map(|(&i, w)| w * x[i])
            .sum()
    }

    pub fn votes_stego(&self, x: &[f64]) -> bool {
        self.score(x) > self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub dimension: usize,
    pub learners: Vec<BaseLearner>,
    /// Stego requires strictly more votes than this; defaults to `L / 2`.
    pub vote_threshold: f64,
}

impl EnsembleModel {
    pub fn votes(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dimension {
            return Err(Error::invalid(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.dimension
            )));
        }
        Ok(self.learners.iter().filter(|l| l.votes_stego(x)).count())
    }
}

/// Majority vote; a tie goes to cover.
pub fn classify(model: &EnsembleModel, x: &[f64]) -> Result<(Label, usize)> {
    let votes = model.votes(x)?;
    let label = if votes as f64 > model.vote_threshold {
        Label::Stego
    } else {
        Label::Cover
    };
    Ok((label, votes))
}

fn fisher(cover: &[&[f64]], stego: &[&[f64]], indices: &[usize], ridge: f64) -> Result<Vec<f64>> {
    let d = indices.len();
    let mean = |set: &[&[f64]]| -> DVector<f64> {
        let mut m = DVector::zeros(d);
        for x in set {
            for (k, &i) in indices.iter().enumerate() {
                m[k] += x[i];
            }
        }
        m / set.len() as f64
    };
    let (m0, m1) = (mean(cover), mean(stego));
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for (set, m) in [(cover, &m0), (stego, &m1)] {
        for x in set {
            let v =
                DVector::from_iterator(d, indices.iter().enumerate().map(|(k, &i)| x[i] - m[k]));
            scatter.ger(1.0, &v, &v, 1.0);
        }
    }
    let scale = (scatter.trace() / d as f64).max(1e-12);
    let diff = &m1 - &m0;
    let mut lambda = ridge.max(1e-12) * scale;
    for _ in 0..12 {
        let mut reg = scatter.clone();
        for k in 0..d {
            reg[(k, k)] += lambda;
        }
        if let Some(chol) = reg.cholesky() {
            let w = chol.solve(&diff);
            if w.iter().all(|v| v.is_finite()) {
                return Ok(w.iter().copied().collect());
            }
        }
        lambda *= 10.0;
    }
    Err(Error::invalid(
        "within-class scatter could not be regularized",
    ))
}

/// Random-subspace ensemble of Fisher linear discriminants, each thresholded
/// at its own minimum training error.
pub fn train_ensemble(
    cover: &[Vec<f64>],
    stego: &[Vec<f64>],
    cfg: &EnsembleConfig,
    rng: &mut impl Rng,
) -> Result<EnsembleModel> {
    if cover.len() < 2 || stego.len() < 2 {
        return Err(Error::invalid(
            "ensemble training needs at least two examples per class",
        ));
    }
    let dim = cover[0].len();
    if cover.iter().chain(stego).any(|x| x.len() != dim) {
        return Err(Error::invalid("feature vectors differ in dimension"));
    }
    if cfg.learners == 0 || cfg.subspace == 0 || cfg.subspace > dim {
        return Err(Error::invalid(format!(
            "need L >= 1 and 1 <= d_sub <= {dim}, got L = {}, d_sub = {}",
            cfg.learners, cfg.subspace
        )));
    }
    let mut learners = Vec::with_capacity(cfg.learners);
    for _ in 0..cfg.learners {
        let mut indices = sample(rng, dim, cfg.subspace).into_vec();
        indices.sort_unstable();
        let pick = |set: &'_ [Vec<f64>], rng: &mut _| -> Vec<usize> {
            if cfg.bootstrap {
                (0..set.len())
                    .map(|_| Rng::random_range(rng, 0..set.len()))
                    .collect()
            } else {
                (0..set.len()).collect()
            }
        };
        let c_idx = pick(cover, rng);
        let s_idx = pick(stego, rng);
        let c: Vec<&[f64]> = c_idx.iter().map(|&i| cover[i].as_slice()).collect();
        let s: Vec<&[f64]> = s_idx.iter().map(|&i| stego[i].as_slice()).collect();
        let weights = fisher(&c, &s, &indices, cfg.ridge)?;
        let mut learner = BaseLearner {
            indices,
            weights,
            threshold: 0.0,
        };
        let cs: Vec<f64> = c.iter().map(|x| learner.score(x)).collect();
        let ss: Vec<f64> = s.iter().map(|x| learner.score(x)).collect();
        learner.threshold = detection_error(&cs, &ss)?.threshold;
        learners.push(learner);
    }
    Ok(EnsembleModel {
        dimension: dim,
        vote_threshold: cfg.learners as f64 / 2.0,
        learners,
    })
}
