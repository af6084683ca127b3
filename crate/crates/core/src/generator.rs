//! Adversarially trained generator and discriminator.
//!
//! The discriminator network produces a logit; probabilities are the
//! logistic of that logit, clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside
//! every logarithm so no loss can become infinite.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::TensorContainer;
use crate::error::{Error, Result};
use crate::image::{ImageBuffer, Provenance};
use crate::keyed::{derive_seed, seeded_rng};
use crate::nn::{sigmoid, Adam, AdamConfig, Architecture, LayerSpec, Network, Shape, Trace};
use crate::security_metrics::{js_divergence, Histogram};

pub const PROB_CLAMP: f64 = 1e-8;
pub const DEFAULT_LATENT_DIM: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid("latent components must lie in [-1, 1]"));
        }
        Ok(LatentVector(values))
    }

    /// Componentwise projection onto `[-1, 1]`.
    pub fn projected(values: Vec<f64>) -> Self {
        LatentVector(values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    pub fn uniform(dim: usize, rng: &mut impl Rng) -> Self {
        LatentVector((0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        LatentVector(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `ln(clamp(sigmoid(a)))` and its derivative in `a`.
pub fn log_d(logit: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    if p <= PROB_CLAMP {
        (PROB_CLAMP.ln(), 0.0)
    } else if p >= 1.0 - PROB_CLAMP {
        ((1.0 - PROB_CLAMP).ln(), 0.0)
    } else {
        (-softplus(-logit), 1.0 - p)
    }
}

/// `ln(1 - clamp(sigmoid(a)))` and its derivative in `a`.
pub fn log_one_minus_d(logit: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    if p >= 1.0 - PROB_CLAMP {
        (PROB_CLAMP.ln(), 0.0)
    } else if p <= PROB_CLAMP {
        ((1.0 - PROB_CLAMP).ln(), 0.0)
    } else {
        (-softplus(logit), -p)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    /// 32x32 grayscale, three upsampling stages, each hidden stage
    /// pixel-normalized.
    Desk,
    /// 64x64 color, four upsampling stages.
    Dcgan64,
    /// Scalar data through two-layer perceptrons.
    Toy1d,
}

impl ModelPreset {
    pub fn generator_arch(self, latent_dim: usize) -> Architecture {
        // Enlarge, convolve, normalize, rectify; the last stage ends in Tanh.
        let stage = |out_channels, last: bool| {
            let mut v = vec![
                LayerSpec::Upsample { factor: 2 },
                LayerSpec::Conv2d {
                    out_channels,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
            ];
            if last {
                v.push(LayerSpec::Tanh);
            } else {
                v.extend([LayerSpec::PixelNorm, LayerSpec::Relu]);
            }
            v
        };
        let stack = |base: usize, widths: &[usize]| {
            let mut layers = vec![
                LayerSpec::Linear {
                    outputs: base * 4 * 4,
                },
                LayerSpec::Reshape {
                    channels: base,
                    height: 4,
                    width: 4,
                },
                LayerSpec::PixelNorm,
                LayerSpec::Relu,
            ];
            for (i, &w) in widths.iter().enumerate() {
                layers.extend(stage(w, i + 1 == widths.len()));
            }
            layers
        };
        match self {
            ModelPreset::Desk => Architecture {
                input: Shape::flat(latent_dim),
                layers: stack(32, &[16, 8, 1]),
            },
            ModelPreset::Dcgan64 => Architecture {
                input: Shape::flat(latent_dim),
                layers: stack(128, &[64, 32, 16, 3]),
            },
            ModelPreset::Toy1d => Architecture {
                input: Shape::flat(latent_dim),
                layers: vec![
                    LayerSpec::Linear { outputs: 16 },
                    LayerSpec::LeakyRelu { slope: 0.2 },
                    LayerSpec::Linear { outputs: 1 },
                    LayerSpec::Tanh,
                ],
            },
        }
    }

    pub fn discriminator_arch(self) -> Architecture {
        let down = |out_channels| LayerSpec::Conv2d {
            out_channels,
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        let lrelu = LayerSpec::LeakyRelu { slope: 0.2 };
        match self {
            ModelPreset::Desk => Architecture {
                input: Shape::new(1, 32, 32),
                layers: vec![
                    down(8),
                    lrelu.clone(),
                    down(16),
                    lrelu.clone(),
                    down(32),
                    lrelu,
                    LayerSpec::Linear { outputs: 1 },
                ],
            },
            ModelPreset::Dcgan64 => Architecture {
                input: Shape::new(3, 64, 64),
                layers: vec![
                    down(16),
                    lrelu.clone(),
                    down(32),
                    lrelu.clone(),
                    down(64),
                    lrelu.clone(),
                    down(128),
                    lrelu,
                    LayerSpec::Linear { outputs: 1 },
                ],
            },
            ModelPreset::Toy1d => Architecture {
                input: Shape::flat(1),
                layers: vec![
                    LayerSpec::Linear { outputs: 16 },
                    lrelu,
                    LayerSpec::Linear { outputs: 1 },
                ],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum GeneratorBackend {
    Network(Network),
    /// `clamp(A z + b)`; `a` is row-major `outputs x latent_dim`.
    Linear {
        a: Vec<f64>,
        b: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    backend: GeneratorBackend,
    latent_dim: usize,
    width: usize,
    height: usize,
    channels: usize,
}

/// Forward-pass state needed to back-propagate to the latent vector.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    inner: GenTraceInner,
}

#[derive(Debug, Clone)]
enum GenTraceInner {
    Network(Trace),
    Linear { pre: Vec<f64> },
}

impl GeneratorModel {
    pub fn from_network(net: Network) -> Result<Self> {
        let input = net.input_shape();
        let out = net.output_shape();
        if input.height != 1 || input.width != 1 {
            return Err(Error::invalid(
                "generator input must be a flat latent vector",
            ));
        }
        if !matches!(net.architecture().layers.last(), Some(LayerSpec::Tanh)) {
            return Err(Error::invalid(
                "generator must end in a bounded (tanh) output",
            ));
        }
        Ok(GeneratorModel {
            latent_dim: input.channels,
            width: out.width,
            height: out.height,
            channels: out.channels,
            backend: GeneratorBackend::Network(net),
        })
    }

    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        GeneratorModel::from_network(Network::new(arch, std::f64::consts::SQRT_2, rng)?)
    }

    pub fn preset(preset: ModelPreset, latent_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        GeneratorModel::new(preset.generator_arch(latent_dim), rng)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// `(width, height, channels)` of generated images.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.backend {
            GeneratorBackend::Network(n) => Some(n),
            GeneratorBackend::Linear { .. } => None,
        }
    }

    fn check_latent(&self, z: &LatentVector) -> Result<()> {
        if z.dim() != self.latent_dim {
            return Err(Error::invalid(format!(
                "latent vector has {} components, model expects {}",
                z.dim(),
                self.latent_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, z: &LatentVector) -> Result<ImageBuffer> {
        Ok(self.forward_traced(z)?.0)
    }

    pub fn forward_traced(&self, z: &LatentVector) -> Result<(ImageBuffer, GeneratorTrace)> {
        self.check_latent(z)?;
        let (values, inner) = match &self.backend {
            GeneratorBackend::Network(net) => {
                let t = net.forward(z.values());
                (t.output().to_vec(), GenTraceInner::Network(t))
            }
            GeneratorBackend::Linear { a, b } => {
                let d = self.latent_dim;
                let pre: Vec<f64> = b
                    .iter()
                    .enumerate()
                    .map(|(r, &br)| {
                        br + a[r * d..(r + 1) * d]
                            .iter()
                            .zip(z.values())
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                    })
                    .collect();
                (
                    pre.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
                    GenTraceInner::Linear { pre },
                )
            }
        };
        let img = ImageBuffer::new(
            self.width,
            self.height,
            self.channels,
            values,
            Provenance::Generated,
        )?;
        Ok((img, GeneratorTrace { inner }))
    }

    /// Gradient of a scalar loss with respect to `z`, given the gradient with
    /// respect to the generated image values.
    pub fn backward_latent(&self, trace: &GeneratorTrace, grad_img: &[f64]) -> Vec<f64> {
        match (&self.backend, &trace.inner) {
            (GeneratorBackend::Network(net), GenTraceInner::Network(t)) => {
                net.backward(t, grad_img, None)
            }
            (GeneratorBackend::Linear { a, .. }, GenTraceInner::Linear { pre }) => {
                let d = self.latent_dim;
                let mut gz = vec![0.0; d];
                for (r, (&g, &p)) in grad_img.iter().zip(pre).enumerate() {
                    if g == 0.0 || p.abs() > 1.0 {
                        continue;
                    }
                    for (gzi, &ai) in gz.iter_mut().zip(&a[r * d..(r + 1) * d]) {
                        *gzi += g * ai;
                    }
                }
                gz
            }
            _ => panic!("trace from a different generator"),
        }
    }
}

/// Test double: a generator computing `clamp(A z + b)` with exact gradients.
pub fn linear_oracle_generator(
    a: &DMatrix<f64>,
    b: &[f64],
    width: usize,
    height: usize,
    channels: usize,
) -> Result<GeneratorModel> {
    let outputs = width * height * channels;
    if a.nrows() != outputs || b.len() != outputs || a.ncols() == 0 {
        return Err(Error::invalid(format!(
            "A is {}x{}, b has {} entries, image has {} values",
            a.nrows(),
            a.ncols(),
            b.len(),
            outputs
        )));
    }
    let mut flat = Vec::with_capacity(outputs * a.ncols());
    for r in 0..outputs {
        flat.extend(a.row(r).iter());
    }
    Ok(GeneratorModel {
        backend: GeneratorBackend::Linear {
            a: flat,
            b: b.to_vec(),
        },
        latent_dim: a.ncols(),
        width,
        height,
        channels,
    })
}

pub fn g_forward(model: &GeneratorModel, z: &LatentVector) -> Result<ImageBuffer> {
    model.forward(z)
}

#[derive(Debug, Clone, PartialEq)]
enum DiscriminatorBackend {
    Network(Network),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    backend: DiscriminatorBackend,
    input: Shape,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTrace {
    trace: Option<Trace>,
    logit: f64,
}

impl DiscriminatorTrace {
    pub fn logit(&self) -> f64 {
        self.logit
    }

    pub fn probability(&self) -> f64 {
        clamp_prob(sigmoid(self.logit))
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl DiscriminatorModel {
    pub fn from_network(net: Network) -> Result<Self> {
        if net.output_shape().len() != 1 {
            return Err(Error::invalid("discriminator must output a single logit"));
        }
        Ok(DiscriminatorModel {
            input: net.input_shape(),
            backend: DiscriminatorBackend::Network(net),
        })
    }

    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        DiscriminatorModel::from_network(Network::new(arch, std::f64::consts::SQRT_2, rng)?)
    }

    pub fn preset(preset: ModelPreset, rng: &mut impl Rng) -> Result<Self> {
        DiscriminatorModel::new(preset.discriminator_arch(), rng)
    }

    /// A discriminator that answers `p` for every input.
    pub fn constant(p: f64, width: usize, height: usize, channels: usize) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid("constant probability must be in (0, 1)"));
        }
        Ok(DiscriminatorModel {
            backend: DiscriminatorBackend::Constant((p / (1.0 - p)).ln()),
            input: Shape::new(channels, height, width),
        })
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.backend {
            DiscriminatorBackend::Network(n) => Some(n),
            DiscriminatorBackend::Constant(_) => None,
        }
    }

    fn check(&self, img: &ImageBuffer) -> Result<()> {
        let s = self.input;
        if img.channels() != s.channels || img.height() != s.height || img.width() != s.width {
            return Err(Error::invalid(format!(
                "discriminator expects {}x{}x{}, got {}x{}x{}",
                s.width,
                s.height,
                s.channels,
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        Ok(())
    }

    pub fn forward_traced(&self, img: &ImageBuffer) -> Result<DiscriminatorTrace> {
        self.check(img)?;
        Ok(match &self.backend {
            DiscriminatorBackend::Network(net) => {
                let t = net.forward(img.values());
                let logit = t.output()[0];
                DiscriminatorTrace {
                    trace: Some(t),
                    logit,
                }
            }
            DiscriminatorBackend::Constant(logit) => DiscriminatorTrace {
                trace: None,
                logit: *logit,
            },
        })
    }

    /// Probability that `img` is real, in `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn probability(&self, img: &ImageBuffer) -> Result<f64> {
        Ok(self.forward_traced(img)?.probability())
    }

    /// Gradient with respect to the image, given d loss / d logit.
    pub fn backward_input(&self, trace: &DiscriminatorTrace, dlogit: f64) -> Vec<f64> {
        match (&self.backend, &trace.trace) {
            (DiscriminatorBackend::Network(net), Some(t)) => net.backward(t, &[dlogit], None),
            _ => vec![0.0; self.input.len()],
        }
    }
}

pub fn d_forward(model: &DiscriminatorModel, img: &ImageBuffer) -> Result<f64> {
    model.probability(img)
}

/// Empirical value function `mean ln D(x) + mean ln(1 - D(G(z)))`.
pub fn value_function(
    d: &DiscriminatorModel,
    real: &[ImageBuffer],
    fake: &[ImageBuffer],
) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid(
            "value function needs real and generated samples",
        ));
    }
    let mut real_term = RunningMean::default();
    for x in real {
        real_term.push(log_d(d.forward_traced(x)?.logit()).0);
    }
    let mut fake_term = RunningMean::default();
    for x in fake {
        fake_term.push(log_one_minus_d(d.forward_traced(x)?.logit()).0);
    }
    Ok(real_term.mean + fake_term.mean)
}

/// Incremental mean; exact when every term is equal.
#[derive(Default)]
struct RunningMean {
    mean: f64,
    n: usize,
}

impl RunningMean {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.mean += (x - self.mean) / self.n as f64;
    }
}

/// `C(G) + ln 4` estimated by plugging the histogram-optimal discriminator
/// into the virtual training criterion; equals `2 ln 2 * JS` (JS in bits).
pub fn js_proxy(real: &[f64], fake: &[f64], bins: usize) -> Result<f64> {
    let p = Histogram::from_samples(real, -1.0, 1.0, bins)?;
    let q = Histogram::from_samples(fake, -1.0, 1.0, bins)?;
    Ok(2.0 * std::f64::consts::LN_2 * js_divergence(&p, &q)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorLoss {
    /// Minimize `-ln D(G(z))`.
    NonSaturating,
    /// Minimize `ln(1 - D(G(z)))`, the value function's own term.
    Minimax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub preset: ModelPreset,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub generator_loss: GeneratorLoss,
    pub seed: u64,
    /// Samples used for the per-epoch diagnostics.
    pub eval_samples: usize,
    pub js_bins: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: ModelPreset::Desk,
            latent_dim: DEFAULT_LATENT_DIM,
            epochs: 20,
            batch_size: 16,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            generator_loss: GeneratorLoss::NonSaturating,
            seed: 0,
            eval_samples: 256,
            js_bins: 32,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn toy_1d() -> Self {
        TrainConfig {
            preset: ModelPreset::Toy1d,
            latent_dim: 2,
            epochs: 60,
            batch_size: 32,
            learning_rate: 5e-4,
            eval_samples: 512,
            js_bins: 20,
            ..TrainConfig::default()
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
    pub value_fn: Vec<f64>,
    pub js_proxy: Vec<f64>,
    pub wall_clock_secs: Vec<f64>,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.d_loss.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,d_loss,g_loss,value_fn,js_proxy,wall_clock_secs\n");
        for i in 0..self.epochs() {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                i + 1,
                self.d_loss[i],
                self.g_loss[i],
                self.value_fn[i],
                self.js_proxy[i],
                self.wall_clock_secs[i]
            ));
        }
        out
    }
}

/// Generator and discriminator parameters at the end of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub seed: u64,
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<TensorContainer> {
        let (g, d) = match (self.generator.network(), self.discriminator.network()) {
            (Some(g), Some(d)) => (g, d),
            _ => return Err(Error::invalid("only network models can be checkpointed")),
        };
        let meta = serde_json::json!({
            "version": 1,
            "epoch": self.epoch,
            "seed": self.seed,
            "generator": g.architecture(),
            "discriminator": d.architecture(),
        });
        let mut c = TensorContainer::new("gan-checkpoint", meta);
        for (prefix, net) in [("g", g), ("d", d)] {
            for (i, (w, b)) in net.parameters().into_iter().enumerate() {
                c.push(format!("{prefix}.{i}.weight"), vec![w.len()], w.to_vec());
                c.push(format!("{prefix}.{i}.bias"), vec![b.len()], b.to_vec());
            }
        }
        Ok(c)
    }

    pub fn from_container(mut c: TensorContainer) -> Result<Self> {
        if c.kind != "gan-checkpoint" {
            return Err(Error::invalid(format!(
                "container holds {:?}, not a checkpoint",
                c.kind
            )));
        }
        let meta = c.meta.clone();
        let arch = |key: &str| -> Result<Architecture> {
            serde_json::from_value(meta[key].clone())
                .map_err(|e| Error::invalid(format!("bad {key} architecture: {e}")))
        };
        let (g_arch, d_arch) = (arch("generator")?, arch("discriminator")?);
        let mut params = |prefix: &str, n: usize| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
            (0..n)
                .map(|i| {
                    Ok((
                        c.take(&format!("{prefix}.{i}.weight"))?.data,
                        c.take(&format!("{prefix}.{i}.bias"))?.data,
                    ))
                })
                .collect()
        };
        let g_params = params("g", g_arch.layers.len())?;
        let d_params = params("d", d_arch.layers.len())?;
        Ok(Checkpoint {
            epoch: meta["epoch"].as_u64().unwrap_or(0) as usize,
            seed: meta["seed"].as_u64().unwrap_or(0),
            generator: GeneratorModel::from_network(Network::from_parameters(g_arch, g_params)?)?,
            discriminator: DiscriminatorModel::from_network(Network::from_parameters(
                d_arch, d_params,
            )?)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_container(TensorContainer::load(path)?)
    }
}

fn mean_loss(total: f64, n: usize) -> f64 {
    total / n.max(1) as f64
}

/// Alternating updates: one ascent step for the discriminator on the value
/// function, then one generator step, per mini-batch. Single-threaded and
/// fully determined by `config.seed`.
pub fn train(
    dataset: &[ImageBuffer],
    config: &TrainConfig,
) -> Result<(GeneratorModel, DiscriminatorModel, TrainReport)> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::invalid("training dataset is empty"))?;
    if dataset.iter().any(|x| !x.same_shape(first)) {
        return Err(Error::invalid("training images differ in shape"));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::invalid(
            "batch size and epoch count must be positive",
        ));
    }
    let mut rng = seeded_rng(config.seed);
    let mut g = GeneratorModel::preset(config.preset, config.latent_dim, &mut rng)?;
    let mut d = DiscriminatorModel::preset(config.preset, &mut rng)?;
    if g.output_shape() != first.shape() {
        return Err(Error::invalid(format!(
            "dataset images are {:?}, model generates {:?}",
            first.shape(),
            g.output_shape()
        )));
    }
    let (GeneratorBackend::Network(g_net0), DiscriminatorBackend::Network(d_net0)) =
        (&g.backend, &d.backend)
    else {
        unreachable!()
    };
    let mut g_opt = Adam::for_network(config.adam(), g_net0);
    let mut d_opt = Adam::for_network(config.adam(), d_net0);

    let mut eval_rng = seeded_rng(derive_seed(config.seed, "train/eval", 0));
    let eval_n = config.eval_samples.max(1);
    let eval_real: Vec<&ImageBuffer> = {
        let mut idx: Vec<usize> = (0..dataset.len()).collect();
        idx.shuffle(&mut eval_rng);
        idx.into_iter().take(eval_n).map(|i| &dataset[i]).collect()
    };
    let eval_z: Vec<LatentVector> = (0..eval_n)
        .map(|_| LatentVector::uniform(config.latent_dim, &mut eval_rng))
        .collect();

    let mut report = TrainReport {
        seed: config.seed,
        d_loss: Vec::new(),
        g_loss: Vec::new(),
        value_fn: Vec::new(),
        js_proxy: Vec::new(),
        wall_clock_secs: Vec::new(),
    };
    let started = Instant::now();
    let mut last_good: Option<Box<Checkpoint>> = None;
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut d_total, mut g_total, mut batches) = (0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let GeneratorBackend::Network(g_net) = &mut g.backend else {
                unreachable!()
            };
            let DiscriminatorBackend::Network(d_net) = &mut d.backend else {
                unreachable!()
            };

            // Discriminator: minimize -ln D(x) - ln(1 - D(G(z))).
            let mut d_grads = d_net.zero_gradients();
            let mut d_loss = 0.0;
            for &i in batch {
                let t = d_net.forward(dataset[i].values());
                let (v, dv) = log_d(t.output()[0]);
                d_loss -= v;
                d_net.backward(&t, &[-dv], Some(&mut d_grads));
            }
            for _ in batch {
                let z = LatentVector::uniform(config.latent_dim, &mut rng);
                let fake = g_net.forward(z.values());
                let t = d_net.forward(fake.output());
                let (v, dv) = log_one_minus_d(t.output()[0]);
                d_loss -= v;
                d_net.backward(&t, &[-dv], Some(&mut d_grads));
            }
            let n = batch.len() as f64;
            d_grads.scale(1.0 / n);
            d_loss /= n;

            // Generator.
            let mut g_grads = g_net.zero_gradients();
            let mut g_loss = 0.0;
            for _ in batch {
                let z = LatentVector::uniform(config.latent_dim, &mut rng);
                let gt = g_net.forward(z.values());
                let dt = d_net.forward(gt.output());
                let logit = dt.output()[0];
                let (v, dv) = match config.generator_loss {
                    GeneratorLoss::NonSaturating => {
                        let (v, dv) = log_d(logit);
                        (-v, -dv)
                    }
                    GeneratorLoss::Minimax => log_one_minus_d(logit),
                };
                g_loss += v;
                let grad_img = d_net.backward(&dt, &[dv], None);
                g_net.backward(&gt, &grad_img, Some(&mut g_grads));
            }
            g_grads.scale(1.0 / n);
            g_loss /= n;

            if !d_loss.is_finite()
                || !g_loss.is_finite()
                || !d_grads.is_finite()
                || !g_grads.is_finite()
            {
                return Err(Error::TrainingDiverged {
                    epoch,
                    last_checkpoint: last_good,
                });
            }
            d_opt.step_network(d_net, &d_grads);
            g_opt.step_network(g_net, &g_grads);
            d_total += d_loss;
            g_total += g_loss;
            batches += 1;
        }

        let fakes = eval_z
            .iter()
            .map(|z| g.forward(z))
            .collect::<Result<Vec<_>>>()?;
        let reals: Vec<ImageBuffer> = eval_real.iter().map(|&x| x.clone()).collect();
        let v = value_function(&d, &reals, &fakes)?;
        let real_px: Vec<f64> = reals
            .iter()
            .flat_map(|x| x.values().iter().copied())
            .collect();
        let fake_px: Vec<f64> = fakes
            .iter()
            .flat_map(|x| x.values().iter().copied())
            .collect();
        let proxy = js_proxy(&real_px, &fake_px, config.js_bins)?;

        report.d_loss.push(mean_loss(d_total, batches));
        report.g_loss.push(mean_loss(g_total, batches));
        report.value_fn.push(v);
        report.js_proxy.push(proxy);
        report.wall_clock_secs.push(started.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: d_loss {:.4} g_loss {:.4} V {:.4} js_proxy {:.4}",
            report.d_loss[epoch - 1],
            report.g_loss[epoch - 1],
            v,
            proxy
        );

        let ckpt = Checkpoint {
            epoch,
            seed: config.seed,
            generator: g.clone(),
            discriminator: d.clone(),
        };
        if let Some(dir) = &config.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            ckpt.save(&dir.join(format!("epoch-{epoch:04}.ckpt")))?;
        }
        last_good = Some(Box::new(ckpt));
    }
    Ok((g, d, report))
}
