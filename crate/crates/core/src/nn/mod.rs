//! A small sequential network with exact reverse-mode gradients.
//!
//! Only what the desk-scale generator and discriminator need: linear,
//! strided convolution, transposed convolution and pointwise activations,
//! processed one sample at a time in `f64`. Parameters are read-only during
//! a forward/backward pass; all per-pass state lives in a [`Trace`], so a
//! frozen network can serve concurrent callers.

mod adam;
mod conv;

pub use adam::{Adam, AdamConfig};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use conv::Geometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn flat(n: usize) -> Self {
        Shape::new(n, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Linear {
        outputs: usize,
    },
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
    /// Each pixel's channel vector scaled to unit root-mean-square.
    PixelNorm,
    /// Nearest-neighbour enlargement by an integer factor.
    Upsample {
        factor: usize,
    },
}

/// Input shape plus the layer list; enough to rebuild a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    spec: LayerSpec,
    input: Shape,
    output: Shape,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn geometry(&self) -> Option<Geometry> {
        match self.spec {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            }
            | LayerSpec::ConvTranspose2d {
                kernel,
                stride,
                padding,
                ..
            } => Some(Geometry {
                kernel,
                stride,
                padding,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// Activations recorded by a forward pass (`acts[0]` is the input).
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an input")
    }
}

/// Parameter-shaped accumulator, one `(weight, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b).all(|g| g.is_finite()))
    }
}

fn infer_output(spec: &LayerSpec, input: Shape) -> Result<(Shape, usize, usize)> {
    let bad = |msg: String| Err(Error::invalid(msg));
    Ok(match *spec {
        LayerSpec::Linear { outputs } => (Shape::flat(outputs), outputs * input.len(), outputs),
        LayerSpec::Reshape {
            channels,
            height,
            width,
        } => {
            let out = Shape::new(channels, height, width);
            if out.len() != input.len() {
                return bad(format!("cannot reshape {input:?} into {out:?}"));
            }
            (out, 0, 0)
        }
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            if stride == 0
                || kernel == 0
                || input.height + 2 * padding < kernel
                || input.width + 2 * padding < kernel
            {
                return bad(format!("conv kernel {kernel} does not fit {input:?}"));
            }
            let out = Shape::new(
                out_channels,
                (input.height + 2 * padding - kernel) / stride + 1,
                (input.width + 2 * padding - kernel) / stride + 1,
            );
            (
                out,
                out_channels * input.channels * kernel * kernel,
                out_channels,
            )
        }
        LayerSpec::ConvTranspose2d {
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let h = (input.height - 1) * stride + kernel;
            let w = (input.width - 1) * stride + kernel;
            if stride == 0 || h <= 2 * padding || w <= 2 * padding {
                return bad(format!("transposed conv does not fit {input:?}"));
            }
            let out = Shape::new(out_channels, h - 2 * padding, w - 2 * padding);
            (
                out,
                input.channels * out_channels * kernel * kernel,
                out_channels,
            )
        }
        LayerSpec::Upsample { factor } => {
            if factor == 0 {
                return bad("upsampling factor must be positive".into());
            }
            (
                Shape::new(input.channels, input.height * factor, input.width * factor),
                0,
                0,
            )
        }
        LayerSpec::Relu
        | LayerSpec::LeakyRelu { .. }
        | LayerSpec::Tanh
        | LayerSpec::Sigmoid
        | LayerSpec::PixelNorm => (input, 0, 0),
    })
}

/// Fan-in used for weight initialization.
fn fan_in(spec: &LayerSpec, input: Shape) -> usize {
    match *spec {
        LayerSpec::Linear { .. } => input.len(),
        LayerSpec::Conv2d { kernel, .. } => input.channels * kernel * kernel,
        LayerSpec::ConvTranspose2d { kernel, stride, .. } => {
            (input.channels * kernel * kernel / (stride * stride)).max(1)
        }
        _ => 1,
    }
}

impl Network {
    /// Weights drawn from `N(0, gain^2 / fan_in)`, biases zero.
    pub fn new(arch: Architecture, gain: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut shape = arch.input;
        for spec in &arch.layers {
            let (output, n_weight, n_bias) = infer_output(spec, shape)?;
            let std = gain / (fan_in(spec, shape) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let weight = (0..n_weight).map(|_| normal.sample(rng)).collect();
            layers.push(Layer {
                spec: spec.clone(),
                input: shape,
                output,
                weight,
                bias: vec![0.0; n_bias],
            });
            shape = output;
        }
        Ok(Network { arch, layers })
    }

    /// Rebuild from an architecture and flat per-layer parameters, as stored
    /// in checkpoints.
    pub fn from_parameters(arch: Architecture, params: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let mut rng = crate::keyed::seeded_rng(0);
        let mut net = Network::new(arch, 1.0, &mut rng)?;
        if params.len() != net.layers.len() {
            return Err(Error::invalid(
                "parameter count does not match architecture",
            ));
        }
        for (layer, (w, b)) in net.layers.iter_mut().zip(params) {
            if w.len() != layer.weight.len() || b.len() != layer.bias.len() {
                return Err(Error::invalid(
                    "parameter shape does not match architecture",
                ));
            }
            layer.weight = w;
            layer.bias = b;
        }
        Ok(net)
    }

    pub fn parameters(&self) -> Vec<(&[f64], &[f64])> {
        self.layers
            .iter()
            .map(|l| (l.weight.as_slice(), l.bias.as_slice()))
            .collect()
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_shape(&self) -> Shape {
        self.arch.input
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map_or(self.arch.input, |l| l.output)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn forward(&self, input: &[f64]) -> Trace {
        assert_eq!(input.len(), self.arch.input.len(), "network input size");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let x = acts.last().unwrap();
            let y = layer_forward(layer, x);
            acts.push(y);
        }
        Trace { acts }
    }

    /// Back-propagate `grad_out` (d loss / d output). Parameter gradients are
    /// accumulated into `grads` when given; returns d loss / d input.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_out: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            let acc = grads.as_deref_mut().map(|gr| &mut gr.layers[i]);
            g = layer_backward(layer, x, y, &g, acc);
        }
        g
    }

    pub(crate) fn apply<F: FnMut(usize, &mut [f64], &mut [f64])>(&mut self, mut f: F) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(i, &mut l.weight, &mut l.bias);
        }
    }
}

fn layer_forward(layer: &Layer, x: &[f64]) -> Vec<f64> {
    match layer.spec {
        LayerSpec::Linear { outputs } => {
            let n = x.len();
            (0..outputs)
                .map(|o| {
                    let row = &layer.weight[o * n..(o + 1) * n];
                    layer.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect()
        }
        LayerSpec::Reshape { .. } => x.to_vec(),
        LayerSpec::Conv2d { .. } => {
            let mut y = bias_planes(&layer.bias, layer.output);
            conv::forward(
                x,
                layer.input,
                &layer.weight,
                &mut y,
                layer.output,
                layer.geometry().unwrap(),
            );
            y
        }
        LayerSpec::ConvTranspose2d { .. } => {
            let mut y = bias_planes(&layer.bias, layer.output);
            // adjoint of the correlation output -> input
            conv::adjoint(
                x,
                layer.input,
                &layer.weight,
                &mut y,
                layer.output,
                layer.geometry().unwrap(),
            );
            y
        }
        LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
        LayerSpec::LeakyRelu { slope } => x
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect(),
        LayerSpec::Tanh => x.iter().map(|v| v.tanh()).collect(),
        LayerSpec::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        LayerSpec::PixelNorm => {
            let (c, plane) = (layer.input.channels, layer.input.height * layer.input.width);
            let mut y = x.to_vec();
            for p in 0..plane {
                let n = pixel_rms(x, c, plane, p);
                for k in 0..c {
                    y[k * plane + p] /= n;
                }
            }
            y
        }
        LayerSpec::Upsample { factor } => {
            let mut y = vec![0.0; layer.output.len()];
            for (o, src) in upsample_sources(layer.input, factor) {
                y[o] = x[src];
            }
            y
        }
    }
}

/// `(output index, input index)` pairs of a nearest-neighbour enlargement.
fn upsample_sources(input: Shape, factor: usize) -> impl Iterator<Item = (usize, usize)> {
    let (h, w) = (input.height, input.width);
    let (oh, ow) = (h * factor, w * factor);
    (0..input.channels).flat_map(move |c| {
        (0..oh).flat_map(move |i| {
            (0..ow).map(move |j| ((c * oh + i) * ow + j, (c * h + i / factor) * w + j / factor))
        })
    })
}

const PIXEL_NORM_EPS: f64 = 1e-8;

fn pixel_rms(x: &[f64], channels: usize, plane: usize, p: usize) -> f64 {
    let ms = (0..channels).map(|k| x[k * plane + p].powi(2)).sum::<f64>() / channels as f64;
    (ms + PIXEL_NORM_EPS).sqrt()
}

fn layer_backward(
    layer: &Layer,
    x: &[f64],
    y: &[f64],
    gy: &[f64],
    acc: Option<&mut (Vec<f64>, Vec<f64>)>,
) -> Vec<f64> {
    match layer.spec {
        LayerSpec::Linear { outputs } => {
            let n = x.len();
            let mut gx = vec![0.0; n];
            for o in 0..outputs {
                let g = gy[o];
                if g == 0.0 {
                    continue;
                }
                let row = &layer.weight[o * n..(o + 1) * n];
                for (gxi, w) in gx.iter_mut().zip(row) {
                    *gxi += g * w;
                }
            }
            if let Some((gw, gb)) = acc {
                for o in 0..outputs {
                    let g = gy[o];
                    gb[o] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for (w, v) in gw[o * n..(o + 1) * n].iter_mut().zip(x) {
                        *w += g * v;
                    }
                }
            }
            gx
        }
        LayerSpec::Reshape { .. } => gy.to_vec(),
        LayerSpec::Conv2d { .. } => {
            let g = layer.geometry().unwrap();
            let mut gx = vec![0.0; layer.input.len()];
            conv::adjoint(gy, layer.output, &layer.weight, &mut gx, layer.input, g);
            if let Some((gw, gb)) = acc {
                conv::weight_grad(x, layer.input, gy, layer.output, gw, g);
                add_plane_sums(gb, gy, layer.output);
            }
            gx
        }
        LayerSpec::ConvTranspose2d { .. } => {
            let g = layer.geometry().unwrap();
            let mut gx = vec![0.0; layer.input.len()];
            conv::forward(gy, layer.output, &layer.weight, &mut gx, layer.input, g);
            if let Some((gw, gb)) = acc {
                conv::weight_grad(gy, layer.output, x, layer.input, gw, g);
                add_plane_sums(gb, gy, layer.output);
            }
            gx
        }
        LayerSpec::Relu => x
            .iter()
            .zip(gy)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        LayerSpec::LeakyRelu { slope } => x
            .iter()
            .zip(gy)
            .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
            .collect(),
        LayerSpec::Tanh => y.iter().zip(gy).map(|(&t, &g)| g * (1.0 - t * t)).collect(),
        LayerSpec::Sigmoid => y.iter().zip(gy).map(|(&s, &g)| g * s * (1.0 - s)).collect(),
        LayerSpec::PixelNorm => {
            // y = x / n with n = sqrt(mean(x^2) + eps):
            // dx_k = g_k / n - x_k * sum_j(g_j x_j) / (C n^3)
            let (c, plane) = (layer.input.channels, layer.input.height * layer.input.width);
            let mut gx = vec![0.0; x.len()];
            for p in 0..plane {
                let n = pixel_rms(x, c, plane, p);
                let dot: f64 = (0..c).map(|k| gy[k * plane + p] * x[k * plane + p]).sum();
                let coef = dot / (c as f64 * n * n * n);
                for k in 0..c {
                    let i = k * plane + p;
                    gx[i] = gy[i] / n - x[i] * coef;
                }
            }
            gx
        }
        LayerSpec::Upsample { factor } => {
            let mut gx = vec![0.0; x.len()];
            for (o, src) in upsample_sources(layer.input, factor) {
                gx[src] += gy[o];
            }
            gx
        }
    }
}

fn bias_planes(bias: &[f64], shape: Shape) -> Vec<f64> {
    let plane = shape.height * shape.width;
    bias.iter()
        .flat_map(|&b| std::iter::repeat_n(b, plane))
        .collect()
}

fn add_plane_sums(gb: &mut [f64], gy: &[f64], shape: Shape) {
    let plane = shape.height * shape.width;
    for (c, b) in gb.iter_mut().enumerate() {
        *b += gy[c * plane..(c + 1) * plane].iter().sum::<f64>();
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyed::seeded_rng;
    use rand::Rng;

    fn small_arch() -> Architecture {
        Architecture {
            input: Shape::flat(5),
            layers: vec![
                LayerSpec::Linear { outputs: 2 * 3 * 3 },
                LayerSpec::Reshape {
                    channels: 2,
                    height: 3,
                    width: 3,
                },
                LayerSpec::LeakyRelu { slope: 0.2 },
                LayerSpec::PixelNorm,
                LayerSpec::Upsample { factor: 2 },
                LayerSpec::ConvTranspose2d {
                    out_channels: 3,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::Tanh,
                LayerSpec::Conv2d {
                    out_channels: 2,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Linear { outputs: 3 },
                LayerSpec::Sigmoid,
            ],
        }
    }

    /// Loss = <output, r> for a fixed random r.
    fn loss(net: &Network, x: &[f64], r: &[f64]) -> f64 {
        net.forward(x)
            .output()
            .iter()
            .zip(r)
            .map(|(a, b)| a * b)
            .sum()
    }

    #[test]
    fn shapes_are_inferred() {
        let net = Network::new(small_arch(), 1.0, &mut seeded_rng(0)).unwrap();
        assert_eq!(net.output_shape(), Shape::flat(3));
        assert_eq!(net.layers[4].output, Shape::new(2, 6, 6));
        assert_eq!(net.layers[5].output, Shape::new(3, 12, 12));
        assert_eq!(net.layers[7].output, Shape::new(2, 6, 6));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = seeded_rng(42);
        let net = Network::new(small_arch(), 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let trace = net.forward(&x);
        let mut grads = net.zero_gradients();
        let gx = net.backward(&trace, &r, Some(&mut grads));
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&net, &xp, &r) - loss(&net, &xm, &r)) / (2.0 * h);
            assert!(
                (fd - gx[i]).abs() <= 1e-4 * fd.abs().max(gx[i].abs()).max(1e-6),
                "input {i}: {fd} vs {}",
                gx[i]
            );
        }
        for li in 0..net.layers.len() {
            for which in 0..2 {
                let n = if which == 0 {
                    net.layers[li].weight.len()
                } else {
                    net.layers[li].bias.len()
                };
                for j in (0..n).step_by(7) {
                    let mut np = net.clone();
                    let mut nm = net.clone();
                    if which == 0 {
                        np.layers[li].weight[j] += h;
                        nm.layers[li].weight[j] -= h;
                    } else {
                        np.layers[li].bias[j] += h;
                        nm.layers[li].bias[j] -= h;
                    }
                    let fd = (loss(&np, &x, &r) - loss(&nm, &x, &r)) / (2.0 * h);
                    let an = if which == 0 {
                        grads.layers[li].0[j]
                    } else {
                        grads.layers[li].1[j]
                    };
                    assert!(
                        (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6),
                        "layer {li} param {j}: {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn parameters_round_trip() {
        let net = Network::new(small_arch(), 1.0, &mut seeded_rng(1)).unwrap();
        let params = net
            .parameters()
            .into_iter()
            .map(|(w, b)| (w.to_vec(), b.to_vec()))
            .collect();
        let back = Network::from_parameters(small_arch(), params).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn bad_reshape_is_rejected() {
        let arch = Architecture {
            input: Shape::flat(5),
            layers: vec![LayerSpec::Reshape {
                channels: 2,
                height: 2,
                width: 2,
            }],
        };
        assert!(Network::new(arch, 1.0, &mut seeded_rng(0)).is_err());
    }
}
