//! Independent oracles shared by the integration suites and the acceptance
//! harness. None of them call into the code they check.
#![allow(dead_code)]

use grille_core::generator::{
    linear_oracle_generator, DiscriminatorModel, GeneratorModel, LatentVector,
};
use grille_core::grille_key::{derive_grille, GrilleKey, Mask};
use grille_core::image::{ImageBuffer, Provenance};
use grille_core::keyed::{seeded_rng, Secret};
use grille_core::latent_search::{loss_and_gradient, SearchConfig};
use grille_core::nn::{Architecture, LayerSpec, Shape};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Natural-log KL converted to bits, skipping zero-mass terms.
pub fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    let mut nats = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            if q[i] == 0.0 {
                return f64::INFINITY;
            }
            nats += p[i] * (p[i].ln() - q[i].ln());
        }
    }
    nats / std::f64::consts::LN_2
}

pub fn js_oracle(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    0.5 * kl_oracle(p, &m) + 0.5 * kl_oracle(q, &m)
}

pub fn random_distribution(rng: &mut impl Rng, n: usize, sparse: bool) -> Vec<f64> {
    let w: Vec<f64> = (0..n)
        .map(|_| {
            if sparse && rng.random_bool(0.3) {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        let mut one = vec![0.0; n];
        one[0] = 1.0;
        return one;
    }
    w.iter().map(|v| v / total).collect()
}

/// SPAM by direct counting: for each direction and each `(w, v)` context,
/// count every `u` over all valid start pixels, then divide.
pub fn spam_oracle(px: &[u8], width: usize, height: usize, t: i32) -> Vec<f64> {
    let k = (2 * t + 1) as usize;
    let groups: [[(i64, i64); 4]; 2] = [
        [(0, 1), (0, -1), (1, 0), (-1, 0)],
        [(1, 1), (-1, -1), (1, -1), (-1, 1)],
    ];
    let mut out = Vec::new();
    for group in groups {
        let mut sum = vec![0.0; k * k * k];
        for (di, dj) in group {
            let mut joint = vec![vec![vec![0u64; k]; k]; k];
            for i in 0..height as i64 {
                for j in 0..width as i64 {
                    let ok = |s: i64| {
                        let (a, b) = (i + s * di, j + s * dj);
                        a >= 0 && b >= 0 && a < height as i64 && b < width as i64
                    };
                    if !(ok(0) && ok(3)) {
                        continue;
                    }
                    let at =
                        |s: i64| px[((i + s * di) as usize) * width + (j + s * dj) as usize] as i32;
                    let d = |s: i64| (at(s) - at(s + 1)).clamp(-t, t);
                    joint[(d(0) + t) as usize][(d(1) + t) as usize][(d(2) + t) as usize] += 1;
                }
            }
            for w in 0..k {
                for v in 0..k {
                    let n: u64 = joint[w][v].iter().sum();
                    for u in 0..k {
                        if n > 0 {
                            sum[(w * k + v) * k + u] += joint[w][v][u] as f64 / n as f64;
                        }
                    }
                }
            }
        }
        out.extend(sum.into_iter().map(|s| s / 4.0));
    }
    out
}

/// One gradient-check problem: generator, discriminator, cover, full mask,
/// full grille.
pub struct ProbeSetup {
    pub g: GeneratorModel,
    pub d: DiscriminatorModel,
    pub cover: ImageBuffer,
    pub mask: Mask,
    pub key: GrilleKey,
    pub cfg: SearchConfig,
}

fn tiny_discriminator(w: usize, h: usize, rng: &mut impl Rng) -> DiscriminatorModel {
    let arch = Architecture {
        input: Shape::new(1, h, w),
        layers: vec![
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::LeakyRelu { slope: 0.2 },
            LayerSpec::Linear { outputs: 1 },
        ],
    };
    DiscriminatorModel::new(arch, rng).unwrap()
}

fn probe_rest(g: GeneratorModel, w: usize, h: usize, rng: &mut impl Rng) -> ProbeSetup {
    let d = tiny_discriminator(w, h, rng);
    let cover = ImageBuffer::new(
        w,
        h,
        1,
        (0..w * h).map(|_| rng.random_range(-0.9..0.9)).collect(),
        Provenance::ExpandedCover,
    )
    .unwrap();
    let mask = Mask::all_known(w, h).unwrap();
    let key = derive_grille(&Secret::from_u64(rng.random()), &mask, 0.5, 8, 0).unwrap();
    let cfg = SearchConfig {
        lambda_perceptual: 0.1,
        message_weight: 2.0,
        ..SearchConfig::default()
    };
    ProbeSetup {
        g,
        d,
        cover,
        mask,
        key,
        cfg,
    }
}

pub fn linear_probe_setup(seed: u64) -> ProbeSetup {
    let mut rng = seeded_rng(seed);
    let (w, h, dim) = (4, 4, 6);
    let a = DMatrix::from_fn(w * h, dim, |_, _| rng.random_range(-0.2..0.2));
    let b: Vec<f64> = (0..w * h).map(|_| rng.random_range(-0.3..0.3)).collect();
    let g = linear_oracle_generator(&a, &b, w, h, 1).unwrap();
    probe_rest(g, w, h, &mut rng)
}

/// Two dense layers: `tanh(W2 lrelu(W1 z + c1) + c2)`.
pub fn tiny_network_probe_setup(seed: u64) -> ProbeSetup {
    let mut rng = seeded_rng(seed);
    let (w, h, dim) = (4, 4, 5);
    let arch = Architecture {
        input: Shape::flat(dim),
        layers: vec![
            LayerSpec::Linear { outputs: 8 },
            LayerSpec::LeakyRelu { slope: 0.2 },
            LayerSpec::Linear { outputs: w * h },
            LayerSpec::Reshape {
                channels: 1,
                height: h,
                width: w,
            },
            LayerSpec::Tanh,
        ],
    };
    let g = GeneratorModel::new(arch, &mut rng).unwrap();
    probe_rest(g, w, h, &mut rng)
}

/// Relative disagreement between the analytic directional derivative and a
/// central difference along a random unit direction at a random point.
pub fn gradient_probe(setup: &ProbeSetup, rng: &mut impl Rng) -> f64 {
    let dim = setup.g.latent_dim();
    let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.9..0.9)).collect();
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let total = |zz: &[f64]| {
        loss_and_gradient(
            &setup.g,
            &setup.d,
            &setup.cover,
            &setup.mask,
            &setup.key,
            &setup.cfg,
            &LatentVector::new(zz.to_vec()).unwrap(),
        )
        .unwrap()
    };
    let (_, grad) = total(&z);
    let analytic: f64 = grad.iter().zip(&v).map(|(g, d)| g * d).sum();
    let h = 1e-6;
    let shifted = |s: f64| -> Vec<f64> { z.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
    let numeric = (total(&shifted(h)).0.total - total(&shifted(-h)).0.total) / (2.0 * h);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A consistent 16-dimensional linear instance: returns the generator, the
/// target image, and the L1 residual at the normal-equations solution.
pub fn l1_instance(seed: u64) -> (GeneratorModel, ImageBuffer, f64) {
    let mut rng = seeded_rng(seed);
    let (w, h, dim) = (6, 6, 16);
    let n = w * h;
    let a = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-0.05..0.05));
    let b = DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
    let z_true = DVector::from_fn(dim, |_, _| rng.random_range(-0.7..0.7));
    let t = &a * &z_true + &b;
    let ata = a.transpose() * &a;
    let z_ne = ata
        .cholesky()
        .expect("A has full column rank")
        .solve(&(a.transpose() * (&t - &b)));
    let objective = (&a * &z_ne + &b - &t).iter().map(|r: &f64| r.abs()).sum();
    let g = linear_oracle_generator(&a, b.as_slice(), w, h, 1).unwrap();
    let target = ImageBuffer::new(
        w,
        h,
        1,
        t.iter().copied().collect(),
        Provenance::ExpandedCover,
    )
    .unwrap();
    (g, target, objective)
}
