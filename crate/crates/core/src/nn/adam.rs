use serde::{Deserialize, Serialize};

use super::{Gradients, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive moment estimation over any number of parameter groups.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, group_sizes: &[usize]) -> Self {
        Adam {
            cfg,
            t: 0,
            m: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One group per weight tensor and one per bias tensor.
    pub fn for_network(cfg: AdamConfig, net: &Network) -> Self {
        let sizes: Vec<usize> = net
            .parameters()
            .iter()
            .flat_map(|(w, b)| [w.len(), b.len()])
            .collect();
        Adam::new(cfg, &sizes)
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Start a new step; call once before updating the groups of that step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// `params -= lr * m_hat / (sqrt(v_hat) + eps)` for one group.
    pub fn update(&mut self, group: usize, params: &mut [f64], grad: &[f64]) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        let (m, v) = (&mut self.m[group], &mut self.v[group]);
        for i in 0..params.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }

    pub fn step_network(&mut self, net: &mut Network, grads: &Gradients) {
        self.begin_step();
        net.apply(|i, w, b| {
            let (gw, gb) = &grads.layers[i];
            self.update(2 * i, w, gw);
            self.update(2 * i + 1, b, gb);
        });
    }
}
