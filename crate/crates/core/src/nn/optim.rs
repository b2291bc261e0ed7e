use serde::{Deserialize, Serialize};

use super::param::Module;

/// `base · (1 − iter/max_iter)^power`, clamped at zero past the horizon.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    if max_iter == 0 {
        return base;
    }
    let frac = 1.0 - (iter.min(max_iter) as f64 / max_iter as f64);
    base * frac.powf(power)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            poly_power: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub poly_power: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            betas: (0.9, 0.99),
            eps: 1e-8,
            poly_power: 0.9,
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn step(&mut self, module: &mut impl Module, lr: f64) {
        let (mu, wd, lr) = (
            self.config.momentum as f32,
            self.config.weight_decay as f32,
            lr as f32,
        );
        let first = self.velocity.is_empty();
        let mut idx = 0;
        let velocity = &mut self.velocity;
        module.visit_mut(&mut |p| {
            if first {
                velocity.push(vec![0.0; p.value.len()]);
            }
            let buf = &mut velocity[idx];
            for ((w, g), b) in p.value.iter_mut().zip(&p.grad).zip(buf.iter_mut()) {
                let d = g + wd * *w;
                *b = mu * *b + d;
                *w -= lr * *b;
            }
            idx += 1;
        });
    }
}

pub struct Adam {
    config: AdamConfig,
    t: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&mut self, module: &mut impl Module, lr: f64) {
        self.t += 1;
        let (b1, b2) = self.config.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (b1, b2, eps) = (b1 as f32, b2 as f32, self.config.eps as f32);
        let step = (lr / c1) as f32;
        let c2_sqrt = c2.sqrt() as f32;
        let first = self.m.is_empty();
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        module.visit_mut(&mut |p| {
            if first {
                ms.push(vec![0.0; p.value.len()]);
                vs.push(vec![0.0; p.value.len()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.value[i] -= step * m[i] / (v[i].sqrt() / c2_sqrt + eps);
            }
            idx += 1;
        });
    }
}
