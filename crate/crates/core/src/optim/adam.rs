use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self::with_config(len, AdamConfig::default())
    }

    pub fn with_config(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// One bias-corrected step. Weight decay is decoupled: `x ← x·(1 − lr·wd)` before the
    /// update. Frozen entries and their moments are left untouched.
    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64, weight_decay: f64, frozen: &[bool]) {
        assert_eq!(x.len(), self.m.len(), "parameter length changed under Adam");
        assert_eq!(g.len(), x.len());
        assert_eq!(frozen.len(), x.len());
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..x.len() {
            if frozen[i] {
                continue;
            }
            if weight_decay != 0.0 {
                x[i] *= 1.0 - lr * weight_decay;
            }
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            x[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Free-function form of [`Adam::step`].
pub fn adam_step(state: &mut Adam, x: &mut [f64], g: &[f64], lr: f64, weight_decay: f64, frozen: &[bool]) {
    state.step(x, g, lr, weight_decay, frozen)
}
