use crate::codec::ModelParams;
use crate::tensor::Scalar;

/// Adam hyperparameters. Defaults: `lr = 1e-4`, `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-7`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// One bias-corrected Adam update of `params` at step `t` (1-based).
pub fn adam_update<T: Scalar>(
    cfg: &AdamConfig,
    t: u64,
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
) {
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let step = T::from_f64_lossy(cfg.learning_rate * c2.sqrt() / c1);
    let eps = T::from_f64_lossy(cfg.eps);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        *p = *p - step * *m / (v.sqrt() + eps);
    }
}

/// Adam state for a full parameter set.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: ModelParams<T>,
    v: ModelParams<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ModelParams<T>) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.step += 1;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            adam_update(&self.config, self.step, &mut p.data, &g.data, &mut m.data, &mut v.data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut w = [1.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        let g = [2.0 * w[0]];
        adam_update(&cfg, 1, &mut w, &g, &mut m, &mut v);
        // m_hat = g, v_hat = g^2; eps enters scaled by 1/sqrt(1 - beta2) in this form.
        let eps_hat = cfg.eps / (1.0 - cfg.beta2).sqrt();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + eps_hat);
        assert!((w[0] - expected).abs() < 1e-12, "{}", w[0]);
        assert!((w[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn descends_on_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut w = [3.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        for t in 1..=2000 {
            let g = [2.0 * w[0]];
            adam_update(&cfg, t, &mut w, &g, &mut m, &mut v);
        }
        assert!(w[0].abs() < 1e-2);
    }
}
