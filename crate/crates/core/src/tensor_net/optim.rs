use serde::{Deserialize, Serialize};

use super::layers::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay: `w ← w − lr·wd·w` before the Adam delta.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-3,
        }
    }
}

/// One Adam update using the gradient buffers in `params`. `t` is the
/// 1-based step count for bias correction.
pub fn adam_step(params: &mut ParamSet, cfg: &AdamConfig, t: u64) {
    debug_assert!(t >= 1, "Adam step counter is 1-based");
    let t = t.max(1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for layer in &mut params.layers {
        update(
            layer.weight.as_mut_slice(),
            layer.grad_weight.as_slice(),
            layer.m_weight.as_mut_slice(),
            layer.v_weight.as_mut_slice(),
            cfg,
            bc1,
            bc2,
        );
        update(
            &mut layer.bias,
            &layer.grad_bias,
            &mut layer.m_bias,
            &mut layer.v_bias,
            cfg,
            bc1,
            bc2,
        );
    }
}

fn update(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] -= cfg.lr * cfg.weight_decay * w[i];
        w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_net::{Dense, Matrix};
    use approx::assert_abs_diff_eq;

    fn scalar_param(w: f64, g: f64) -> ParamSet {
        let mut l =
            Dense::from_parts("s", Matrix::from_vec(1, 1, vec![w]).unwrap(), vec![0.0]).unwrap();
        l.grad_weight.as_mut_slice()[0] = g;
        ParamSet::new(vec![l])
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = scalar_param(2.0, 0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &cfg, 1);
        assert_abs_diff_eq!(
            p.layers[0].weight.get(0, 0),
            2.0 * (1.0 - 0.05),
            epsilon = 1e-15
        );
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_param(0.0, 1.0);
        let cfg = AdamConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &cfg, 1);
        // bias-corrected m̂ = 1, v̂ = 1 → Δw = −lr / (1 + eps)
        assert_abs_diff_eq!(p.layers[0].weight.get(0, 0), -1e-3, epsilon = 1e-10);
    }

    #[test]
    fn deterministic_for_identical_inputs() {
        let mut a = scalar_param(0.3, -0.7);
        let mut b = a.clone();
        let cfg = AdamConfig::default();
        for t in 1..=5 {
            adam_step(&mut a, &cfg, t);
            adam_step(&mut b, &cfg, t);
        }
        assert_eq!(a, b);
    }
}
