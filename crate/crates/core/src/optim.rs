//! ADAM over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Moments followed by the step counter, for broadcasting.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.m.len() + 1);
        out.extend_from_slice(&self.m);
        out.extend_from_slice(&self.v);
        out.push(self.t as f64);
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.m.len();
        if flat.len() != 2 * n + 1 {
            return Err(Error::LengthMismatch {
                expected: 2 * n + 1,
                actual: flat.len(),
            });
        }
        self.m.copy_from_slice(&flat[..n]);
        self.v.copy_from_slice(&flat[n..2 * n]);
        self.t = flat[2 * n] as u64;
        Ok(())
    }
}

/// One bias-corrected ADAM update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    let n = params.len();
    if grads.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: grads.len(),
        });
    }
    if state.m.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: state.m.len(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("adam gradient"));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut s = AdamState::new(3, AdamConfig::default());
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_about_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1, AdamConfig::default());
        adam_step(&mut p, &[0.5], &mut s).unwrap();
        // m̂ = 0.5, v̂ = 0.25
        let expected = -1e-4 * (0.5 / (0.5 + 1e-8));
        assert!((p[0] - expected).abs() < 1e-18);
        assert!((p[0] + 1e-4).abs() < 1e-11);
    }

    #[test]
    fn two_constant_gradient_steps_by_hand() {
        // g = 1 both steps, lr = 1e-3
        // step 1: m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 → Δ = −lr/(1+ε)
        // step 2: m = 0.19, v = 0.001999, m̂ = 0.19/0.19 = 1, v̂ = 0.001999/0.001999 = 1
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let mut p = vec![2.0];
        let mut s = AdamState::new(1, cfg);
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        let expected = 2.0 - 2.0 * 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((s.m[0] - 0.19).abs() < 1e-15);
        assert!((s.v[0] - 0.001999).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2, AdamConfig::default());
        assert!(adam_step(&mut p, &[1.0], &mut s).is_err());
        assert!(adam_step(&mut p, &[1.0, f64::NAN], &mut s).is_err());
        assert_eq!(s.t, 0);
    }

    #[test]
    fn state_flatten_round_trip() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0; 2];
        adam_step(&mut p, &[0.3, -0.1], &mut s).unwrap();
        let mut r = AdamState::new(2, AdamConfig::default());
        r.unflatten(&s.flatten()).unwrap();
        assert_eq!(r, s);
    }

    /// Cauchy-Schwarz bound on |m̂|/√v̂ after `t` steps:
    /// √(Σᵢ aᵢ²/bᵢ) with aᵢ, bᵢ the normalized moment weights.
    fn step_ratio_bound(cfg: &AdamConfig, t: i32) -> f64 {
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        (1..=t)
            .map(|i| {
                let a = (1.0 - cfg.beta1) * cfg.beta1.powi(t - i) / c1;
                let b = (1.0 - cfg.beta2) * cfg.beta2.powi(t - i) / c2;
                a * a / b
            })
            .sum::<f64>()
            .sqrt()
    }

    proptest! {
        #[test]
        fn steps_oppose_gradient_and_stay_bounded(
            grads in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 4), 1..20)
        ) {
            let cfg = AdamConfig::default();
            let mut p = vec![0.0; 4];
            let mut s = AdamState::new(4, cfg);
            for g in &grads {
                let before = p.clone();
                adam_step(&mut p, g, &mut s).unwrap();
                for i in 0..4 {
                    let delta = p[i] - before[i];
                    let bound = cfg.lr * step_ratio_bound(&cfg, s.t as i32);
                    prop_assert!(delta.abs() <= bound * (1.0 + 1e-12) + 1e-15);
                    if s.t == 1 && g[i].abs() > 1e-3 {
                        prop_assert!(delta * g[i] < 0.0);
                    }
                }
            }
        }

        #[test]
        fn deterministic(g in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let mut a = vec![0.5; 3];
            let mut b = a.clone();
            let mut sa = AdamState::new(3, AdamConfig::default());
            let mut sb = sa.clone();
            adam_step(&mut a, &g, &mut sa).unwrap();
            adam_step(&mut b, &g, &mut sb).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(sa, sb);
        }
    }
}
