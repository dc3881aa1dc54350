use serde::{Deserialize, Serialize};

use super::{AdamState, Grads, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

fn zeros_like(ts: &[Tensor]) -> Vec<Tensor> {
    ts.iter().map(|t| Tensor::zeros(&t.shape)).collect()
}

/// One bias-corrected Adam update. Moments are created on first use.
/// An all-zero gradient only decays the moments; parameters stay put.
pub fn adam_step(params: &mut ParamSet, grads: &Grads<f32>, cfg: &AdamConfig) {
    assert_eq!(grads.len(), params.tensors.len(), "gradient layout mismatch");
    let frozen = grads.iter().all(|g| g.iter().all(|&v| v == 0.0));
    let state = params.adam.get_or_insert_with(|| AdamState {
        m: zeros_like(&params.tensors),
        v: zeros_like(&params.tensors),
        step: 0,
    });
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let (nb1, nb2) = ((1.0 - cfg.beta1) as f32, (1.0 - cfg.beta2) as f32);
    for (k, g) in grads.iter().enumerate() {
        let w = &mut params.tensors[k].data;
        let m = &mut state.m[k].data;
        let v = &mut state.v[k].data;
        assert_eq!(g.len(), w.len(), "gradient shape mismatch");
        for i in 0..w.len() {
            m[i] = b1 * m[i] + nb1 * g[i];
            v[i] = b2 * v[i] + nb2 * g[i] * g[i];
            if frozen {
                continue;
            }
            let m_hat = m[i] as f64 / c1;
            let v_hat = v[i] as f64 / c2;
            let update = cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            w[i] = (w[i] as f64 - update) as f32;
        }
    }
}

/// Starts the EMA shadow as a copy of the current parameters.
pub fn init_ema(params: &mut ParamSet) {
    params.ema = Some(params.tensors.clone());
}

/// `shadow = tau * shadow + (1 - tau) * params`, element-wise.
pub fn ema_update(params: &mut ParamSet, tau: f64) {
    assert!((0.0..1.0).contains(&tau), "decay must lie in [0, 1)");
    let shadow = params.ema.as_mut().expect("EMA shadow not initialized");
    for (s, p) in shadow.iter_mut().zip(&params.tensors) {
        for (sv, &pv) in s.data.iter_mut().zip(&p.data) {
            *sv = (tau * *sv as f64 + (1.0 - tau) * pv as f64) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f32) -> ParamSet {
        ParamSet {
            names: vec!["w".into()],
            tensors: vec![Tensor::from_vec(&[1], vec![w])],
            ema: None,
            adam: None,
        }
    }

    #[test]
    fn zero_grads_from_fresh_state_leave_params() {
        let mut p = scalar(0.75);
        let before = p.tensors.clone();
        adam_step(&mut p, &vec![vec![0.0]], &AdamConfig::default());
        assert!(p.tensors[0].bit_eq(&before[0]));
        assert_eq!(p.adam.as_ref().unwrap().step, 1);
    }

    #[test]
    fn zero_grads_after_history_only_decay_moments() {
        let mut p = scalar(0.75);
        adam_step(&mut p, &vec![vec![0.5]], &AdamConfig::default());
        let w = p.tensors[0].data[0];
        let m = p.adam.as_ref().unwrap().m[0].data[0];
        adam_step(&mut p, &vec![vec![0.0]], &AdamConfig::default());
        assert_eq!(p.tensors[0].data[0].to_bits(), w.to_bits());
        assert_eq!(p.adam.as_ref().unwrap().m[0].data[0], 0.9 * m);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0f32, -0.002, 150.0] {
            let mut p = scalar(1.0);
            adam_step(&mut p, &vec![vec![g]], &AdamConfig::with_lr(0.01));
            let moved = 1.0 - p.tensors[0].data[0];
            assert!((moved.abs() - 0.01).abs() < 1e-5, "g={g} moved {moved}");
            assert_eq!(moved.signum(), g.signum());
        }
    }

    #[test]
    fn quadratic_golden_sequence() {
        // f(w) = w^2 from w = 1 with lr 0.1; values from a hand-evaluated
        // float64 recurrence of the Adam equations.
        let golden = [0.9000000005f64, 0.8004122286917927, 0.70158627294603];
        let mut p = scalar(1.0);
        let mut prev = 1.0f32;
        for expect in golden {
            let w = p.tensors[0].data[0];
            adam_step(&mut p, &vec![vec![2.0 * w]], &AdamConfig::with_lr(0.1));
            let now = p.tensors[0].data[0];
            assert!(now < prev);
            assert!((now as f64 - expect).abs() < 1e-6, "{now} vs {expect}");
            prev = now;
        }
    }

    #[test]
    fn ema_tau_zero_copies_params() {
        let mut p = scalar(0.3);
        init_ema(&mut p);
        p.tensors[0].data[0] = -1.2345;
        ema_update(&mut p, 0.0);
        assert!(p.ema.as_ref().unwrap()[0].bit_eq(&p.tensors[0]));
    }

    #[test]
    fn ema_single_substitution() {
        let mut p = scalar(0.0);
        init_ema(&mut p);
        p.tensors[0].data[0] = 1.0;
        ema_update(&mut p, 0.9);
        assert!((p.ema.as_ref().unwrap()[0].data[0] - 0.1).abs() < 1e-7);
        assert_eq!(p.tensors[0].data[0], 1.0);
    }
}
