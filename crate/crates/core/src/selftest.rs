//! Built-in verification suites: gradient check, EMA closed form, replay
//! determinism and codec round trips.

use serde::Serialize;

use crate::microsim::{replay_check, rollout, EnvAugConfig, ExpertController, Source, Task, Trajectory};
use crate::nn::{ema_update, grad_check, init_ema, GradCheckCase, ParamSet, Tensor};
use crate::policy::{Policy, PolicyController, PolicySpec};
use crate::rng::{derive_seed, ModelTag, SplitMix64};
use crate::storage::{decode_checkpoint, decode_demo, encode_checkpoint, encode_demo};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
    pub max_grad_rel_error: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Worst relative gradient error over every case and `seeds` seeds.
pub fn gradient_suite(seeds: u64, eps: f64) -> f64 {
    let mut worst = 0.0f64;
    for case in GradCheckCase::ALL {
        for seed in 0..seeds {
            worst = worst.max(grad_check(case, seed, eps).max_rel_error);
        }
    }
    worst
}

/// Largest deviation of the shadow from `theta + tau^t (s0 - theta)` over
/// the given decays and step counts, and whether `tau = 0` copies the
/// parameters bit for bit.
pub fn ema_suite(taus: &[f64], steps: &[u32]) -> (f64, bool) {
    let mut rng = SplitMix64::new(99);
    let theta: Vec<f32> = (0..16).map(|_| rng.symmetric(2.0)).collect();
    let s0: Vec<f32> = (0..16).map(|_| rng.symmetric(2.0)).collect();
    let mut worst = 0.0f64;
    let mut exact_copy = true;
    for &tau in taus {
        for &t in steps {
            let mut p = ParamSet {
                names: vec!["w".into()],
                tensors: vec![Tensor::from_vec(&[16], s0.clone())],
                ema: None,
                adam: None,
            };
            init_ema(&mut p);
            p.tensors[0].data.clone_from(&theta);
            for _ in 0..t {
                ema_update(&mut p, tau);
            }
            let shadow = &p.ema.as_ref().unwrap()[0];
            for i in 0..16 {
                let expect = theta[i] as f64 + tau.powi(t as i32) * (s0[i] as f64 - theta[i] as f64);
                worst = worst.max((shadow.data[i] as f64 - expect).abs());
            }
            if tau == 0.0 {
                exact_copy &= shadow.bit_eq(&p.tensors[0]);
            }
        }
    }
    (worst, exact_copy)
}

/// `n` rollouts cycling through expert, base and EMA controllers with
/// augmentation on and off. The policies are random but distinct.
pub fn mixed_rollouts(n: usize, master: u64) -> Vec<Trajectory> {
    let policy = Policy::new(PolicySpec::default());
    let mut params = policy.init(master);
    init_ema(&mut params);
    // move the shadow off the parameters so the two controllers differ
    let mut rng = SplitMix64::new(master ^ 0x5eed);
    for t in params.ema.as_mut().unwrap() {
        t.data.iter_mut().for_each(|v| *v += rng.symmetric(0.05));
    }
    let shadow = params.ema_view().unwrap();
    (0..n)
        .map(|i| {
            let task = Task::new(i % 8);
            let aug = if (i / 8) % 2 == 0 { EnvAugConfig::default() } else { EnvAugConfig::disabled() };
            let (tag, source) = [(ModelTag::Expert, Source::Expert), (ModelTag::Base, Source::Base), (ModelTag::Ema, Source::Ema)][i % 3];
            let seed = derive_seed(master, 1, tag, task.task_id, i);
            let t = match source {
                Source::Expert => rollout(&mut ExpertController::new(task, seed), &task, seed, &aug, source, 0),
                Source::Base => rollout(&mut PolicyController { policy: &policy, params: &params }, &task, seed, &aug, source, 1),
                Source::Ema => rollout(&mut PolicyController { policy: &policy, params: &shadow }, &task, seed, &aug, source, 1),
            };
            t.with_index(i)
        })
        .collect()
}

pub fn run_selftest() -> SelftestReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(Check {
            name: name.into(),
            passed,
            detail,
        })
    };

    let grad = gradient_suite(5, 1e-3);
    push("grad_check", grad < 1e-3, format!("max relative error {grad:.3e}"));

    let (ema_err, copy) = ema_suite(&[0.0, 0.5, 0.9, 0.999], &[1, 10, 100]);
    push("ema_closed_form", ema_err < 1e-5 && copy, format!("max deviation {ema_err:.3e}, tau=0 exact copy {copy}"));

    let demos = mixed_rollouts(100, 7);
    let replayed = demos.iter().filter(|d| replay_check(d)).count();
    push("replay", replayed == demos.len(), format!("{replayed}/{} rollouts replay bit-exactly", demos.len()));

    let demo_ok = demos.iter().all(|d| decode_demo(&encode_demo(d)).as_ref() == Ok(d));
    let policy = Policy::new(PolicySpec::default());
    let mut p = policy.init(3);
    init_ema(&mut p);
    let ckpt_ok = decode_checkpoint(&encode_checkpoint(&p)).map(|q| q.bit_eq(&p)).unwrap_or(false);
    push("codec_round_trip", demo_ok && ckpt_ok, format!("demos {demo_ok}, checkpoint {ckpt_ok}"));

    SelftestReport {
        checks,
        max_grad_rel_error: grad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let r = run_selftest();
        for c in &r.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
