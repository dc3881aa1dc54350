//! Behavior-cloning policy: a small MLP from observation to action,
//! trained with Adam on pooled (observation, action) pairs while an EMA
//! shadow tracks every update.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::microsim::{rollout, Action, Controller, EnvAugConfig, Observation, SimState, Source, Task, TaskSuite, Trajectory, ACTION_DIM, OBS_DIM};
use crate::nn::{adam_step, ema_update, init_ema, Activation, AdamConfig, DenseBatch, MlpModel, Model, NnError, ParamSet, ParamView, Targets};
use crate::rng::SplitMix64;

/// Learning-rate shape over one training call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to zero at the last step.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySpec {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub schedule: LrSchedule,
    /// Observations enter the network as `(x - obs_center) * obs_scale`.
    pub obs_center: f32,
    pub obs_scale: f32,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            lr: 1e-3,
            batch: 64,
            schedule: LrSchedule::Cosine,
            obs_center: 0.5,
            obs_scale: 4.0,
        }
    }
}

impl PolicySpec {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![OBS_DIM];
        d.extend(&self.hidden);
        d.push(ACTION_DIM);
        d
    }

    pub fn model(&self) -> MlpModel {
        MlpModel::new(&self.dims(), Activation::Relu)
    }

    pub fn net_input(&self, obs: &Observation) -> [f32; OBS_DIM] {
        obs.0.map(|v| (v - self.obs_center) * self.obs_scale)
    }
}

/// Which parameter copy drives a rollout or an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Base,
    Ema,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Base => "base",
            ModelKind::Ema => "ema",
        }
    }

    pub fn source(self) -> Source {
        match self {
            ModelKind::Base => Source::Base,
            ModelKind::Ema => Source::Ema,
        }
    }
}

/// A policy network: its spec plus the MLP built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub spec: PolicySpec,
    pub model: MlpModel,
}

impl Policy {
    pub fn new(spec: PolicySpec) -> Self {
        let model = spec.model();
        Self { spec, model }
    }

    pub fn init(&self, seed: u64) -> ParamSet {
        self.model.init(seed)
    }

    pub fn decls(&self) -> Vec<crate::nn::ParamDecl> {
        self.model.decls()
    }
}

/// Network output clamped to the action box.
pub fn predict<P: ParamView<f32>>(policy: &Policy, params: &P, obs: &Observation) -> Action {
    let out = policy.model.mlp.forward_one(params, &policy.spec.net_input(obs));
    Action::from_slice(&out)
}

/// A frozen policy as a rollout controller.
pub struct PolicyController<'a, P> {
    pub policy: &'a Policy,
    pub params: &'a P,
}

impl<P: ParamView<f32>> Controller for PolicyController<'_, P> {
    fn act(&mut self, _state: &SimState, obs: &Observation) -> Action {
        predict(self.policy, self.params, obs)
    }
}

/// All (observation, action) pairs of the given demos in demo order, with
/// observations already mapped to network inputs.
pub fn flatten_pairs(spec: &PolicySpec, demos: &[&Trajectory]) -> (Vec<f32>, Vec<f32>) {
    let mut obs = Vec::new();
    let mut act = Vec::new();
    for d in demos {
        for (o, a) in &d.steps {
            obs.extend_from_slice(&spec.net_input(o));
            act.extend_from_slice(&a.0);
        }
    }
    (obs, act)
}

fn gather(obs: &[f32], act: &[f32], idx: &[usize]) -> DenseBatch {
    let mut inputs = Vec::with_capacity(idx.len() * OBS_DIM);
    let mut targets = Vec::with_capacity(idx.len() * ACTION_DIM);
    for &i in idx {
        inputs.extend_from_slice(&obs[i * OBS_DIM..(i + 1) * OBS_DIM]);
        targets.extend_from_slice(&act[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
    }
    DenseBatch {
        inputs,
        rows: idx.len(),
        targets: Targets::Regression(targets),
    }
}

/// Mean-squared error of `params` over every pair in `demos`.
pub fn dataset_loss<P: ParamView<f32>>(policy: &Policy, params: &P, demos: &[&Trajectory]) -> f64 {
    let (obs, act) = flatten_pairs(&policy.spec, demos);
    let rows = obs.len() / OBS_DIM;
    let batch = DenseBatch {
        inputs: obs,
        rows,
        targets: Targets::Regression(act),
    };
    policy.model.loss::<f32, _>(params, &batch)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mini-batch loss of every optimizer step.
    pub losses: Vec<f64>,
}

/// Runs exactly `steps` Adam updates on mini-batches drawn from the pooled
/// pairs, reshuffled from `shuffle_seed` at every pass (the last partial
/// batch of a pass is kept), and applies the EMA update after each step.
/// The shadow is created on the first call that trains anything.
pub fn train_bc(
    policy: &Policy,
    params: &mut ParamSet,
    demos: &[&Trajectory],
    steps: usize,
    tau: f64,
    shuffle_seed: u64,
) -> Result<TrainLog, NnError> {
    if steps == 0 {
        return Ok(TrainLog::default());
    }
    let spec = &policy.spec;
    let (obs, act) = flatten_pairs(spec, demos);
    let n = obs.len() / OBS_DIM;
    if n == 0 {
        return Err(NnError::EmptyBatch);
    }
    if params.ema.is_none() {
        init_ema(params);
    }
    let batch_size = spec.batch.max(1);
    let mut rng = SplitMix64::new(shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut log = TrainLog { losses: Vec::with_capacity(steps) };
    for s in 0..steps {
        if cursor >= n {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + batch_size).min(n);
        let batch = gather(&obs, &act, &order[cursor..end]);
        cursor = end;
        let (loss, grads) = policy.model.checked_loss_and_grads(params, &batch, s)?;
        let cfg = AdamConfig::with_lr(spec.lr * spec.schedule.factor(s, steps));
        adam_step(params, &grads, &cfg);
        ema_update(params, tau);
        log.losses.push(loss);
    }
    Ok(log)
}

/// Success counts of one model on the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SRReport {
    pub model: ModelKind,
    pub round: u32,
    pub episodes: usize,
    pub successes: Vec<usize>,
}

impl SRReport {
    pub fn task_sr(&self, task_id: usize) -> f64 {
        self.successes[task_id] as f64 / self.episodes as f64
    }

    pub fn per_task_sr(&self) -> Vec<f64> {
        (0..self.successes.len()).map(|t| self.task_sr(t)).collect()
    }

    pub fn mean_sr(&self) -> f64 {
        let rates = self.per_task_sr();
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

/// Successes per task of `episodes` augmented-init rollouts on the fixed
/// evaluation seeds. `make` builds a fresh controller per episode.
pub fn evaluate_with<C, F>(suite: &TaskSuite, episodes: usize, aug: &EnvAugConfig, make: F) -> Vec<usize>
where
    C: Controller,
    F: Fn(&Task, u64) -> C + Sync,
{
    assert!(episodes >= 1, "need at least one evaluation episode");
    let jobs: Vec<(usize, usize)> = (0..suite.tasks.len()).flat_map(|t| (0..episodes).map(move |i| (t, i))).collect();
    let outcomes: Vec<bool> = jobs
        .par_iter()
        .map(|&(t, i)| {
            let task = &suite.tasks[t];
            let seed = suite.eval_seed(task.task_id, i);
            let mut c = make(task, seed);
            rollout(&mut c, task, seed, aug, Source::Base, u32::MAX).success
        })
        .collect();
    let mut counts = vec![0; suite.tasks.len()];
    for (&(t, _), ok) in jobs.iter().zip(outcomes) {
        counts[t] += ok as usize;
    }
    counts
}

/// Evaluates a frozen policy. Parameters are only read.
pub fn evaluate<P: ParamView<f32> + Sync>(
    policy: &Policy,
    params: &P,
    suite: &TaskSuite,
    episodes: usize,
    delta: f32,
    kind: ModelKind,
    round: u32,
) -> SRReport {
    let aug = EnvAugConfig { enabled: true, delta };
    let successes = evaluate_with(suite, episodes, &aug, |_, _| PolicyController { policy, params });
    SRReport {
        model: kind,
        round,
        episodes,
        successes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microsim::{ExpertController, SimState, Task};
    use crate::nn::Tensor;

    fn fake_demo(obs: [f32; OBS_DIM], act: [f32; 3]) -> Trajectory {
        Trajectory {
            task_id: 0,
            env_seed: 0,
            env_augmented: false,
            source: Source::Expert,
            round: 0,
            rollout_idx: 0,
            init_state: SimState::canonical(),
            steps: vec![(Observation(obs), Action(act))],
            first_frame: vec![],
            success: true,
        }
    }

    #[test]
    fn zero_params_predict_zero() {
        let policy = Policy::new(PolicySpec::default());
        let p = ParamSet::zeros_like(&policy.decls());
        let obs = Observation::of(&SimState::canonical(), &Task::new(3));
        assert_eq!(predict(&policy, &p, &obs).0, [0.0; 3]);
    }

    #[test]
    fn output_is_clamped() {
        // single linear layer whose bias alone sets the output
        let policy = Policy::new(PolicySpec {
            hidden: vec![],
            ..PolicySpec::default()
        });
        let mut p = ParamSet::zeros_like(&policy.decls());
        p.tensors[1] = Tensor::from_vec(&[3], vec![1.7, -0.2, -3.0]);
        let obs = Observation::of(&SimState::canonical(), &Task::new(0));
        assert_eq!(predict(&policy, &p, &obs).0, [1.0, -0.2, -1.0]);
    }

    #[test]
    fn zero_steps_leave_params_untouched() {
        let policy = Policy::new(PolicySpec::default());
        let mut p = policy.init(5);
        let before = p.clone();
        let d = fake_demo([0.1; OBS_DIM], [0.5, -0.5, 1.0]);
        train_bc(&policy, &mut p, &[&d], 0, 0.999, 1).unwrap();
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn overfits_a_single_pair() {
        let policy = Policy::new(PolicySpec::default());
        let mut p = policy.init(11);
        let obs = Observation::of(&SimState::canonical(), &Task::new(5));
        let target = [0.4, -0.7, 0.9];
        let d = fake_demo(obs.0, target);
        train_bc(&policy, &mut p, &[&d], 2000, 0.999, 3).unwrap();
        let out = predict(&policy, &p, &obs).0;
        for k in 0..3 {
            assert!((out[k] - target[k]).abs() < 0.02, "{out:?}");
        }
    }

    #[test]
    fn empty_demo_set_is_rejected() {
        let policy = Policy::new(PolicySpec::default());
        let mut p = policy.init(1);
        assert!(matches!(train_bc(&policy, &mut p, &[], 5, 0.9, 0), Err(NnError::EmptyBatch)));
    }

    #[test]
    fn shadow_follows_parameter_history() {
        // replay the recurrence from the parameters logged after every step
        let policy = Policy::new(PolicySpec {
            hidden: vec![8],
            schedule: LrSchedule::Constant,
            ..PolicySpec::default()
        });
        let mut p = policy.init(2);
        let d = fake_demo([0.3; OBS_DIM], [0.2, 0.1, -1.0]);
        let tau = 0.9;
        let mut shadow: Vec<Vec<f64>> = p.to_real();
        for s in 0..20 {
            train_bc(&policy, &mut p, &[&d], 1, tau, s).unwrap();
            for (sh, t) in shadow.iter_mut().zip(&p.tensors) {
                for (v, &w) in sh.iter_mut().zip(&t.data) {
                    *v = tau * *v + (1.0 - tau) * w as f64;
                }
            }
        }
        let ema = p.ema.as_ref().unwrap();
        for (sh, t) in shadow.iter().zip(ema) {
            for (a, &b) in sh.iter().zip(&t.data) {
                assert!((a - b as f64).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn cosine_schedule_ends_near_zero() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.factor(0, 100), 1.0);
        assert!((s.factor(50, 100) - 0.5).abs() < 1e-12);
        assert!(s.factor(99, 100) < 1e-3);
        assert_eq!(LrSchedule::Constant.factor(99, 100), 1.0);
    }

    #[test]
    fn expert_as_policy_is_perfect_and_zero_policy_fails() {
        let suite = TaskSuite::new(9);
        let aug = EnvAugConfig::default();
        let counts = evaluate_with(&suite, 5, &aug, |t, s| ExpertController::new(*t, s));
        assert!(counts.iter().all(|&c| c == 5));

        let policy = Policy::new(PolicySpec::default());
        let zero = ParamSet::zeros_like(&policy.decls());
        let r = evaluate(&policy, &zero, &suite, 3, 0.05, ModelKind::Base, 0);
        assert_eq!(r.mean_sr(), 0.0);
    }

    #[test]
    fn evaluation_is_repeatable_and_read_only() {
        let policy = Policy::new(PolicySpec::default());
        let p = policy.init(4);
        let before = p.clone();
        let suite = TaskSuite::new(1);
        let a = evaluate(&policy, &p, &suite, 3, 0.05, ModelKind::Base, 0);
        let b = evaluate(&policy, &p, &suite, 3, 0.05, ModelKind::Base, 0);
        assert_eq!(a, b);
        assert!(p.bit_eq(&before));
        let m = a.mean_sr();
        assert!((0.0..=1.0).contains(&m));
    }
}
