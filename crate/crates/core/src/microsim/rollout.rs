use serde::{Deserialize, Serialize};

use super::{is_success, render_frame, reset_with_aug, step, Action, EnvAugConfig, Frame, Observation, SimState, Task, HORIZON};

/// Anything that can drive the gripper. Learned policies only look at the
/// observation; the scripted expert reads the state directly.
pub trait Controller {
    fn act(&mut self, state: &SimState, obs: &Observation) -> Action;
}

/// Adapter for plain observation-to-action closures.
pub struct FnController<F>(pub F);

impl<F: FnMut(&Observation) -> Action> Controller for FnController<F> {
    fn act(&mut self, _state: &SimState, obs: &Observation) -> Action {
        (self.0)(obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Expert,
    Base,
    Ema,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Expert => "expert",
            Source::Base => "base",
            Source::Ema => "ema",
        }
    }
}

/// One recorded episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: usize,
    pub env_seed: u64,
    pub env_augmented: bool,
    pub source: Source,
    pub round: u32,
    pub rollout_idx: u32,
    pub init_state: SimState,
    pub steps: Vec<(Observation, Action)>,
    pub first_frame: Frame,
    pub success: bool,
}

impl Trajectory {
    pub fn with_index(mut self, idx: usize) -> Self {
        self.rollout_idx = idx as u32;
        self
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> + '_ {
        self.steps.iter().map(|(_, a)| a)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Ordering key used to break ties deterministically.
    pub fn order_key(&self) -> (Source, u32, usize, u32) {
        (self.source, self.round, self.task_id, self.rollout_idx)
    }

    pub fn demo_id(&self) -> String {
        format!("{}-r{}-t{}-i{}", self.source.as_str(), self.round, self.task_id, self.rollout_idx)
    }
}

/// Runs one episode until success or the horizon.
pub fn rollout<C: Controller + ?Sized>(
    controller: &mut C,
    task: &Task,
    env_seed: u64,
    aug: &EnvAugConfig,
    source: Source,
    round: u32,
) -> Trajectory {
    let init_state = reset_with_aug(task, env_seed, aug);
    let first_frame = render_frame(&init_state);
    let mut state = init_state.clone();
    let mut steps = Vec::with_capacity(HORIZON);
    let mut success = false;
    while state.step_count < HORIZON {
        let obs = Observation::of(&state, task);
        let raw = controller.act(&state, &obs);
        let action = Action::new(raw.0[0], raw.0[1], raw.0[2]);
        state = step(&state, &action);
        steps.push((obs, action));
        if is_success(&state, task) {
            success = true;
            break;
        }
    }
    Trajectory {
        task_id: task.task_id,
        env_seed,
        env_augmented: aug.enabled,
        source,
        round,
        rollout_idx: 0,
        init_state,
        steps,
        first_frame,
        success,
    }
}

/// Re-simulates the stored actions and compares every observation, the
/// first frame and the success flag bit-for-bit.
pub fn replay_check(traj: &Trajectory) -> bool {
    if traj.task_id >= super::NUM_TASKS || traj.steps.len() > HORIZON || !traj.init_state.is_consistent() {
        return false;
    }
    let task = Task::new(traj.task_id);
    let same_bits = |a: &[f32], b: &[f32]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    if !same_bits(&render_frame(&traj.init_state), &traj.first_frame) {
        return false;
    }
    let mut state = traj.init_state.clone();
    for (i, (obs, action)) in traj.steps.iter().enumerate() {
        if state.step_count >= HORIZON {
            return false;
        }
        let regenerated = Observation::of(&state, &task);
        if !same_bits(&regenerated.0, &obs.0) {
            return false;
        }
        state = step(&state, action);
        // an episode ends at its first success
        if is_success(&state, &task) && i + 1 != traj.steps.len() {
            return false;
        }
    }
    is_success(&state, &task) == traj.success
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microsim::{ExpertController, ACTION_DIM};
    use crate::rng::SplitMix64;

    #[test]
    fn zero_policy_runs_full_horizon_and_fails() {
        let task = Task::new(2);
        let mut zero = FnController(|_: &Observation| Action::zero());
        let t = rollout(&mut zero, &task, 3, &EnvAugConfig::default(), Source::Base, 1);
        assert!(!t.success);
        assert_eq!(t.len(), HORIZON);
        assert!(replay_check(&t));
    }

    #[test]
    fn rollouts_are_bit_identical() {
        let task = Task::new(6);
        let aug = EnvAugConfig::default();
        let a = rollout(&mut ExpertController::new(task, 77), &task, 77, &aug, Source::Expert, 0);
        let b = rollout(&mut ExpertController::new(task, 77), &task, 77, &aug, Source::Expert, 0);
        assert_eq!(a, b);
        assert!(a.success);
    }

    #[test]
    fn flipped_action_breaks_replay() {
        let task = Task::new(1);
        let mut t = rollout(&mut ExpertController::new(task, 5), &task, 5, &EnvAugConfig::default(), Source::Expert, 0);
        assert!(replay_check(&t));
        t.steps[0].1 .0[0] = -t.steps[0].1 .0[0];
        assert!(!replay_check(&t));
    }

    #[test]
    fn stored_actions_are_clamped() {
        let task = Task::new(0);
        let mut wild = FnController(|_: &Observation| Action([3.0, -9.0, 0.2]));
        let t = rollout(&mut wild, &task, 0, &EnvAugConfig::disabled(), Source::Base, 1);
        assert!(t.actions().all(|a| a.0.iter().all(|v| (-1.0..=1.0).contains(v))));
        assert!(replay_check(&t));
    }

    #[test]
    fn random_policies_replay() {
        let aug = EnvAugConfig::default();
        for seed in 0..100u64 {
            let task = Task::new((seed % 8) as usize);
            let mut rng = SplitMix64::new(seed);
            let mut noisy = FnController(move |_: &Observation| {
                let mut a = [0.0f32; ACTION_DIM];
                for v in a.iter_mut() {
                    *v = rng.symmetric(1.2);
                }
                Action(a)
            });
            let t = rollout(&mut noisy, &task, seed, &aug, Source::Ema, 2);
            assert!(replay_check(&t), "seed {seed}");
        }
    }
}
