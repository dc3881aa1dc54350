//! Deterministic 2-D tabletop pick-and-place world.
//!
//! Four blocks, two drop zones and a single gripper living in the unit
//! square. Dynamics are purely kinematic: the end effector moves by a
//! clamped displacement, a close command grabs the nearest free block in
//! reach, and a held block rides with the gripper until released.

mod expert;
mod render;
mod rollout;

pub use expert::{scripted_expert_action, ExpertController, EXPERT_GAIN, EXPERT_NOISE, EXPERT_SPEED, PREGRASP_RADIUS};
pub use render::{render_frame, Frame, FRAME_CELLS, FRAME_LEN};
pub use rollout::{replay_check, rollout, Controller, FnController, Source, Trajectory};

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

pub const NUM_BLOCKS: usize = 4;
pub const NUM_ZONES: usize = 2;
/// Number of tasks L: every (block, zone) pair.
pub const NUM_TASKS: usize = NUM_BLOCKS * NUM_ZONES;
pub const OBS_DIM: usize = 4 + 2 * NUM_BLOCKS + NUM_TASKS;
pub const ACTION_DIM: usize = 3;

pub const HORIZON: usize = 80;
pub const MAX_STEP: f32 = 0.05;
pub const GRASP_RADIUS: f32 = 0.03;
pub const SUCCESS_RADIUS: f64 = 0.08;

pub const EE_START: [f32; 2] = [0.5, 0.1];
pub const CANONICAL_BLOCKS: [[f32; 2]; NUM_BLOCKS] = [[0.3, 0.3], [0.5, 0.3], [0.7, 0.3], [0.5, 0.5]];
pub const ZONE_CENTERS: [[f32; 2]; NUM_ZONES] = [[0.2, 0.8], [0.8, 0.8]];

/// Perturbed object coordinates stay inside this band.
const AUG_CLIP: (f32, f32) = (0.05, 0.95);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: usize,
    pub target_block: usize,
    pub target_zone: usize,
}

impl Task {
    pub fn new(task_id: usize) -> Self {
        assert!(task_id < NUM_TASKS, "task id {task_id} out of range");
        Self {
            task_id,
            target_block: task_id / NUM_ZONES,
            target_zone: task_id % NUM_ZONES,
        }
    }

    pub fn name(&self) -> String {
        let zone = ["A", "B"][self.target_zone];
        format!("place block {} in zone {}", self.target_block, zone)
    }

    pub fn all() -> Vec<Task> {
        (0..NUM_TASKS).map(Task::new).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ee_pos: [f32; 2],
    pub grip_closed: bool,
    pub held_block: Option<usize>,
    pub block_pos: [[f32; 2]; NUM_BLOCKS],
    pub step_count: usize,
}

impl SimState {
    pub fn canonical() -> Self {
        Self {
            ee_pos: EE_START,
            grip_closed: false,
            held_block: None,
            block_pos: CANONICAL_BLOCKS,
            step_count: 0,
        }
    }

    /// Checks the structural invariants: everything inside the workspace,
    /// a held block implies a closed gripper and sits on the end effector.
    pub fn is_consistent(&self) -> bool {
        let inside = |p: &[f32; 2]| p.iter().all(|v| (0.0..=1.0).contains(v));
        if !inside(&self.ee_pos) || !self.block_pos.iter().all(inside) {
            return false;
        }
        match self.held_block {
            Some(b) => b < NUM_BLOCKS && self.grip_closed && self.block_pos[b] == self.ee_pos,
            None => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f32; OBS_DIM]);

impl Observation {
    pub fn of(state: &SimState, task: &Task) -> Self {
        let mut v = [0.0f32; OBS_DIM];
        v[0] = state.ee_pos[0];
        v[1] = state.ee_pos[1];
        v[2] = if state.grip_closed { 1.0 } else { 0.0 };
        v[3] = if state.held_block.is_some() { 1.0 } else { 0.0 };
        for (b, p) in state.block_pos.iter().enumerate() {
            v[4 + 2 * b] = p[0];
            v[5 + 2 * b] = p[1];
        }
        v[4 + 2 * NUM_BLOCKS + task.task_id] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Gripper command decoded from the third action component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripCommand {
    Close,
    Open,
    Hold,
}

/// `(dx, dy, g)`, each component clamped to [-1, 1] on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f32; ACTION_DIM]);

impl Action {
    pub fn new(dx: f32, dy: f32, g: f32) -> Self {
        Self([clamp_unit(dx), clamp_unit(dy), clamp_unit(g)])
    }

    pub fn from_slice(v: &[f32]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn zero() -> Self {
        Self([0.0; ACTION_DIM])
    }

    pub fn grip(&self) -> GripCommand {
        if self.0[2] > 0.5 {
            GripCommand::Close
        } else if self.0[2] < -0.5 {
            GripCommand::Open
        } else {
            GripCommand::Hold
        }
    }
}

fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvAugConfig {
    pub enabled: bool,
    pub delta: f32,
}

impl Default for EnvAugConfig {
    fn default() -> Self {
        Self { enabled: true, delta: 0.05 }
    }
}

impl EnvAugConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, delta: 0.05 }
    }
}

/// Random initialization of one object: horizontal offsets uniform in
/// [-delta, delta], vertical coordinate passed through untouched.
pub fn perturb_position(pos: [f32; 3], delta: f32, rng: &mut SplitMix64) -> [f32; 3] {
    let x = (pos[0] + rng.symmetric(delta)).clamp(AUG_CLIP.0, AUG_CLIP.1);
    let y = (pos[1] + rng.symmetric(delta)).clamp(AUG_CLIP.0, AUG_CLIP.1);
    [x, y, pos[2]]
}

/// Initial state for a rollout. Only block positions are perturbed; the
/// result depends on nothing but `(task, env_seed, aug)`.
pub fn reset_with_aug(_task: &Task, env_seed: u64, aug: &EnvAugConfig) -> SimState {
    let mut state = SimState::canonical();
    if aug.enabled {
        let mut rng = SplitMix64::new(env_seed);
        for p in state.block_pos.iter_mut() {
            let moved = perturb_position([p[0], p[1], 0.0], aug.delta, &mut rng);
            *p = [moved[0], moved[1]];
        }
    }
    state
}

fn dist2(a: [f32; 2], b: [f32; 2]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Advances the world by one action. Pure: the input state is not touched.
pub fn step(state: &SimState, action: &Action) -> SimState {
    debug_assert!(state.step_count < HORIZON);
    let a = Action::new(action.0[0], action.0[1], action.0[2]);
    let mut next = state.clone();
    next.ee_pos = [
        (state.ee_pos[0] + MAX_STEP * a.0[0]).clamp(0.0, 1.0),
        (state.ee_pos[1] + MAX_STEP * a.0[1]).clamp(0.0, 1.0),
    ];
    // A close command grasps the nearest block in reach whenever nothing is
    // held, whether or not the jaws were already shut.
    match a.grip() {
        GripCommand::Close if state.held_block.is_none() => {
            next.grip_closed = true;
            let r2 = GRASP_RADIUS * GRASP_RADIUS;
            next.held_block = (0..NUM_BLOCKS)
                .map(|b| (b, dist2(next.block_pos[b], next.ee_pos)))
                .filter(|&(_, d)| d <= r2)
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .map(|(b, _)| b);
        }
        GripCommand::Open => {
            next.grip_closed = false;
            next.held_block = None;
        }
        _ => {}
    }
    if let Some(b) = next.held_block {
        next.block_pos[b] = next.ee_pos;
    }
    next.step_count += 1;
    next
}

/// Target block released within the closed success ball around its zone.
pub fn is_success(state: &SimState, task: &Task) -> bool {
    if state.held_block == Some(task.target_block) {
        return false;
    }
    let p = state.block_pos[task.target_block];
    let z = ZONE_CENTERS[task.target_zone];
    let dx = p[0] as f64 - z[0] as f64;
    let dy = p[1] as f64 - z[1] as f64;
    (dx * dx + dy * dy).sqrt() <= SUCCESS_RADIUS
}

/// The benchmark: task definitions plus fixed evaluation seeds.
#[derive(Debug, Clone)]
pub struct TaskSuite {
    pub tasks: Vec<Task>,
    pub master_seed: u64,
}

impl TaskSuite {
    pub fn new(master_seed: u64) -> Self {
        Self { tasks: Task::all(), master_seed }
    }

    pub fn eval_seed(&self, task_id: usize, idx: usize) -> u64 {
        crate::rng::derive_seed(self.master_seed, crate::rng::EVAL_ROUND, crate::rng::ModelTag::Eval, task_id, idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_without_aug_is_canonical() {
        for seed in [0, 1, 42, u64::MAX] {
            let s = reset_with_aug(&Task::new(3), seed, &EnvAugConfig::disabled());
            assert_eq!(s, SimState::canonical());
        }
    }

    #[test]
    fn reset_with_aug_stays_within_delta() {
        let aug = EnvAugConfig { enabled: true, delta: 0.05 };
        for seed in 0..200u64 {
            let s = reset_with_aug(&Task::new(0), seed, &aug);
            for (p, c) in s.block_pos.iter().zip(CANONICAL_BLOCKS.iter()) {
                assert!((p[0] - c[0]).abs() <= 0.05 + 1e-6);
                assert!((p[1] - c[1]).abs() <= 0.05 + 1e-6);
            }
            assert_eq!(s.ee_pos, EE_START);
        }
        let s = reset_with_aug(&Task::new(0), 5, &aug);
        assert!((0.25..=0.35).contains(&s.block_pos[0][0]));
        assert!((0.25..=0.35).contains(&s.block_pos[0][1]));
    }

    #[test]
    fn perturbation_preserves_vertical_coordinate() {
        let mut rng = SplitMix64::new(11);
        for z in [0.0f32, 0.25, -3.5, 1e-7] {
            let p = perturb_position([0.5, 0.5, z], 0.05, &mut rng);
            assert_eq!(p[2].to_bits(), z.to_bits());
        }
    }

    #[test]
    fn reset_golden_seed_42() {
        // Frozen from an independent float32 evaluation of the splitmix64 stream
        // for env seed 42, delta 0.05.
        let s = reset_with_aug(&Task::new(0), 42, &EnvAugConfig { enabled: true, delta: 0.05 });
        let mut rng = SplitMix64::new(42);
        let mut expect = CANONICAL_BLOCKS;
        for p in expect.iter_mut() {
            p[0] = (p[0] + 0.05 * (2.0 * rng.next_f32() - 1.0)).clamp(0.05, 0.95);
            p[1] = (p[1] + 0.05 * (2.0 * rng.next_f32() - 1.0)).clamp(0.05, 0.95);
        }
        assert_eq!(s.block_pos, expect);
        let golden: [[u32; 2]; 4] = [
            [0x3ea5_f7d7, 0x3e88_2ffb],
            [0x3ef4_aa15, 0x3e91_9f61],
            [0x3f27_5fa2, 0x3eac_740a],
            [0x3ef1_9515, 0x3f07_b238],
        ];
        let bits: Vec<[u32; 2]> = s.block_pos.iter().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect();
        assert_eq!(bits, golden.to_vec());
    }

    #[test]
    fn max_step_move() {
        let mut s = SimState::canonical();
        s.ee_pos = [0.5, 0.5];
        let n = step(&s, &Action::new(1.0, 0.0, 0.0));
        assert!((n.ee_pos[0] - 0.55).abs() < 1e-7);
        assert_eq!(n.ee_pos[1], 0.5);
        assert_eq!(n.step_count, 1);
        // over-range commands clamp to the max step
        let n2 = step(&s, &Action([7.0, 0.0, 0.0]));
        assert_eq!(n, n2);
    }

    #[test]
    fn workspace_clip() {
        let mut s = SimState::canonical();
        s.ee_pos = [0.99, 0.5];
        let n = step(&s, &Action::new(1.0, 0.0, 0.0));
        assert_eq!(n.ee_pos, [1.0, 0.5]);
    }

    #[test]
    fn close_within_grasp_radius_attaches() {
        let mut s = SimState::canonical();
        s.ee_pos = [0.3, 0.32];
        let n = step(&s, &Action::new(0.0, 0.0, 1.0));
        assert!(n.grip_closed);
        assert_eq!(n.held_block, Some(0));
        assert_eq!(n.block_pos[0], n.ee_pos);
        assert!(n.is_consistent());
    }

    #[test]
    fn close_out_of_reach_grabs_nothing() {
        let mut s = SimState::canonical();
        s.ee_pos = [0.3, 0.34];
        let n = step(&s, &Action::new(0.0, 0.0, 1.0));
        assert!(n.grip_closed);
        assert_eq!(n.held_block, None);
        // still closing on arrival picks the block up
        let m = step(&n, &Action::new(0.0, -0.4, 1.0));
        assert_eq!(m.held_block, Some(0));
        // holding without a close command does not
        let h = step(&n, &Action::new(0.0, -0.4, 0.0));
        assert_eq!(h.held_block, None);
    }

    #[test]
    fn held_block_tracks_and_release_in_place() {
        let mut s = SimState::canonical();
        s.ee_pos = [0.3, 0.3];
        s = step(&s, &Action::new(0.0, 0.0, 1.0));
        for _ in 0..5 {
            s = step(&s, &Action::new(-0.4, 1.0, 0.0));
            assert_eq!(s.block_pos[0], s.ee_pos);
        }
        let at = s.ee_pos;
        s = step(&s, &Action::new(0.0, 0.0, -1.0));
        assert!(!s.grip_closed);
        assert_eq!(s.held_block, None);
        assert_eq!(s.block_pos[0], at);
        s = step(&s, &Action::new(1.0, 0.0, 0.0));
        assert_eq!(s.block_pos[0], at);
    }

    #[test]
    fn success_predicate() {
        let task = Task::new(0); // block 0 -> zone A
        let mut s = SimState::canonical();
        s.block_pos[0] = ZONE_CENTERS[0];
        assert!(is_success(&s, &task));

        s.block_pos[0] = [0.2 + 0.08, 0.8];
        assert!(is_success(&s, &task), "distance exactly at the radius counts");
        s.block_pos[0] = [0.2 + 0.081, 0.8];
        assert!(!is_success(&s, &task));

        s.block_pos[0] = ZONE_CENTERS[0];
        s.ee_pos = ZONE_CENTERS[0];
        s.grip_closed = true;
        s.held_block = Some(0);
        assert!(!is_success(&s, &task), "held block does not count");
    }

    #[test]
    fn observation_layout() {
        let s = SimState::canonical();
        let o = Observation::of(&s, &Task::new(5));
        let onehot = &o.0[12..20];
        assert_eq!(onehot.iter().sum::<f32>(), 1.0);
        assert_eq!(onehot[5], 1.0);
        assert_eq!(&o.0[0..4], &[0.5, 0.1, 0.0, 0.0]);
        assert!(o.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn task_layout() {
        let t = Task::new(7);
        assert_eq!((t.target_block, t.target_zone), (3, 1));
        assert_eq!(Task::all().len(), 8);
    }
}
