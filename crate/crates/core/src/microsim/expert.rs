use super::{Action, Controller, Observation, SimState, Task, GRASP_RADIUS, MAX_STEP, ZONE_CENTERS};
use crate::rng::{labels, sm64, SplitMix64};

/// Half-width of the uniform noise added to each commanded displacement.
pub const EXPERT_NOISE: f32 = 0.2;
/// Fraction of the remaining distance covered per step, before the cap.
pub const EXPERT_GAIN: f32 = 0.5;
/// Largest commanded displacement component before noise.
pub const EXPERT_SPEED: f32 = 0.7;
/// The expert starts closing once this close to the target block; the
/// block attaches when the gripper gets within the grasp radius.
pub const PREGRASP_RADIUS: f32 = 0.15;

fn toward(from: [f32; 2], to: [f32; 2]) -> [f32; 2] {
    let k = EXPERT_GAIN / MAX_STEP;
    [
        ((to[0] - from[0]) * k).clamp(-EXPERT_SPEED, EXPERT_SPEED),
        ((to[1] - from[1]) * k).clamp(-EXPERT_SPEED, EXPERT_SPEED),
    ]
}

fn dist2(a: [f32; 2], b: [f32; 2]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn within(a: [f32; 2], b: [f32; 2], r: f32) -> bool {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy <= r * r
}

/// Waypoint controller: reach the target block, close, carry it to the
/// target zone, open. The gripper is open on the way in and commands close
/// inside the pre-grasp radius (only when the target is the nearest block,
/// so nothing else can attach); it stays closed while carrying. A wrong
/// block, should one ever be held, is dropped.
pub fn scripted_expert_action(state: &SimState, task: &Task, rng: &mut SplitMix64) -> Action {
    let ee = state.ee_pos;
    let (goal, grip) = match state.held_block {
        Some(b) if b == task.target_block => {
            let zone = ZONE_CENTERS[task.target_zone];
            (zone, if within(ee, zone, GRASP_RADIUS) { -1.0 } else { 1.0 })
        }
        Some(_) => (ee, -1.0),
        None => {
            let block = state.block_pos[task.target_block];
            let nearest = (0..state.block_pos.len())
                .min_by(|&a, &b| dist2(ee, state.block_pos[a]).total_cmp(&dist2(ee, state.block_pos[b])))
                .unwrap();
            let close = nearest == task.target_block && within(ee, block, PREGRASP_RADIUS);
            (block, if close { 1.0 } else { -1.0 })
        }
    };
    let d = toward(ee, goal);
    let nx = rng.symmetric(EXPERT_NOISE);
    let ny = rng.symmetric(EXPERT_NOISE);
    Action::new(d[0] + nx, d[1] + ny, grip)
}

/// The scripted expert packaged as a rollout controller. Its noise stream
/// is derived from the rollout's env seed.
pub struct ExpertController {
    task: Task,
    rng: SplitMix64,
}

impl ExpertController {
    pub fn new(task: Task, env_seed: u64) -> Self {
        Self {
            task,
            rng: SplitMix64::new(sm64(env_seed ^ labels::EXPERT_NOISE)),
        }
    }
}

impl Controller for ExpertController {
    fn act(&mut self, state: &SimState, _obs: &Observation) -> Action {
        scripted_expert_action(state, &self.task, &mut self.rng)
    }
}
