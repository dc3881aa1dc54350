use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, StorageError};
use crate::microsim::{replay_check, Action, Observation, SimState, Source, Trajectory, FRAME_CELLS, HORIZON, NUM_TASKS, OBS_DIM};

/// Tag on the first line of every demo file.
pub const DEMO_FORMAT: &str = "seil-demos/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
}

/// Serialized form of one trajectory. Floats are written in their
/// shortest round-trip form, so decoding restores every bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub demo_id: String,
    pub task_id: usize,
    pub source: Source,
    pub round: u32,
    pub rollout_idx: u32,
    pub env_seed: u64,
    pub env_augmented: bool,
    pub init_state: SimState,
    pub observations: Vec<Vec<f32>>,
    pub actions: Vec<[f32; 3]>,
    /// `[y][x][channel]`
    pub first_frame: Vec<Vec<[f32; 3]>>,
    pub success: bool,
}

impl From<&Trajectory> for DemoRecord {
    fn from(t: &Trajectory) -> Self {
        Self {
            demo_id: t.demo_id(),
            task_id: t.task_id,
            source: t.source,
            round: t.round,
            rollout_idx: t.rollout_idx,
            env_seed: t.env_seed,
            env_augmented: t.env_augmented,
            init_state: t.init_state.clone(),
            observations: t.steps.iter().map(|(o, _)| o.0.to_vec()).collect(),
            actions: t.steps.iter().map(|(_, a)| a.0).collect(),
            first_frame: t
                .first_frame
                .chunks(FRAME_CELLS * 3)
                .map(|row| row.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
                .collect(),
            success: t.success,
        }
    }
}

impl DemoRecord {
    /// Structural checks, without simulation.
    pub fn into_trajectory(self) -> Result<Trajectory, String> {
        if self.task_id >= NUM_TASKS {
            return Err(format!("task_id {} out of range", self.task_id));
        }
        if self.observations.len() != self.actions.len() {
            return Err(format!("{} observations but {} actions", self.observations.len(), self.actions.len()));
        }
        if self.actions.len() > HORIZON {
            return Err(format!("{} steps exceed the horizon", self.actions.len()));
        }
        if self.first_frame.len() != FRAME_CELLS || self.first_frame.iter().any(|r| r.len() != FRAME_CELLS) {
            return Err("first_frame must be 16x16x3".into());
        }
        if !self.init_state.is_consistent() {
            return Err("init_state violates the state invariants".into());
        }
        if self.actions.iter().flatten().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err("action component outside [-1, 1]".into());
        }
        let mut steps = Vec::with_capacity(self.actions.len());
        for (o, a) in self.observations.into_iter().zip(self.actions) {
            let obs: [f32; OBS_DIM] = o.try_into().map_err(|o: Vec<f32>| format!("observation of length {} (expected {OBS_DIM})", o.len()))?;
            steps.push((Observation(obs), Action(a)));
        }
        let t = Trajectory {
            task_id: self.task_id,
            env_seed: self.env_seed,
            env_augmented: self.env_augmented,
            source: self.source,
            round: self.round,
            rollout_idx: self.rollout_idx,
            init_state: self.init_state,
            steps,
            first_frame: self.first_frame.into_iter().flatten().flatten().collect(),
            success: self.success,
        };
        if t.demo_id() != self.demo_id {
            return Err(format!("demo_id '{}' does not match its fields ('{}')", self.demo_id, t.demo_id()));
        }
        Ok(t)
    }
}

pub fn encode_demo(t: &Trajectory) -> String {
    serde_json::to_string(&DemoRecord::from(t)).expect("demo serializes")
}

pub fn decode_demo(line: &str) -> Result<Trajectory, String> {
    let rec: DemoRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    rec.into_trajectory()
}

/// One header line, then one demo per line.
pub fn write_demos(path: &Path, demos: &[Trajectory]) -> Result<(), StorageError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let header = serde_json::to_string(&Header { format: DEMO_FORMAT.into() }).unwrap();
    writeln!(w, "{header}").map_err(io_err(path))?;
    for d in demos {
        writeln!(w, "{}", encode_demo(d)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a demo file. Line numbers in errors count from 1 and include the
/// header. With `verify`, every demo is replayed through the simulator.
pub fn read_demos(path: &Path, verify: bool) -> Result<Vec<Trajectory>, StorageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let bad = |line, msg: String| StorageError::Malformed { line, msg };
    match lines.next() {
        Some((n, l)) => {
            let h: Header = serde_json::from_str(l).map_err(|e| bad(n, format!("bad header: {e}")))?;
            if h.format != DEMO_FORMAT {
                return Err(bad(n, format!("unsupported format '{}'", h.format)));
            }
        }
        None => return Err(bad(1, "empty file".into())),
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let t = decode_demo(l).map_err(|m| bad(n, m))?;
        let id = t.demo_id();
        if !seen.insert(id.clone()) {
            return Err(bad(n, format!("duplicate demo_id '{id}'")));
        }
        if verify && !replay_check(&t) {
            return Err(StorageError::Replay { demo_id: id });
        }
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microsim::{rollout, EnvAugConfig, ExpertController, Task};

    fn demo(task: usize, idx: usize) -> Trajectory {
        let t = Task::new(task);
        let seed = 1000 + idx as u64;
        let mut c = ExpertController::new(t, seed);
        rollout(&mut c, &t, seed, &EnvAugConfig::default(), Source::Expert, 0).with_index(idx)
    }

    #[test]
    fn encode_decode_is_exact() {
        let d = demo(5, 2);
        assert_eq!(decode_demo(&encode_demo(&d)).unwrap(), d);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let demos = vec![demo(0, 0), demo(1, 0), demo(1, 1)];
        write_demos(&p, &demos).unwrap();
        assert_eq!(read_demos(&p, true).unwrap(), demos);

        let text = fs::read_to_string(&p).unwrap();
        let cut = &text[..text.len() - 40];
        fs::write(&p, cut).unwrap();
        match read_demos(&p, false) {
            Err(StorageError::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }

        // duplicate ids
        let dup = vec![demo(0, 0), demo(0, 0)];
        write_demos(&p, &dup).unwrap();
        assert!(matches!(read_demos(&p, false), Err(StorageError::Malformed { line: 3, .. })));
    }

    #[test]
    fn verification_catches_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let mut d = demo(2, 0);
        d.steps[3].1 .0[0] = -d.steps[3].1 .0[0] + 0.5;
        write_demos(&p, &[d.clone()]).unwrap();
        assert!(read_demos(&p, false).is_ok());
        match read_demos(&p, true) {
            Err(StorageError::Replay { demo_id }) => assert_eq!(demo_id, d.demo_id()),
            other => panic!("{other:?}"),
        }
    }
}
