//! Trajectory selector: a task classifier over (first frame, action
//! sequence), frozen after training on the expert demos, whose softmax
//! confidence for a demo's own task ranks recorded demos for selection.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::microsim::{Source, Trajectory, FRAME_LEN, NUM_TASKS};
use crate::nn::{adam_step, softmax, AdamConfig, Model, NnError, ParamSet, ParamView, SeqBatch, SeqExample, SeqModel, SeqModelSpec, Targets};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSpec {
    pub image_embed: usize,
    pub action_embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Drop the first-frame branch and classify from actions alone. Set
    /// from the experiment's `sequence_only_selector` flag.
    #[serde(skip)]
    pub sequence_only: bool,
}

impl Default for SelectorSpec {
    fn default() -> Self {
        Self {
            image_embed: 128,
            action_embed: 64,
            hidden: 256,
            layers: 2,
            epochs: 80,
            batch: 16,
            lr: 1e-3,
            sequence_only: false,
        }
    }
}

impl SelectorSpec {
    pub fn model_spec(&self) -> SeqModelSpec {
        SeqModelSpec {
            frame_dim: FRAME_LEN,
            image_embed: self.image_embed,
            action_dim: 3,
            action_embed: self.action_embed,
            hidden: self.hidden,
            layers: self.layers,
            classes: NUM_TASKS,
            sequence_only: self.sequence_only,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SelectorError {
    #[error("task {0} has no expert demonstrations to train the selector on")]
    MissingTask(usize),
    #[error("demonstration {0} has no steps")]
    EmptyDemo(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// A trained (or freshly initialized) selector.
#[derive(Debug, Clone)]
pub struct Selector {
    pub spec: SelectorSpec,
    pub model: SeqModel,
    pub params: ParamSet,
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectorLog {
    pub epoch_loss: Vec<f64>,
    pub initial_loss: f64,
    pub final_accuracy: f64,
}

pub fn example_of(demo: &Trajectory) -> SeqExample {
    SeqExample {
        frame: demo.first_frame.clone(),
        actions: demo.actions().map(|a| a.0).collect(),
    }
}

impl Selector {
    pub fn new(spec: SelectorSpec, seed: u64) -> Self {
        let model = SeqModel::new(spec.model_spec());
        let params = model.init(seed);
        Self { spec, model, params }
    }

    /// Logits for every example, batched and scored in parallel. The
    /// network sorts each batch internally, so results do not depend on how
    /// the work is split.
    pub fn logits_many(&self, examples: &[SeqExample]) -> Vec<Vec<f32>> {
        let classes = self.model.spec.classes;
        examples
            .par_chunks(32)
            .flat_map_iter(|chunk| {
                let items: Vec<&SeqExample> = chunk.iter().collect();
                let flat = self.model.logits::<f32, _>(&self.params, &items);
                flat.chunks(classes).map(|c| c.to_vec()).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Softmax probability of each demo's own task.
    pub fn confidences(&self, demos: &[&Trajectory]) -> Vec<f64> {
        let ex: Vec<SeqExample> = demos.iter().map(|d| example_of(d)).collect();
        self.logits_many(&ex)
            .iter()
            .zip(demos)
            .map(|(l, d)| softmax(l)[d.task_id])
            .collect()
    }

    /// Fraction of demos whose argmax class is their own task.
    pub fn accuracy(&self, demos: &[&Trajectory]) -> f64 {
        if demos.is_empty() {
            return 0.0;
        }
        let ex: Vec<SeqExample> = demos.iter().map(|d| example_of(d)).collect();
        let hits = self
            .logits_many(&ex)
            .iter()
            .zip(demos)
            .filter(|(l, d)| argmax(l) == d.task_id)
            .count();
        hits as f64 / demos.len() as f64
    }
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Logits of a single (first frame, action sequence) pair.
pub fn selector_logits<P: ParamView<f32>>(model: &SeqModel, params: &P, frame: &[f32], actions: &[[f32; 3]]) -> Vec<f32> {
    assert!(!actions.is_empty(), "selector needs at least one action");
    let ex = SeqExample {
        frame: frame.to_vec(),
        actions: actions.to_vec(),
    };
    model.logits::<f32, _>(params, &[&ex])
}

/// Cross-entropy training on the expert demos, one class per task.
/// Mini-batches are reshuffled every epoch; the last partial batch is kept.
pub fn train_selector(spec: &SelectorSpec, demos: &[&Trajectory], init_seed: u64, shuffle_seed: u64) -> Result<(Selector, SelectorLog), SelectorError> {
    let classes = NUM_TASKS;
    for t in 0..classes {
        if !demos.iter().any(|d| d.task_id == t) {
            return Err(SelectorError::MissingTask(t));
        }
    }
    if let Some(d) = demos.iter().find(|d| d.is_empty()) {
        return Err(SelectorError::EmptyDemo(d.demo_id()));
    }
    let mut sel = Selector::new(spec.clone(), init_seed);
    let examples: Vec<SeqExample> = demos.iter().map(|d| example_of(d)).collect();
    let labels: Vec<usize> = demos.iter().map(|d| d.task_id).collect();
    let full = SeqBatch {
        items: examples.iter().collect(),
        targets: Targets::Labels(labels.clone()),
    };
    let mut log = SelectorLog {
        initial_loss: sel.model.loss::<f32, _>(&sel.params, &full),
        ..SelectorLog::default()
    };
    let cfg = AdamConfig::with_lr(spec.lr);
    let bs = spec.batch.max(1);
    let mut rng = SplitMix64::new(shuffle_seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for _ in 0..spec.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let batch = SeqBatch {
                items: chunk.iter().map(|&i| &examples[i]).collect(),
                targets: Targets::Labels(chunk.iter().map(|&i| labels[i]).collect()),
            };
            let (loss, grads) = sel.model.checked_loss_and_grads(&sel.params, &batch, step)?;
            adam_step(&mut sel.params, &grads, &cfg);
            total += loss * chunk.len() as f64;
            step += 1;
        }
        log.epoch_loss.push(total / examples.len() as f64);
    }
    // the selector is frozen from here on; optimizer moments are not kept
    sel.params.adam = None;
    log.final_accuracy = sel.accuracy(demos);
    Ok((sel, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Uniform,
    Descending,
    Ascending,
    Mixed,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Uniform, Scheme::Descending, Scheme::Ascending, Scheme::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Uniform => "uniform",
            Scheme::Descending => "descending",
            Scheme::Ascending => "ascending",
            Scheme::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown scheme '{s}' (expected uniform, descending, ascending or mixed)"))
    }
}

/// A candidate demo (by index into the caller's list) with its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredDemo {
    pub index: usize,
    pub key: (Source, u32, usize, u32),
    pub task_id: usize,
    pub confidence: f64,
}

impl ScoredDemo {
    pub fn of(index: usize, demo: &Trajectory, confidence: f64) -> Self {
        Self {
            index,
            key: demo.order_key(),
            task_id: demo.task_id,
            confidence,
        }
    }
}

pub fn score_confidence(selector: &Selector, demos: &[&Trajectory]) -> Vec<ScoredDemo> {
    selector
        .confidences(demos)
        .into_iter()
        .enumerate()
        .map(|(i, c)| ScoredDemo::of(i, demos[i], c))
        .collect()
}

fn ascending_order(scored: &[ScoredDemo]) -> Vec<ScoredDemo> {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then(a.key.cmp(&b.key)));
    v
}

fn descending_order(scored: &[ScoredDemo]) -> Vec<ScoredDemo> {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.key.cmp(&b.key)));
    v
}

/// Picks `k` of the candidates. Equal confidences fall back to the
/// ordering key; uniform draws without replacement from `rng` after
/// putting candidates in key order, so the input order never matters.
pub fn select(scored: &[ScoredDemo], k: usize, scheme: Scheme, rng: &mut SplitMix64) -> Vec<ScoredDemo> {
    if k >= scored.len() {
        let mut all = scored.to_vec();
        all.sort_by_key(|d| d.key);
        return all;
    }
    match scheme {
        Scheme::Ascending => ascending_order(scored)[..k].to_vec(),
        Scheme::Descending => descending_order(scored)[..k].to_vec(),
        Scheme::Mixed => {
            let high = k.div_ceil(2);
            let mut out = descending_order(scored)[..high].to_vec();
            for s in ascending_order(scored) {
                if out.len() == k {
                    break;
                }
                if !out.iter().any(|o| o.index == s.index) {
                    out.push(s);
                }
            }
            out
        }
        Scheme::Uniform => {
            let mut v = scored.to_vec();
            v.sort_by_key(|d| d.key);
            for i in 0..k {
                let j = i + rng.below(v.len() - i);
                v.swap(i, j);
            }
            v.truncate(k);
            v
        }
    }
}

/// Applies `select` separately to each task's candidates, tasks in
/// increasing id order.
pub fn select_per_task(scored: &[ScoredDemo], k: usize, scheme: Scheme, rng: &mut SplitMix64) -> Vec<ScoredDemo> {
    let mut tasks: Vec<usize> = scored.iter().map(|s| s.task_id).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let mut out = Vec::new();
    for t in tasks {
        let group: Vec<ScoredDemo> = scored.iter().filter(|s| s.task_id == t).copied().collect();
        out.extend(select(&group, k, scheme, rng));
    }
    out
}
