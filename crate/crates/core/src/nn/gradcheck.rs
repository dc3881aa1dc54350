//! Central-difference verification of the analytic gradients.
//!
//! Runs the generic layer code in `f64` on small random instances and
//! compares every parameter's analytic derivative with
//! `(f(w + eps) - f(w - eps)) / (2 eps)`. The error of a tensor is
//! `max |analytic - numeric| / max(|analytic|, |numeric|)` over its
//! elements; the report carries the worst tensor.

use serde::Serialize;

use super::{Activation, DenseBatch, MlpModel, Model, SeqBatch, SeqExample, SeqModel, SeqModelSpec, Targets};
use crate::rng::{sm64, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GradCheckCase {
    DenseMse,
    DenseCrossEntropy,
    LstmCrossEntropy,
    LstmMse,
    SequenceOnlyCrossEntropy,
}

impl GradCheckCase {
    pub const ALL: [GradCheckCase; 5] = [
        GradCheckCase::DenseMse,
        GradCheckCase::DenseCrossEntropy,
        GradCheckCase::LstmCrossEntropy,
        GradCheckCase::LstmMse,
        GradCheckCase::SequenceOnlyCrossEntropy,
    ];
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub case: GradCheckCase,
    pub seed: u64,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
}

fn numeric<M: Model>(model: &M, batch: &M::Batch<'_>, params: &mut Vec<Vec<f64>>, k: usize, i: usize, eps: f64) -> f64 {
    let orig = params[k][i];
    params[k][i] = orig + eps;
    let up = model.loss::<f64, _>(&*params, batch);
    params[k][i] = orig - eps;
    let down = model.loss::<f64, _>(&*params, batch);
    params[k][i] = orig;
    (up - down) / (2.0 * eps)
}

/// True when some coordinate's difference quotient changes noticeably
/// between `eps` and `eps / 2`, i.e. a relu switches inside the stencil.
fn straddles_kink<M: Model>(model: &M, batch: &M::Batch<'_>, params: &mut Vec<Vec<f64>>, eps: f64) -> bool {
    for k in 0..params.len() {
        for i in 0..params[k].len() {
            let a = numeric(model, batch, params, k, i, eps);
            let b = numeric(model, batch, params, k, i, eps / 2.0);
            if (a - b).abs() > 1e-5 * a.abs().max(b.abs()).max(1e-3) {
                return true;
            }
        }
    }
    false
}

fn compare<M: Model>(model: &M, batch: &M::Batch<'_>, seed: u64, eps: f64, case: GradCheckCase) -> GradCheckReport {
    let decls = model.decls();
    let base: Vec<Vec<f64>> = model.init(sm64(seed)).to_real();
    // lift biases off zero so every term is exercised; redraw the lift
    // when the stencil would cross a relu kink
    let mut rng = SplitMix64::new(sm64(seed ^ 0xb1a5));
    let mut params = base.clone();
    for _ in 0..16 {
        params = base.clone();
        for (d, p) in decls.iter().zip(params.iter_mut()) {
            if d.shape.len() == 1 {
                p.iter_mut().for_each(|v| *v += rng.symmetric(0.3) as f64);
            }
        }
        if !straddles_kink(model, batch, &mut params, eps) {
            break;
        }
    }
    let (_, analytic) = model.loss_and_grads::<f64, _>(&params, batch);
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (k, d) in decls.iter().enumerate() {
        let mut max_diff = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..params[k].len() {
            let n = numeric(model, batch, &mut params, k, i, eps);
            let a = analytic[k][i];
            max_diff = max_diff.max((a - n).abs());
            scale = scale.max(a.abs()).max(n.abs());
            checked += 1;
        }
        let rel = if scale > 0.0 { max_diff / scale } else { 0.0 };
        if rel >= worst.0 {
            worst = (rel, d.name.clone());
        }
    }
    GradCheckReport {
        case,
        seed,
        max_rel_error: worst.0,
        worst_tensor: worst.1,
        checked,
    }
}

fn random_vec(rng: &mut SplitMix64, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.symmetric(scale)).collect()
}

fn seq_examples(rng: &mut SplitMix64, spec: &SeqModelSpec, lens: &[usize]) -> Vec<SeqExample> {
    lens.iter()
        .map(|&n| SeqExample {
            frame: (0..spec.frame_dim).map(|_| rng.next_f32()).collect(),
            actions: (0..n).map(|_| [rng.symmetric(1.0), rng.symmetric(1.0), rng.symmetric(1.0)]).collect(),
        })
        .collect()
}

/// Maximum relative gradient error for one small random instance.
pub fn grad_check(case: GradCheckCase, seed: u64, eps: f64) -> GradCheckReport {
    let mut rng = SplitMix64::new(sm64(seed ^ 0x6772_6164));
    match case {
        GradCheckCase::DenseMse | GradCheckCase::DenseCrossEntropy => {
            let classes = 3;
            let model = MlpModel::new(&[5, 7, 6, classes], Activation::Relu);
            let rows = 6;
            let inputs = random_vec(&mut rng, rows * 5, 1.0);
            let targets = if case == GradCheckCase::DenseMse {
                Targets::Regression(random_vec(&mut rng, rows * classes, 1.0))
            } else {
                Targets::Labels((0..rows).map(|_| rng.below(classes)).collect())
            };
            let batch = DenseBatch { inputs, rows, targets };
            compare(&model, &batch, seed, eps, case)
        }
        GradCheckCase::LstmCrossEntropy | GradCheckCase::LstmMse | GradCheckCase::SequenceOnlyCrossEntropy => {
            let spec = SeqModelSpec {
                frame_dim: 6,
                image_embed: 4,
                action_dim: 3,
                action_embed: 3,
                hidden: 5,
                layers: 2,
                classes: 3,
                sequence_only: case == GradCheckCase::SequenceOnlyCrossEntropy,
            };
            let model = SeqModel::new(spec);
            let examples = seq_examples(&mut rng, &spec, &[2, 3, 1, 2]);
            let items: Vec<&SeqExample> = examples.iter().collect();
            let targets = if case == GradCheckCase::LstmMse {
                Targets::Regression(random_vec(&mut rng, items.len() * spec.classes, 1.0))
            } else {
                Targets::Labels((0..items.len()).map(|_| rng.below(spec.classes)).collect())
            };
            let batch = SeqBatch { items, targets };
            compare(&model, &batch, seed, eps, case)
        }
    }
}
