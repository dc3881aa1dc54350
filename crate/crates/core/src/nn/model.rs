use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, mse};
use super::params::zero_grads;
use super::{Activation, Grads, LossKind, LstmCache, LstmStack, Mlp, MlpCache, NnError, ParamDecl, ParamSet, ParamView, Real};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Row-major `rows x width` regression targets.
    Regression(Vec<f32>),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn kind(&self) -> LossKind {
        match self {
            Targets::Regression(_) => LossKind::Mse,
            Targets::Labels(_) => LossKind::CrossEntropy,
        }
    }
}

fn loss_on<T: Real>(out: &[T], targets: &Targets, width: usize) -> (f64, Vec<T>) {
    match targets {
        Targets::Regression(t) => mse(out, t),
        Targets::Labels(l) => cross_entropy(out, l, width),
    }
}

/// A differentiable network with a fixed parameter layout.
pub trait Model {
    type Batch<'b>;

    fn decls(&self) -> Vec<ParamDecl>;

    fn batch_rows(batch: &Self::Batch<'_>) -> usize;

    fn loss<T: Real, P: ParamView<T>>(&self, params: &P, batch: &Self::Batch<'_>) -> f64;

    fn loss_and_grads<T: Real, P: ParamView<T>>(&self, params: &P, batch: &Self::Batch<'_>) -> (f64, Grads<T>);

    fn init(&self, seed: u64) -> ParamSet {
        ParamSet::init(&self.decls(), seed)
    }

    /// `f32` loss and gradients with the non-finite guard applied.
    fn checked_loss_and_grads(&self, params: &ParamSet, batch: &Self::Batch<'_>, batch_idx: usize) -> Result<(f64, Grads<f32>), NnError> {
        if Self::batch_rows(batch) == 0 {
            return Err(NnError::EmptyBatch);
        }
        let (loss, grads) = self.loss_and_grads::<f32, _>(params, batch);
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(NnError::NonFiniteLoss { loss, batch: batch_idx });
        }
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseBatch {
    pub inputs: Vec<f32>,
    pub rows: usize,
    pub targets: Targets,
}

/// A plain MLP trained on flat inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub mlp: Mlp,
}

impl MlpModel {
    pub fn new(dims: &[usize], hidden_act: Activation) -> Self {
        Self {
            mlp: Mlp::new("mlp", dims, hidden_act, Activation::None, 0),
        }
    }

    pub fn forward<T: Real, P: ParamView<T>>(&self, params: &P, inputs: &[f32], rows: usize) -> MlpCache<T> {
        let x = inputs.iter().map(|&v| T::of_f32(v)).collect();
        self.mlp.forward(params, x, rows)
    }
}

impl Model for MlpModel {
    type Batch<'b> = DenseBatch;

    fn decls(&self) -> Vec<ParamDecl> {
        self.mlp.decls()
    }

    fn batch_rows(batch: &DenseBatch) -> usize {
        batch.rows
    }

    fn loss<T: Real, P: ParamView<T>>(&self, params: &P, batch: &DenseBatch) -> f64 {
        let cache = self.forward::<T, P>(params, &batch.inputs, batch.rows);
        loss_on(cache.output(), &batch.targets, self.mlp.output_dim()).0
    }

    fn loss_and_grads<T: Real, P: ParamView<T>>(&self, params: &P, batch: &DenseBatch) -> (f64, Grads<T>) {
        let cache = self.forward::<T, P>(params, &batch.inputs, batch.rows);
        let (loss, dy) = loss_on(cache.output(), &batch.targets, self.mlp.output_dim());
        let mut grads = zero_grads(self.decls().iter().map(|d| d.shape.iter().product()));
        self.mlp.backward(params, &cache, &dy, &mut grads, false);
        (loss, grads)
    }
}

/// Architecture of the first-frame + action-sequence classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqModelSpec {
    pub frame_dim: usize,
    pub image_embed: usize,
    pub action_dim: usize,
    pub action_embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
    /// Zero the image embedding so only the action sequence is seen.
    pub sequence_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqExample {
    pub frame: Vec<f32>,
    pub actions: Vec<[f32; 3]>,
}

#[derive(Debug, Clone)]
pub struct SeqBatch<'a> {
    pub items: Vec<&'a SeqExample>,
    pub targets: Targets,
}

/// Image encoder and action encoder feed a stacked LSTM; a linear head
/// reads the final hidden state. The image embedding is computed once per
/// sequence and concatenated to every step's action embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    pub spec: SeqModelSpec,
    pub image: Mlp,
    pub action: Mlp,
    pub lstm: LstmStack,
    pub head: Mlp,
}

struct SeqForward<T> {
    order: Vec<usize>,
    counts: Vec<usize>,
    offsets: Vec<usize>,
    image: Option<MlpCache<T>>,
    action: MlpCache<T>,
    lstm: LstmCache<T>,
    head: MlpCache<T>,
}

impl SeqModel {
    pub fn new(spec: SeqModelSpec) -> Self {
        assert_eq!(spec.action_dim, 3, "actions are 3-vectors");
        let image = Mlp::new("image", &[spec.frame_dim, spec.image_embed], Activation::Relu, Activation::Relu, 0);
        let action = Mlp::new("action", &[spec.action_dim, spec.action_embed], Activation::Relu, Activation::Relu, 2);
        let lstm = LstmStack::new("lstm", spec.image_embed + spec.action_embed, spec.hidden, spec.layers, 4);
        let head = Mlp::new("head", &[spec.hidden, spec.classes], Activation::None, Activation::None, 4 + 2 * spec.layers);
        Self {
            spec,
            image,
            action,
            lstm,
            head,
        }
    }

    fn forward<T: Real, P: ParamView<T>>(&self, params: &P, items: &[&SeqExample]) -> SeqForward<T> {
        assert!(!items.is_empty());
        assert!(items.iter().all(|s| !s.actions.is_empty()), "empty action sequence");
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| items[b].actions.len().cmp(&items[a].actions.len()));
        let rows = items.len();
        let lens: Vec<usize> = order.iter().map(|&i| items[i].actions.len()).collect();
        let max_len = lens[0];
        let counts: Vec<usize> = (0..max_len).map(|t| lens.iter().filter(|&&n| n > t).count()).collect();
        let ei = self.spec.image_embed;
        let ea = self.spec.action_embed;

        let image = if self.spec.sequence_only {
            None
        } else {
            let mut x = Vec::with_capacity(rows * self.spec.frame_dim);
            for &i in &order {
                assert_eq!(items[i].frame.len(), self.spec.frame_dim);
                x.extend(items[i].frame.iter().map(|&v| T::of_f32(v)));
            }
            Some(self.image.forward(params, x, rows))
        };

        // every step of every sequence, time-major
        let mut offsets = Vec::with_capacity(max_len);
        let mut acts = Vec::new();
        let mut total = 0;
        for (t, &n) in counts.iter().enumerate() {
            offsets.push(total);
            for &i in &order[..n] {
                acts.extend(items[i].actions[t].iter().map(|&v| T::of_f32(v)));
            }
            total += n;
        }
        let action = self.action.forward(params, acts, total);

        let fa = action.output();
        let steps: Vec<Vec<T>> = counts
            .iter()
            .enumerate()
            .map(|(t, &n)| {
                let mut s = Vec::with_capacity(n * (ei + ea));
                for r in 0..n {
                    match &image {
                        Some(c) => s.extend_from_slice(&c.output()[r * ei..(r + 1) * ei]),
                        None => s.extend(std::iter::repeat_n(T::zero(), ei)),
                    }
                    let k = offsets[t] + r;
                    s.extend_from_slice(&fa[k * ea..(k + 1) * ea]);
                }
                s
            })
            .collect();
        let (final_h, lstm) = self.lstm.forward(params, &steps, &lens);
        let head = self.head.forward(params, final_h, rows);
        SeqForward {
            order,
            counts,
            offsets,
            image,
            action,
            lstm,
            head,
        }
    }

    /// Logits in the order the items were given (`rows x classes`).
    pub fn logits<T: Real, P: ParamView<T>>(&self, params: &P, items: &[&SeqExample]) -> Vec<T> {
        let fwd = self.forward(params, items);
        unpermute(fwd.head.output(), &fwd.order, self.spec.classes)
    }

    fn permuted_targets(&self, targets: &Targets, order: &[usize]) -> Targets {
        match targets {
            Targets::Labels(l) => Targets::Labels(order.iter().map(|&i| l[i]).collect()),
            Targets::Regression(v) => {
                let c = self.spec.classes;
                Targets::Regression(order.iter().flat_map(|&i| v[i * c..(i + 1) * c].iter().copied()).collect())
            }
        }
    }
}

fn unpermute<T: Real>(sorted: &[T], order: &[usize], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); sorted.len()];
    for (pos, &orig) in order.iter().enumerate() {
        out[orig * width..(orig + 1) * width].copy_from_slice(&sorted[pos * width..(pos + 1) * width]);
    }
    out
}

impl Model for SeqModel {
    type Batch<'b> = SeqBatch<'b>;

    fn decls(&self) -> Vec<ParamDecl> {
        let mut d = self.image.decls();
        d.extend(self.action.decls());
        d.extend(self.lstm.decls());
        d.extend(self.head.decls());
        d
    }

    fn batch_rows(batch: &SeqBatch<'_>) -> usize {
        batch.items.len()
    }

    fn loss<T: Real, P: ParamView<T>>(&self, params: &P, batch: &SeqBatch<'_>) -> f64 {
        let fwd = self.forward(params, &batch.items);
        let targets = self.permuted_targets(&batch.targets, &fwd.order);
        loss_on(fwd.head.output(), &targets, self.spec.classes).0
    }

    fn loss_and_grads<T: Real, P: ParamView<T>>(&self, params: &P, batch: &SeqBatch<'_>) -> (f64, Grads<T>) {
        let fwd = self.forward(params, &batch.items);
        let targets = self.permuted_targets(&batch.targets, &fwd.order);
        let (loss, dlogits) = loss_on(fwd.head.output(), &targets, self.spec.classes);
        let mut grads = zero_grads(self.decls().iter().map(|d| d.shape.iter().product()));
        let dh = self.head.backward(params, &fwd.head, &dlogits, &mut grads, true).unwrap();
        let dxs = self.lstm.backward(params, &fwd.lstm, &dh, &mut grads);

        let (ei, ea) = (self.spec.image_embed, self.spec.action_embed);
        let rows = fwd.order.len();
        let total = fwd.action.rows;
        let mut d_fa = vec![T::zero(); total * ea];
        let mut d_fx = vec![T::zero(); rows * ei];
        for (t, &n) in fwd.counts.iter().enumerate() {
            let dx = &dxs[t];
            for r in 0..n {
                let src = &dx[r * (ei + ea)..(r + 1) * (ei + ea)];
                for (acc, v) in d_fx[r * ei..(r + 1) * ei].iter_mut().zip(&src[..ei]) {
                    *acc += *v;
                }
                let k = fwd.offsets[t] + r;
                d_fa[k * ea..(k + 1) * ea].copy_from_slice(&src[ei..]);
            }
        }
        self.action.backward(params, &fwd.action, &d_fa, &mut grads, false);
        if let Some(img) = &fwd.image {
            self.image.backward(params, img, &d_fx, &mut grads, false);
        }
        (loss, grads)
    }
}
