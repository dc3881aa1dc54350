use serde::{Deserialize, Serialize};

use super::kernels::{gemm_acc, gemm_nt, gemm_tn_acc, sum_rows_acc};
use super::{Grads, Init, ParamDecl, ParamView, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::None => x,
        }
    }
}

/// Stack of affine layers. Weights are stored input-major (`in x out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub dims: Vec<usize>,
    pub hidden_act: Activation,
    pub output_act: Activation,
    /// Index of this stack's first tensor within the owning parameter set.
    pub first_param: usize,
}

/// Batched activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    pub rows: usize,
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    pub acts: Vec<Vec<T>>,
    pub pre: Vec<Vec<T>>,
}

impl<T: Real> MlpCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("non-empty cache")
    }
}

impl Mlp {
    pub fn new(prefix: &str, dims: &[usize], hidden_act: Activation, output_act: Activation, first_param: usize) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0), "bad layer sizes {dims:?}");
        Self {
            prefix: prefix.to_string(),
            dims: dims.to_vec(),
            hidden_act,
            output_act,
            first_param,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.num_layers()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn decls(&self) -> Vec<ParamDecl> {
        let mut out = Vec::new();
        for l in 0..self.num_layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            out.push(ParamDecl::new(format!("{}.{l}.weight", self.prefix), &[i, o], Init::Xavier { fan_in: i, fan_out: o }));
            out.push(ParamDecl::new(format!("{}.{l}.bias", self.prefix), &[o], Init::Zeros));
        }
        out
    }

    fn act(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_act
        } else {
            self.hidden_act
        }
    }

    pub fn forward<T: Real, P: ParamView<T>>(&self, params: &P, x: Vec<T>, rows: usize) -> MlpCache<T> {
        assert_eq!(x.len(), rows * self.input_dim(), "input does not match first layer width");
        let mut acts = vec![x];
        let mut pre = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let w = params.tensor(self.first_param + 2 * l);
            let b = params.tensor(self.first_param + 2 * l + 1);
            let mut z = Vec::with_capacity(rows * o);
            for _ in 0..rows {
                z.extend_from_slice(b);
            }
            gemm_acc(&mut z, &acts[l], w, rows, i, o);
            let act = self.act(l);
            let a = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            acts.push(a);
        }
        MlpCache { rows, acts, pre }
    }

    /// Single-vector convenience wrapper.
    pub fn forward_one<T: Real, P: ParamView<T>>(&self, params: &P, x: &[T]) -> Vec<T> {
        let mut cache = self.forward(params, x.to_vec(), 1);
        cache.acts.pop().unwrap()
    }

    /// Accumulates parameter gradients into `grads` (indexed like the
    /// owning parameter set) and returns the input gradient when asked.
    pub fn backward<T: Real, P: ParamView<T>>(
        &self,
        params: &P,
        cache: &MlpCache<T>,
        dy: &[T],
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let rows = cache.rows;
        let mut delta = dy.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            if self.act(l) == Activation::Relu {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    if *z <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let wi = self.first_param + 2 * l;
            gemm_tn_acc(&mut grads[wi], &cache.acts[l], &delta, rows, i, o);
            sum_rows_acc(&mut grads[wi + 1], &delta, rows, o);
            if l > 0 || need_dx {
                let mut prev = vec![T::zero(); rows * i];
                gemm_nt(&mut prev, &delta, params.tensor(wi), rows, i, o);
                delta = prev;
            } else {
                return None;
            }
        }
        Some(delta)
    }
}
