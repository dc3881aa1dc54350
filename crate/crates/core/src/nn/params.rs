use serde::{Deserialize, Serialize};

use super::{NnError, Real};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// How a declared parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    /// LSTM bias laid out as [i | f | o | g] with the forget block set to 1.
    LstmBias { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamDecl {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

/// Named parameters in declaration order, plus optional EMA shadow and
/// Adam moments mirroring the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub ema: Option<Vec<Tensor>>,
    pub adam: Option<AdamState>,
}

pub type Grads<T> = Vec<Vec<T>>;

/// Read access to parameter tensors by declaration index.
pub trait ParamView<T> {
    fn tensor(&self, idx: usize) -> &[T];
}

impl ParamView<f32> for ParamSet {
    fn tensor(&self, idx: usize) -> &[f32] {
        &self.tensors[idx].data
    }
}

impl<T> ParamView<T> for Vec<Vec<T>> {
    fn tensor(&self, idx: usize) -> &[T] {
        &self[idx]
    }
}

/// The EMA shadow viewed as a parameter source.
pub struct EmaView<'a>(pub &'a [Tensor]);

impl ParamView<f32> for EmaView<'_> {
    fn tensor(&self, idx: usize) -> &[f32] {
        &self.0[idx].data
    }
}

impl ParamSet {
    pub fn init(decls: &[ParamDecl], seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut names = Vec::with_capacity(decls.len());
        let mut tensors = Vec::with_capacity(decls.len());
        for d in decls {
            let mut t = Tensor::zeros(&d.shape);
            match d.init {
                Init::Xavier { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    for v in t.data.iter_mut() {
                        *v = rng.symmetric(a);
                    }
                }
                Init::Zeros => {}
                Init::LstmBias { hidden } => {
                    for v in t.data[hidden..2 * hidden].iter_mut() {
                        *v = 1.0;
                    }
                }
            }
            names.push(d.name.clone());
            tensors.push(t);
        }
        Self {
            names,
            tensors,
            ema: None,
            adam: None,
        }
    }

    pub fn zeros_like(decls: &[ParamDecl]) -> Self {
        Self {
            names: decls.iter().map(|d| d.name.clone()).collect(),
            tensors: decls.iter().map(|d| Tensor::zeros(&d.shape)).collect(),
            ema: None,
            adam: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn ema_view(&self) -> Option<EmaView<'_>> {
        self.ema.as_deref().map(EmaView)
    }

    /// A parameter set whose tensors are the EMA shadow (no optimizer state).
    pub fn ema_params(&self) -> Option<ParamSet> {
        self.ema.as_ref().map(|e| ParamSet {
            names: self.names.clone(),
            tensors: e.clone(),
            ema: None,
            adam: None,
        })
    }

    pub fn check_layout(&self, decls: &[ParamDecl]) -> Result<(), NnError> {
        if decls.len() != self.tensors.len() {
            return Err(NnError::Layout(format!("expected {} tensors, found {}", decls.len(), self.tensors.len())));
        }
        for (d, (n, t)) in decls.iter().zip(self.names.iter().zip(&self.tensors)) {
            if &d.name != n || d.shape != t.shape {
                return Err(NnError::Layout(format!("{} {:?} does not match {} {:?}", n, t.shape, d.name, d.shape)));
            }
        }
        let mirrors = |ts: &[Tensor]| ts.len() == self.tensors.len() && ts.iter().zip(&self.tensors).all(|(a, b)| a.shape == b.shape);
        if let Some(e) = &self.ema {
            if !mirrors(e) {
                return Err(NnError::Layout("ema shadow does not mirror parameters".into()));
            }
        }
        if let Some(a) = &self.adam {
            if !mirrors(&a.m) || !mirrors(&a.v) {
                return Err(NnError::Layout("adam moments do not mirror parameters".into()));
            }
        }
        Ok(())
    }

    pub fn to_real<T: Real>(&self) -> Vec<Vec<T>> {
        self.tensors.iter().map(|t| t.data.iter().map(|&v| T::of_f32(v)).collect()).collect()
    }

    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        let all = |a: &[Tensor], b: &[Tensor]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y));
        self.names == other.names
            && all(&self.tensors, &other.tensors)
            && match (&self.ema, &other.ema) {
                (Some(a), Some(b)) => all(a, b),
                (None, None) => true,
                _ => false,
            }
            && match (&self.adam, &other.adam) {
                (Some(a), Some(b)) => a.step == b.step && all(&a.m, &b.m) && all(&a.v, &b.v),
                (None, None) => true,
                _ => false,
            }
    }
}

pub(crate) fn zero_grads<T: Real>(shapes: impl Iterator<Item = usize>) -> Grads<T> {
    shapes.map(|n| vec![T::zero(); n]).collect()
}
