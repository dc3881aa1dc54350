//! Small dense/LSTM numeric core with hand-derived gradients.
//!
//! Parameters are stored as `f32` tensors. All layer math is generic over
//! [`Real`] so that the same code runs in `f64` for finite-difference
//! verification.

mod dense;
mod gradcheck;
mod kernels;
mod loss;
mod lstm;
mod model;
mod optim;
mod params;

pub use dense::{Activation, Mlp, MlpCache};
pub use gradcheck::{grad_check, GradCheckCase, GradCheckReport};
pub use kernels::{axpy, dot, gemm_acc};
pub use loss::{cross_entropy, mse, softmax, LossKind};
pub use lstm::{LstmCache, LstmStack};
pub use model::{DenseBatch, MlpModel, Model, SeqBatch, SeqExample, SeqModel, SeqModelSpec, Targets};
pub use optim::{adam_step, ema_update, init_ema, AdamConfig};
pub use params::{AdamState, EmaView, Grads, Init, ParamDecl, ParamSet, ParamView, Tensor};

use num_traits::Float;
use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("non-finite loss {loss} on batch {batch}")]
    NonFiniteLoss { loss: f64, batch: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

/// Floating-point scalar the layers are generic over.
pub trait Real: Float + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
    fn of_f32(x: f32) -> Self;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn of_f32(x: f32) -> Self {
        x
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    #[inline]
    fn of_f32(x: f32) -> Self {
        x as f64
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
