//! The logits-only oracle boundary and the built-in desk-scale classifiers.

mod builtin;
mod dataset;
mod format;
mod linear;
mod mlp;
pub mod remote;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use builtin::{toy_linear_problem, toy_mlp_problem, ToyLinearProblem, ToyMlpProblem};
pub use dataset::{synthetic_blob_dataset, LabeledImage};
pub use format::{load_model, read_model, write_model, StoredModel, MODEL_MAGIC, MODEL_VERSION};
pub use linear::LinearModel;
pub use mlp::{train_toy_mlp, MlpModel, TrainConfig};
pub use remote::RemoteModel;

use crate::error::Result;
use crate::tensor::{ImageTensor, LogitsVector, Shape};

/// A classifier that can only be asked for logits.
pub trait ModelOracle: Send + Sync {
    fn input_shape(&self) -> Shape;
    fn classes(&self) -> usize;
    fn logits(&self, x: &ImageTensor) -> Result<LogitsVector>;

    fn predict(&self, x: &ImageTensor) -> Result<usize> {
        Ok(self.logits(x)?.argmax())
    }
}

impl<M: ModelOracle + ?Sized> ModelOracle for &M {
    fn input_shape(&self) -> Shape {
        (**self).input_shape()
    }
    fn classes(&self) -> usize {
        (**self).classes()
    }
    fn logits(&self, x: &ImageTensor) -> Result<LogitsVector> {
        (**self).logits(x)
    }
}

impl<M: ModelOracle + ?Sized> ModelOracle for Box<M> {
    fn input_shape(&self) -> Shape {
        (**self).input_shape()
    }
    fn classes(&self) -> usize {
        (**self).classes()
    }
    fn logits(&self, x: &ImageTensor) -> Result<LogitsVector> {
        (**self).logits(x)
    }
}

impl<M: ModelOracle + ?Sized> ModelOracle for Arc<M> {
    fn input_shape(&self) -> Shape {
        (**self).input_shape()
    }
    fn classes(&self) -> usize {
        (**self).classes()
    }
    fn logits(&self, x: &ImageTensor) -> Result<LogitsVector> {
        (**self).logits(x)
    }
}

/// Wraps an oracle and counts every logits request that reaches it.
#[derive(Debug, Default)]
pub struct CountingOracle<M> {
    inner: M,
    calls: AtomicU64,
}

impl<M> CountingOracle<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn into_inner(self) -> M {
        self.inner
    }
}

impl<M: ModelOracle> ModelOracle for CountingOracle<M> {
    fn input_shape(&self) -> Shape {
        self.inner.input_shape()
    }
    fn classes(&self) -> usize {
        self.inner.classes()
    }
    fn logits(&self, x: &ImageTensor) -> Result<LogitsVector> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.logits(x)
    }
}
