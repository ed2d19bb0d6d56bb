//! Black-box adversarial attacks on image classifiers driven by
//! derivative-free optimizers over tiled perturbations.
//!
//! The classifier is only ever asked for logits. Attacks search a small
//! tile-level space, map it into the `ℓ∞` ball of radius `ε`, and stop at the
//! first query that fools the model.

pub mod campaign;
pub mod cli;
pub mod dfo;
pub mod error;
pub mod models;
pub mod objectives;
pub mod tensor;
pub mod tiling;

pub use error::{Error, OracleError, Result};
pub use tensor::{ImageTensor, LogitsVector, LossKind, Shape};
