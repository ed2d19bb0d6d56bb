use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{synthetic_blob_dataset, train_toy_mlp, LabeledImage, LinearModel, MlpModel, TrainConfig};
use crate::tensor::{ImageTensor, Shape};

/// A two-class linear classifier together with images whose margins are
/// known in closed form.
#[derive(Debug, Clone)]
pub struct ToyLinearProblem {
    pub model: LinearModel,
    pub images: Vec<LabeledImage>,
    /// Per-pixel sign pattern `s`; class 1 scores `s·x / N`, class 0 the negation.
    pub pattern: Vec<f64>,
    /// `margins[i]` is `|s·(x_i - 0.5)| / N`. The corner `-eps·s` (or `+eps·s`
    /// for class 0) at one tile per pixel shifts the score by `eps·Σ|s|/N`, so
    /// image `i` is foolable whenever `eps > γ_i`.
    pub margins: Vec<f64>,
}

/// Builds a balanced pixel sign pattern `s`, the model `logits = (-s·x/N, s·x/N)`
/// and images `0.5 ± γ s` with `γ` drawn uniformly from `[max_margin / 4, max_margin]`.
pub fn toy_linear_problem<R: Rng + ?Sized>(
    shape: Shape,
    n_images: usize,
    max_margin: f64,
    rng: &mut R,
) -> Result<ToyLinearProblem> {
    if !(max_margin > 0.0 && max_margin < 0.5) {
        return Err(Error::invalid(format!("max_margin must lie in (0, 0.5), got {max_margin}")));
    }
    let n = shape.len();
    let mut pattern: Vec<f64> = (0..n)
        .map(|i| match (n % 2 == 1 && i == n - 1, i % 2 == 0) {
            (true, _) => 0.0,
            (_, true) => 1.0,
            _ => -1.0,
        })
        .collect();
    pattern.shuffle(rng);
    let inv = 1.0 / n as f64;
    let weights: Vec<f64> = pattern
        .iter()
        .map(|s| -s * inv)
        .chain(pattern.iter().map(|s| s * inv))
        .collect();
    let model = LinearModel::new(shape, 2, weights, vec![0.0, 0.0])?;

    let coverage: f64 = pattern.iter().map(|s| s * s).sum::<f64>() * inv;
    let mut images = Vec::with_capacity(n_images);
    let mut margins = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let label = i % 2;
        let gamma = rng.random_range(max_margin / 4.0..=max_margin);
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let data = pattern.iter().map(|s| 0.5 + sign * gamma * s).collect();
        images.push(LabeledImage { image: ImageTensor::new(shape, data)?, label });
        margins.push(gamma * coverage);
    }
    Ok(ToyLinearProblem { model, images, pattern, margins })
}

/// A toy MLP trained on blob data plus held-out images from the same templates.
#[derive(Debug, Clone)]
pub struct ToyMlpProblem {
    pub model: MlpModel,
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

/// Draws `n_train + n_test` images per class from one blob dataset, trains on
/// the first `n_train` per class and keeps the rest for attacks.
pub fn toy_mlp_problem<R: Rng + ?Sized>(
    shape: Shape,
    classes: usize,
    n_train: usize,
    n_test: usize,
    separation: f64,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<ToyMlpProblem> {
    let mut data = synthetic_blob_dataset(n_train + n_test, shape, classes, separation, rng)?;
    let test = data.split_off(n_train * classes);
    let model = train_toy_mlp(&data, config, rng)?;
    Ok(ToyMlpProblem { model, train: data, test })
}
