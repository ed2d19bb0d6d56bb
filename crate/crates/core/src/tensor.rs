//! Image, logits and loss primitives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major image layout `(C, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A `C×H×W` image with every intensity in `[0, 1]`, stored row-major per
/// channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Builds an image, rejecting data outside `[0, 1]`.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() || shape.is_empty() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { shape, data })
    }

    /// Builds an image, clipping every value into `[0, 1]`. NaN becomes 0.
    pub fn from_clipped(shape: Shape, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() || shape.is_empty() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        data.iter_mut().for_each(|v| *v = clip_unit(*v));
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

fn clip_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Finite pre-softmax class scores, at least two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsVector(Vec<f64>);

impl LogitsVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "logits need at least 2 classes, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite logit"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest value, lowest index on ties. Panics on an empty slice.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    #[serde(alias = "ce")]
    CrossEntropy,
    #[serde(alias = "cw")]
    CarliniWagner,
}

impl LossKind {
    pub fn evaluate(self, logits: &LogitsVector, label: usize) -> Result<f64> {
        match self {
            LossKind::CrossEntropy => cross_entropy_loss(logits, label),
            LossKind::CarliniWagner => cw_loss(logits, label),
        }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &LogitsVector) -> Vec<f64> {
    let values = logits.values();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_label(logits: &LogitsVector, label: usize) -> Result<()> {
    if label >= logits.classes() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.classes()
        )));
    }
    Ok(())
}

/// `-log P(label | x)`, computed in log space.
pub fn cross_entropy_loss(logits: &LogitsVector, label: usize) -> Result<f64> {
    check_label(logits, label)?;
    let values = logits.values();
    let top = argmax(values);
    let max = values[top];
    // log-sum-exp = max + ln(1 + Σ_{i≠top} e^{v_i - max}); ln_1p keeps tiny tails
    let tail: f64 = values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, v)| (v - max).exp())
        .sum();
    let loss = (max - values[label]) + tail.ln_1p();
    Ok(loss.max(0.0))
}

/// Margin loss `-P(label) + max_{k≠label} P(k)`.
pub fn cw_loss(logits: &LogitsVector, label: usize) -> Result<f64> {
    check_label(logits, label)?;
    let probs = softmax(logits);
    let runner_up = strongest_other(&probs, label);
    Ok(probs[runner_up] - probs[label])
}

/// Index of the largest entry other than `excluded`, lowest index on ties.
pub(crate) fn strongest_other(values: &[f64], excluded: usize) -> usize {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if i == excluded {
            continue;
        }
        match best {
            Some(b) if *v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best.expect("at least two classes")
}

/// Returns `clip(x + delta, 0, 1)`; `x` is left untouched.
pub fn apply_perturbation(x: &ImageTensor, delta: &[f64]) -> Result<ImageTensor> {
    if delta.len() != x.len() {
        return Err(Error::shape(x.len(), delta.len()));
    }
    let data = x
        .data
        .iter()
        .zip(delta)
        .map(|(p, d)| clip_unit(p + d))
        .collect();
    Ok(ImageTensor { shape: x.shape, data })
}
