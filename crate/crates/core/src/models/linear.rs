use crate::error::{Error, Result};
use crate::models::ModelOracle;
use crate::tensor::{ImageTensor, LogitsVector, Shape};

/// `logits = W · flatten(x) + bias`, with `W` stored row-major (`K × C·H·W`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    shape: Shape,
    classes: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearModel {
    pub fn new(shape: Shape, classes: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        if weights.len() != classes * shape.len() {
            return Err(Error::shape(classes * shape.len(), weights.len()));
        }
        if bias.len() != classes {
            return Err(Error::shape(classes, bias.len()));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("linear model parameters must be finite"));
        }
        Ok(Self { shape, classes, weights, bias })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

impl ModelOracle for LinearModel {
    fn input_shape(&self) -> Shape {
        self.shape
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, x: &ImageTensor) -> Result<LogitsVector> {
        if x.shape() != self.shape {
            return Err(Error::shape(self.shape.len(), x.len()));
        }
        let pixels = x.data();
        let values = self
            .weights
            .chunks_exact(pixels.len())
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(pixels).map(|(w, p)| w * p).sum::<f64>() + b)
            .collect();
        LogitsVector::new(values)
    }
}
