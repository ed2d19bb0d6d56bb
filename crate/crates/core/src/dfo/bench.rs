//! Classic test functions for checking optimizer behaviour.

use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchFunction {
    /// `Σ x_i²`
    Sphere,
    /// Axis-aligned ellipsoid `Σ 100^{i/(d-1)} x_i²` (condition number 100).
    Ellipsoid,
    Rosenbrock,
    Rastrigin,
}

impl BenchFunction {
    pub fn name(self) -> &'static str {
        match self {
            BenchFunction::Sphere => "sphere",
            BenchFunction::Ellipsoid => "ellipsoid",
            BenchFunction::Rosenbrock => "rosenbrock",
            BenchFunction::Rastrigin => "rastrigin",
        }
    }

    pub fn evaluate(self, x: &[f64]) -> f64 {
        match self {
            BenchFunction::Sphere => x.iter().map(|v| v * v).sum(),
            BenchFunction::Ellipsoid => {
                let d = x.len();
                x.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let exponent = if d > 1 { i as f64 / (d - 1) as f64 } else { 0.0 };
                        100f64.powf(exponent) * v * v
                    })
                    .sum()
            }
            BenchFunction::Rosenbrock => x
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum(),
            BenchFunction::Rastrigin => {
                10.0 * x.len() as f64
                    + x.iter()
                        .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos())
                        .sum::<f64>()
            }
        }
    }

    /// Starting point used by benchmarks: all ones, away from every optimum
    /// except Rosenbrock's, which starts at the origin instead.
    pub fn start(self, dimension: usize) -> Vec<f64> {
        match self {
            BenchFunction::Rosenbrock => vec![0.0; dimension],
            _ => vec![1.0; dimension],
        }
    }
}

impl FromStr for BenchFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        [
            BenchFunction::Sphere,
            BenchFunction::Ellipsoid,
            BenchFunction::Rosenbrock,
            BenchFunction::Rastrigin,
        ]
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| Error::invalid(format!("unknown benchmark function {s:?}")))
    }
}
