use rand::RngCore;

use crate::dfo::one_plus_one::Sampler;
use crate::dfo::AskTell;
use crate::error::{Error, Result};

/// Independent heavy-tailed samples around a fixed centre; only the best
/// point seen is remembered.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSearch {
    center: Vec<f64>,
    scale: f64,
    best: Option<(Vec<f64>, f64)>,
}

impl RandomSearch {
    pub fn new(center: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be > 0, got {scale}")));
        }
        Ok(Self { center, scale, best: None })
    }

    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(x, v)| (x.as_slice(), *v))
    }
}

impl AskTell for RandomSearch {
    fn dimension(&self) -> usize {
        self.center.len()
    }

    fn sigma(&self) -> f64 {
        self.scale
    }

    fn ask(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        vec![self.center.iter().map(|c| c + self.scale * Sampler::Cauchy.draw(rng)).collect()]
    }

    fn tell(&mut self, candidates: &[Vec<f64>], values: &[f64]) -> Result<()> {
        if candidates.len() != values.len() {
            return Err(Error::invalid("candidate and value counts differ"));
        }
        for (c, v) in candidates.iter().zip(values) {
            let improves = match &self.best {
                _ if !v.is_finite() => false,
                Some((_, best)) => v < best,
                None => true,
            };
            if improves {
                self.best = Some((c.clone(), *v));
            }
        }
        Ok(())
    }
}
