use rand::RngCore;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dfo::AskTell;
use crate::error::{Error, Result};

/// Step-size multiplier after an accepted candidate.
pub const SUCCESS_FACTOR: f64 = 2.0;
/// Step-size multiplier after a rejected candidate, `2^{-1/4}`.
pub const FAILURE_FACTOR: f64 = 0.840_896_415_253_714_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampler {
    Gaussian,
    Cauchy,
}

impl Sampler {
    pub fn draw<R: RngCore + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Sampler::Gaussian => StandardNormal.sample(rng),
            Sampler::Cauchy => Cauchy::new(0.0, 1.0).expect("unit scale").sample(rng),
        }
    }
}

/// (1+1) evolution strategy with the one-fifth success rule: double the step
/// size on acceptance, shrink it by `2^{-1/4}` otherwise. Acceptance uses `≤`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnePlusOne {
    mean: Vec<f64>,
    sigma: f64,
    sampler: Sampler,
    best_value: f64,
}

impl OnePlusOne {
    pub fn new(mean: Vec<f64>, sigma: f64, sampler: Sampler) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial mean must be finite"));
        }
        Ok(Self { mean, sigma, sampler, best_value: f64::INFINITY })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn best_value(&self) -> f64 {
        self.best_value
    }

    pub fn sampler(&self) -> Sampler {
        self.sampler
    }

    pub fn candidate(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.mean.iter().map(|m| m + self.sigma * self.sampler.draw(rng)).collect()
    }

    /// Feeds back the objective at `candidate`. Non-finite values always
    /// count as failures.
    pub fn update(&mut self, candidate: &[f64], value: f64) {
        if !value.is_nan() && value <= self.best_value && value != f64::INFINITY {
            self.mean.copy_from_slice(candidate);
            self.best_value = value;
            self.sigma *= SUCCESS_FACTOR;
        } else {
            self.sigma *= FAILURE_FACTOR;
        }
    }
}

impl AskTell for OnePlusOne {
    fn dimension(&self) -> usize {
        self.mean.len()
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn observe_initial(&mut self, value: f64) {
        if value.is_finite() {
            self.best_value = value;
        }
    }

    fn ask(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        vec![self.candidate(rng)]
    }

    fn tell(&mut self, candidates: &[Vec<f64>], values: &[f64]) -> Result<()> {
        if candidates.len() != values.len() {
            return Err(Error::invalid("candidate and value counts differ"));
        }
        for (c, v) in candidates.iter().zip(values) {
            if c.len() != self.mean.len() {
                return Err(Error::shape(self.mean.len(), c.len()));
            }
            self.update(c, *v);
        }
        Ok(())
    }
}
