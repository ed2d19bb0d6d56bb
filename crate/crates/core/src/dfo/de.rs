use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::dfo::AskTell;
use crate::error::{Error, Result};

pub const DE_POPULATION: usize = 30;
pub const DE_DIFFERENTIAL_WEIGHT: f64 = 0.8;
pub const DE_CROSSOVER_RATE: f64 = 0.5;

/// DE/rand/1/bin. The first ask returns the initial population (Gaussian
/// around the centre), every later ask returns one trial per member.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialEvolution {
    center: Vec<f64>,
    scale: f64,
    population: Vec<Vec<f64>>,
    fitness: Vec<f64>,
    evaluated: bool,
    generation: u64,
}

impl DifferentialEvolution {
    pub fn new(center: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be > 0, got {scale}")));
        }
        if center.is_empty() {
            return Err(Error::invalid("differential evolution needs dimension >= 1"));
        }
        Ok(Self {
            center,
            scale,
            population: Vec::new(),
            fitness: Vec::new(),
            evaluated: false,
            generation: 0,
        })
    }

    pub fn population(&self) -> &[Vec<f64>] {
        &self.population
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    fn pick_distinct(rng: &mut dyn RngCore, exclude: usize) -> [usize; 3] {
        let mut picked = [usize::MAX; 3];
        let mut filled = 0;
        while filled < 3 {
            let r = rng.random_range(0..DE_POPULATION);
            if r != exclude && !picked[..filled].contains(&r) {
                picked[filled] = r;
                filled += 1;
            }
        }
        picked
    }
}

impl AskTell for DifferentialEvolution {
    fn dimension(&self) -> usize {
        self.center.len()
    }

    fn sigma(&self) -> f64 {
        self.scale
    }

    fn ask(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        if self.population.is_empty() {
            self.population = (0..DE_POPULATION)
                .map(|_| {
                    self.center
                        .iter()
                        .map(|c| c + self.scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut *rng))
                        .collect()
                })
                .collect();
        }
        if !self.evaluated {
            return self.population.clone();
        }
        let d = self.center.len();
        (0..DE_POPULATION)
            .map(|i| {
                let [a, b, c] = Self::pick_distinct(rng, i);
                let forced = rng.random_range(0..d);
                (0..d)
                    .map(|j| {
                        if j == forced || rng.random_bool(DE_CROSSOVER_RATE) {
                            self.population[a][j]
                                + DE_DIFFERENTIAL_WEIGHT * (self.population[b][j] - self.population[c][j])
                        } else {
                            self.population[i][j]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn tell(&mut self, candidates: &[Vec<f64>], values: &[f64]) -> Result<()> {
        if candidates.len() != DE_POPULATION || values.len() != DE_POPULATION {
            return Err(Error::invalid(format!(
                "differential evolution expects {DE_POPULATION} candidates and values"
            )));
        }
        let clean = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
        if !self.evaluated {
            self.population = candidates.to_vec();
            self.fitness = values.iter().map(|v| clean(*v)).collect();
            self.evaluated = true;
            return Ok(());
        }
        for (i, (trial, v)) in candidates.iter().zip(values).enumerate() {
            let v = clean(*v);
            if v <= self.fitness[i] {
                self.population[i] = trial.clone();
                self.fitness[i] = v;
            }
        }
        self.generation += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn population_size_is_constant() {
        let mut de = DifferentialEvolution::new(vec![0.0; 4], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let c = de.ask(&mut rng);
            assert_eq!(c.len(), DE_POPULATION);
            let v: Vec<f64> = c.iter().map(|x| x.iter().map(|y| y * y).sum()).collect();
            de.tell(&c, &v).unwrap();
            assert_eq!(de.population().len(), DE_POPULATION);
        }
        assert_eq!(de.generation(), 19);
    }
}
