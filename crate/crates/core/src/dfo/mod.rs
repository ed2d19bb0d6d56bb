//! Ask/tell derivative-free optimizers and a budgeted minimisation driver.
//!
//! Every optimizer minimises. Non-finite objective values rank as `+∞`.

pub mod bench;
mod cma;
mod de;
mod one_plus_one;
mod random_search;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use cma::{CmaEs, CmaParameters, CovarianceMode};
pub use de::{DifferentialEvolution, DE_CROSSOVER_RATE, DE_DIFFERENTIAL_WEIGHT, DE_POPULATION};
pub use one_plus_one::{OnePlusOne, Sampler, FAILURE_FACTOR, SUCCESS_FACTOR};
pub use random_search::RandomSearch;

use crate::error::{Error, Result};

/// Common ask/tell surface. `ask` returns a batch; `tell` expects the values
/// of exactly that batch.
pub trait AskTell: Send {
    fn dimension(&self) -> usize;
    /// Current global step size (or fixed sampling scale).
    fn sigma(&self) -> f64;
    fn ask(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>>;
    fn tell(&mut self, candidates: &[Vec<f64>], values: &[f64]) -> Result<()>;
    /// Objective value at the initial mean, when the driver evaluated it.
    fn observe_initial(&mut self, _value: f64) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "opo-cauchy")]
    OnePlusOneCauchy,
    #[serde(rename = "opo-gauss")]
    OnePlusOneGaussian,
    #[serde(rename = "cma")]
    CmaFull,
    #[serde(rename = "cma-diag")]
    CmaDiagonal,
    #[serde(rename = "random")]
    RandomSearch,
    #[serde(rename = "de")]
    DifferentialEvolution,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        OptimizerKind::OnePlusOneCauchy,
        OptimizerKind::OnePlusOneGaussian,
        OptimizerKind::CmaFull,
        OptimizerKind::CmaDiagonal,
        OptimizerKind::RandomSearch,
        OptimizerKind::DifferentialEvolution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::OnePlusOneCauchy => "opo-cauchy",
            OptimizerKind::OnePlusOneGaussian => "opo-gauss",
            OptimizerKind::CmaFull => "cma",
            OptimizerKind::CmaDiagonal => "cma-diag",
            OptimizerKind::RandomSearch => "random",
            OptimizerKind::DifferentialEvolution => "de",
        }
    }

    /// Instantiates the optimizer around `mean` with initial scale `sigma`.
    pub fn build(self, mean: Vec<f64>, sigma: f64) -> Result<Box<dyn AskTell>> {
        Ok(match self {
            OptimizerKind::OnePlusOneCauchy => Box::new(OnePlusOne::new(mean, sigma, Sampler::Cauchy)?),
            OptimizerKind::OnePlusOneGaussian => {
                Box::new(OnePlusOne::new(mean, sigma, Sampler::Gaussian)?)
            }
            OptimizerKind::CmaFull => Box::new(CmaEs::new(mean, sigma, CovarianceMode::Full)?),
            OptimizerKind::CmaDiagonal => Box::new(CmaEs::new(mean, sigma, CovarianceMode::Diagonal)?),
            OptimizerKind::RandomSearch => Box::new(RandomSearch::new(mean, sigma)?),
            OptimizerKind::DifferentialEvolution => Box::new(DifferentialEvolution::new(mean, sigma)?),
        })
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown optimizer {s:?}")))
    }
}

/// One objective evaluation, as seen by the stop predicate.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation<'a> {
    /// 1-based count of evaluations so far, including this one.
    pub index: u64,
    pub point: &'a [f64],
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub eval: u64,
    pub best: f64,
    pub sigma: f64,
}

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    writeln!(out, "eval,best,sigma")?;
    for r in records {
        writeln!(out, "{},{},{}", r.eval, r.best, r.sigma)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOptions {
    /// Starting mean; zero when absent.
    pub initial_mean: Option<Vec<f64>>,
    pub initial_sigma: f64,
    /// Record one [`TraceRecord`] per completed generation.
    pub trace: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { initial_mean: None, initial_sigma: 1.0, trace: false }
    }
}

#[derive(Debug)]
pub struct MinimizeOutcome<E> {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    /// Exactly the number of objective calls made.
    pub evaluations: u64,
    pub stopped_early: bool,
    /// Set when the objective failed; the other fields describe the partial run.
    pub failure: Option<E>,
    pub trace: Vec<TraceRecord>,
}

impl<E> MinimizeOutcome<E> {
    pub fn is_partial(&self) -> bool {
        self.failure.is_some()
    }
}

/// Minimises `objective` with at most `budget` evaluations.
///
/// The initial mean is evaluated first. Afterwards batches from the optimizer
/// are evaluated one point at a time; the run ends when the budget is spent,
/// `stop` returns true for an evaluation, or the objective fails. Incomplete
/// batches are never told to the optimizer.
pub fn minimize<F, S, E>(
    mut objective: F,
    kind: OptimizerKind,
    dimension: usize,
    budget: u64,
    mut stop: S,
    rng: &mut dyn RngCore,
    options: &MinimizeOptions,
) -> Result<MinimizeOutcome<E>>
where
    F: FnMut(&[f64]) -> std::result::Result<f64, E>,
    S: FnMut(&Evaluation<'_>) -> bool,
{
    if budget == 0 {
        return Err(Error::invalid("budget must be >= 1"));
    }
    if dimension == 0 {
        return Err(Error::invalid("dimension must be >= 1"));
    }
    let mean = options.initial_mean.clone().unwrap_or_else(|| vec![0.0; dimension]);
    if mean.len() != dimension {
        return Err(Error::shape(dimension, mean.len()));
    }
    let mut optimizer = kind.build(mean.clone(), options.initial_sigma)?;

    let mut out = MinimizeOutcome {
        best_point: mean.clone(),
        best_value: f64::INFINITY,
        evaluations: 0,
        stopped_early: false,
        failure: None,
        trace: Vec::new(),
    };

    let mut evaluate = |point: &[f64], out: &mut MinimizeOutcome<E>| -> Option<f64> {
        out.evaluations += 1;
        match objective(point) {
            Ok(raw) => {
                let value = if raw.is_nan() { f64::INFINITY } else { raw };
                if value < out.best_value || out.evaluations == 1 {
                    out.best_value = value;
                    out.best_point = point.to_vec();
                }
                let eval = Evaluation { index: out.evaluations, point, value };
                if stop(&eval) {
                    out.stopped_early = true;
                }
                Some(value)
            }
            Err(e) => {
                out.failure = Some(e);
                None
            }
        }
    };

    let Some(initial) = evaluate(&mean, &mut out) else {
        return Ok(out);
    };
    optimizer.observe_initial(initial);
    if out.stopped_early {
        return Ok(out);
    }

    while out.evaluations < budget {
        let batch = optimizer.ask(rng);
        let mut values = Vec::with_capacity(batch.len());
        for point in &batch {
            if out.evaluations >= budget {
                return Ok(out);
            }
            match evaluate(point, &mut out) {
                Some(v) => values.push(v),
                None => return Ok(out),
            }
            if out.stopped_early {
                return Ok(out);
            }
        }
        optimizer.tell(&batch, &values)?;
        if options.trace {
            out.trace.push(TraceRecord {
                eval: out.evaluations,
                best: out.best_value,
                sigma: optimizer.sigma(),
            });
        }
    }
    Ok(out)
}
