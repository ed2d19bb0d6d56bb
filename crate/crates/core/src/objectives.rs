//! Attack objectives over tile values.
//!
//! Two parameterisations keep every perturbation inside the `ℓ∞` ball
//! without projection: the continuous form maps `τ ∈ ℝ^d` to
//! `ε·tanh(τ)`, the discrete form samples a corner `ε·{-1,+1}^d` from
//! independent per-tile softmax probabilities. Scores follow the
//! minimisation convention: untargeted attacks minimise `-L(f(x+δ), y)`,
//! targeted attacks minimise `L(f(x+δ), y_t)`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelOracle;
use crate::tensor::{apply_perturbation, ImageTensor, LogitsVector, LossKind};
use crate::tiling::TileGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackMode {
    Untargeted,
    Targeted { target: usize },
}

#[derive(Debug, Clone)]
pub struct AttackSpec {
    pub image: ImageTensor,
    pub true_label: usize,
    pub mode: AttackMode,
    pub epsilon: f64,
    pub loss: LossKind,
    pub grid: TileGrid,
}

impl AttackSpec {
    pub fn new(
        image: ImageTensor,
        true_label: usize,
        mode: AttackMode,
        epsilon: f64,
        loss: LossKind,
        grid: TileGrid,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        if let AttackMode::Targeted { target } = mode {
            if target == true_label {
                return Err(Error::invalid("target label equals the true label"));
            }
        }
        if grid.shape() != image.shape() {
            return Err(Error::shape(image.len(), grid.shape().len()));
        }
        Ok(Self { image, true_label, mode, epsilon, loss, grid })
    }

    /// The label the loss is measured against.
    pub fn loss_label(&self) -> usize {
        match self.mode {
            AttackMode::Untargeted => self.true_label,
            AttackMode::Targeted { target } => target,
        }
    }

    /// `L` at the relevant label, before the sign convention is applied.
    pub fn attack_loss(&self, logits: &LogitsVector) -> Result<f64> {
        self.loss.evaluate(logits, self.loss_label())
    }

    /// Minimisation score for `logits`.
    pub fn score(&self, logits: &LogitsVector) -> Result<f64> {
        let loss = self.attack_loss(logits)?;
        Ok(match self.mode {
            AttackMode::Untargeted => -loss,
            AttackMode::Targeted { .. } => loss,
        })
    }

    fn check_labels(&self, classes: usize) -> Result<()> {
        if self.true_label >= classes || self.loss_label() >= classes {
            return Err(Error::invalid(format!("label out of range for {classes} classes")));
        }
        Ok(())
    }
}

/// Untargeted: argmax differs from the true label. Targeted: argmax equals
/// the target. Argmax ties go to the lowest index. Never queries.
pub fn is_success(spec: &AttackSpec, logits: &LogitsVector) -> bool {
    let predicted = logits.argmax();
    match spec.mode {
        AttackMode::Untargeted => predicted != spec.true_label,
        AttackMode::Targeted { target } => predicted == target,
    }
}

/// Oracle requests spent on one attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryCounter {
    used: u64,
    limit: u64,
}

impl QueryCounter {
    pub fn new(limit: u64) -> Result<Self> {
        if limit == 0 {
            return Err(Error::invalid("query limit must be >= 1"));
        }
        Ok(Self { used: 0, limit })
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used
    }

    /// Reserves one query, failing once the limit is reached.
    pub fn consume(&mut self) -> Result<()> {
        if self.used >= self.limit {
            return Err(Error::BudgetExhausted { limit: self.limit });
        }
        self.used += 1;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub score: f64,
    pub success: bool,
    pub logits: LogitsVector,
}

/// `ε·tanh(τ)` spread over the tile grid.
pub fn continuous_delta(spec: &AttackSpec, tau: &[f64]) -> Result<Vec<f64>> {
    let tiles: Vec<f64> = tau.iter().map(|t| spec.epsilon * t.tanh()).collect();
    spec.grid.expand(&tiles)
}

/// `ε·corner` spread over the tile grid.
pub fn discrete_delta(spec: &AttackSpec, corner: &[f64]) -> Result<Vec<f64>> {
    let tiles: Vec<f64> = corner.iter().map(|s| spec.epsilon * s).collect();
    spec.grid.expand(&tiles)
}

fn query<M: ModelOracle + ?Sized>(
    spec: &AttackSpec,
    delta: &[f64],
    model: &M,
    counter: &mut QueryCounter,
) -> Result<EvalOutcome> {
    spec.check_labels(model.classes())?;
    let image = apply_perturbation(&spec.image, delta)?;
    counter.consume()?;
    let logits = model.logits(&image)?;
    Ok(EvalOutcome { score: spec.score(&logits)?, success: is_success(spec, &logits), logits })
}

/// Scores `τ` through the tanh parameterisation. Costs one query.
pub fn continuous_eval<M: ModelOracle + ?Sized>(
    spec: &AttackSpec,
    tau: &[f64],
    model: &M,
    counter: &mut QueryCounter,
) -> Result<EvalOutcome> {
    let delta = continuous_delta(spec, tau)?;
    query(spec, &delta, model, counter)
}

/// Per-tile logits `(a_i, b_i)` of the corner distribution
/// `P(τ_i = +1) = e^{a_i} / (e^{a_i} + e^{b_i})`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteParams {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl DiscreteParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::shape(a.len(), b.len()));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("discrete parameters must be finite"));
        }
        Ok(Self { a, b })
    }

    /// Reads `[a; b]` (two-variable form) or `a` alone with `b = 0`.
    pub fn from_search_point(point: &[f64], form: DiscreteForm) -> Result<Self> {
        match form {
            DiscreteForm::TwoVariable => {
                if !point.len().is_multiple_of(2) {
                    return Err(Error::invalid("two-variable point must have even length"));
                }
                let (a, b) = point.split_at(point.len() / 2);
                Self::new(a.to_vec(), b.to_vec())
            }
            DiscreteForm::OneVariable => Self::new(point.to_vec(), vec![0.0; point.len()]),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `P(τ_i = +1)` for every tile.
    pub fn probabilities(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| plus_probability(*a, *b)).collect()
    }
}

/// `e^a / (e^a + e^b)`, evaluated as a logistic of `a - b`.
pub fn plus_probability(a: f64, b: f64) -> f64 {
    1.0 / (1.0 + (b - a).exp())
}

/// Search-space layout for the discrete problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscreteForm {
    /// Separate `a_i`, `b_i`; search dimension `2d`.
    #[default]
    TwoVariable,
    /// `P(τ_i = 1) = 1 / (1 + e^{-a_i})`; search dimension `d`.
    OneVariable,
}

impl DiscreteForm {
    pub fn search_dimension(self, tiles: usize) -> usize {
        match self {
            DiscreteForm::TwoVariable => 2 * tiles,
            DiscreteForm::OneVariable => tiles,
        }
    }
}

/// Draws one sign vector from the corner distribution.
pub fn sample_corner<R: Rng + ?Sized>(params: &DiscreteParams, rng: &mut R) -> Vec<f64> {
    params
        .a
        .iter()
        .zip(&params.b)
        .map(|(a, b)| if rng.random::<f64>() < plus_probability(*a, *b) { 1.0 } else { -1.0 })
        .collect()
}

/// Samples one corner, applies it and scores it. Costs one query.
pub fn discrete_eval<M: ModelOracle + ?Sized, R: Rng + ?Sized>(
    spec: &AttackSpec,
    params: &DiscreteParams,
    model: &M,
    counter: &mut QueryCounter,
    rng: &mut R,
) -> Result<(EvalOutcome, Vec<f64>)> {
    if params.len() != spec.grid.search_dimension() {
        return Err(Error::shape(spec.grid.search_dimension(), params.len()));
    }
    let corner = sample_corner(params, rng);
    let delta = discrete_delta(spec, &corner)?;
    Ok((query(spec, &delta, model, counter)?, corner))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemForm {
    #[default]
    Continuous,
    Discrete,
}

/// Binds a spec, an oracle and a query counter into a scalar function over
/// search points, remembering whether any evaluation succeeded.
pub struct AttackObjective<'a, M: ?Sized> {
    spec: &'a AttackSpec,
    model: &'a M,
    counter: QueryCounter,
    form: ProblemForm,
    discrete_form: DiscreteForm,
    corner_rng: Box<dyn RngCore + Send + 'a>,
    succeeded: bool,
    last_success: bool,
    last_loss: Option<f64>,
    best_loss: Option<f64>,
    last_corner: Option<Vec<f64>>,
}

impl<'a, M: ModelOracle + ?Sized> AttackObjective<'a, M> {
    pub fn new(
        spec: &'a AttackSpec,
        model: &'a M,
        counter: QueryCounter,
        form: ProblemForm,
        discrete_form: DiscreteForm,
        corner_rng: Box<dyn RngCore + Send + 'a>,
    ) -> Self {
        Self {
            spec,
            model,
            counter,
            form,
            discrete_form,
            corner_rng,
            succeeded: false,
            last_success: false,
            last_loss: None,
            best_loss: None,
            last_corner: None,
        }
    }

    pub fn search_dimension(&self) -> usize {
        let tiles = self.spec.grid.search_dimension();
        match self.form {
            ProblemForm::Continuous => tiles,
            ProblemForm::Discrete => self.discrete_form.search_dimension(tiles),
        }
    }

    pub fn evaluate(&mut self, point: &[f64]) -> Result<f64> {
        if point.len() != self.search_dimension() {
            return Err(Error::shape(self.search_dimension(), point.len()));
        }
        let outcome = match self.form {
            ProblemForm::Continuous => continuous_eval(self.spec, point, self.model, &mut self.counter)?,
            ProblemForm::Discrete => {
                let params = DiscreteParams::from_search_point(point, self.discrete_form)?;
                let (outcome, corner) =
                    discrete_eval(self.spec, &params, self.model, &mut self.counter, &mut self.corner_rng)?;
                self.last_corner = Some(corner);
                outcome
            }
        };
        let loss = self.spec.attack_loss(&outcome.logits)?;
        self.last_loss = Some(loss);
        self.best_loss = Some(match (self.best_loss, self.spec.mode) {
            (None, _) => loss,
            (Some(b), AttackMode::Untargeted) => b.max(loss),
            (Some(b), AttackMode::Targeted { .. }) => b.min(loss),
        });
        self.last_success = outcome.success;
        self.succeeded |= outcome.success;
        Ok(outcome.score)
    }

    pub fn queries_used(&self) -> u64 {
        self.counter.used()
    }

    pub fn counter(&self) -> &QueryCounter {
        &self.counter
    }

    pub fn succeeded(&self) -> bool {
        self.succeeded
    }

    pub fn last_success(&self) -> bool {
        self.last_success
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    /// Best attack loss so far: the largest for untargeted, the smallest for targeted.
    pub fn best_loss(&self) -> Option<f64> {
        self.best_loss
    }

    /// The corner sampled by the latest discrete evaluation.
    pub fn last_corner(&self) -> Option<&[f64]> {
        self.last_corner.as_deref()
    }
}
