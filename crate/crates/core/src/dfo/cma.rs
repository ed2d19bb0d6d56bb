//! CMA-ES with cumulative step-size adaptation, in full-covariance and
//! separable (diagonal) flavours. Default strategy parameters follow
//! Hansen's reference settings.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::dfo::AskTell;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    Full,
    Diagonal,
}

/// Fixed strategy constants derived from the dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaParameters {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    /// Rank-one learning rate.
    pub c_1: f64,
    /// Rank-μ learning rate.
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParameters {
    pub fn new(dimension: usize, mode: CovarianceMode) -> Self {
        let n = dimension as f64;
        let lambda = 4 + (3.0 * n.ln()).floor() as usize;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let mut c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let mut c_mu =
            (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        if mode == CovarianceMode::Diagonal {
            // separable CMA: the diagonal has n free parameters instead of n², so it
            // can learn (n + 2) / 3 times faster
            let boost = (n + 2.0) / 3.0;
            c_1 = (c_1 * boost).min(1.0);
            c_mu = (c_mu * boost).min(1.0 - c_1);
        }
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self { lambda, mu, weights, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n }
    }
}

#[derive(Debug, Clone)]
enum Covariance {
    Full {
        c: DMatrix<f64>,
        /// Eigenvectors of `c`.
        b: DMatrix<f64>,
        /// Square roots of the eigenvalues of `c`.
        d: DVector<f64>,
        decomposed_at: u64,
    },
    Diagonal(DVector<f64>),
}

#[derive(Debug, Clone)]
pub struct CmaEs {
    mode: CovarianceMode,
    params: CmaParameters,
    mean: DVector<f64>,
    sigma: f64,
    cov: Covariance,
    p_c: DVector<f64>,
    p_sigma: DVector<f64>,
    generation: u64,
    repairs: u64,
}

impl CmaEs {
    pub fn new(mean: Vec<f64>, sigma: f64, mode: CovarianceMode) -> Result<Self> {
        let n = mean.len();
        let cov = match mode {
            CovarianceMode::Full => DMatrix::identity(n, n),
            CovarianceMode::Diagonal => DMatrix::from_diagonal_element(n, n, 1.0),
        };
        Self::with_covariance(mean, sigma, mode, cov)
    }

    /// Starts from an explicit covariance. In diagonal mode only the diagonal
    /// of `cov` is kept.
    pub fn with_covariance(
        mean: Vec<f64>,
        sigma: f64,
        mode: CovarianceMode,
        cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::invalid("CMA-ES needs dimension >= 1"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
        }
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::shape(n * n, cov.len()));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean and covariance must be finite"));
        }
        let cov = match mode {
            CovarianceMode::Full => Covariance::Full {
                b: DMatrix::identity(n, n),
                d: DVector::from_element(n, 1.0),
                c: (&cov + cov.transpose()) * 0.5,
                decomposed_at: u64::MAX,
            },
            CovarianceMode::Diagonal => Covariance::Diagonal(cov.diagonal()),
        };
        let mut es = Self {
            mode,
            params: CmaParameters::new(n, mode),
            mean: DVector::from_vec(mean),
            sigma,
            cov,
            p_c: DVector::zeros(n),
            p_sigma: DVector::zeros(n),
            generation: 0,
            repairs: 0,
        };
        es.refresh_decomposition(true);
        Ok(es)
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    pub fn parameters(&self) -> &CmaParameters {
        &self.params
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Number of times the covariance had to be pushed back to positive definite.
    pub fn repairs(&self) -> u64 {
        self.repairs
    }

    /// The current covariance as a dense matrix.
    pub fn covariance(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Full { c, .. } => c.clone(),
            Covariance::Diagonal(d) => DMatrix::from_diagonal(d),
        }
    }

    fn eigen_floor(trace: f64) -> f64 {
        (1e-14 * trace.abs()).max(f64::MIN_POSITIVE)
    }

    /// Re-decomposes the full covariance when stale (or when `force`), and
    /// clamps eigenvalues/diagonal entries to a positive floor.
    fn refresh_decomposition(&mut self, force: bool) {
        let n = self.mean.len() as f64;
        let lag = (self.params.lambda as f64 / (self.params.c_1 + self.params.c_mu) / n / 10.0)
            .max(1.0) as u64;
        let generation = self.generation;
        match &mut self.cov {
            Covariance::Full { c, b, d, decomposed_at } => {
                let stale = *decomposed_at == u64::MAX || generation - *decomposed_at >= lag;
                if !(force || stale) {
                    return;
                }
                let floor = Self::eigen_floor(c.trace());
                let eig = c.clone().symmetric_eigen();
                let mut values = eig.eigenvalues;
                let mut repaired = false;
                for v in values.iter_mut() {
                    if v.is_nan() || *v < floor {
                        *v = floor;
                        repaired = true;
                    }
                }
                if repaired {
                    self.repairs += 1;
                    let rebuilt = &eig.eigenvectors
                        * DMatrix::from_diagonal(&values)
                        * eig.eigenvectors.transpose();
                    *c = (&rebuilt + rebuilt.transpose()) * 0.5;
                }
                *b = eig.eigenvectors;
                *d = values.map(f64::sqrt);
                *decomposed_at = generation;
            }
            Covariance::Diagonal(diag) => {
                let floor = Self::eigen_floor(diag.sum());
                let mut repaired = false;
                for v in diag.iter_mut() {
                    if v.is_nan() || *v < floor {
                        *v = floor;
                        repaired = true;
                    }
                }
                if repaired {
                    self.repairs += 1;
                }
            }
        }
    }

    /// Draws `lambda` candidates from `m + σ·N(0, C)`.
    pub fn sample(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        self.refresh_decomposition(false);
        let n = self.mean.len();
        (0..self.params.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                let y = match &self.cov {
                    Covariance::Full { b, d, .. } => b * z.component_mul(d),
                    Covariance::Diagonal(diag) => z.zip_map(diag, |zi, ci| zi * ci.sqrt()),
                };
                (&self.mean + y * self.sigma).as_slice().to_vec()
            })
            .collect()
    }

    /// `C^{-1/2} v`.
    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.cov {
            Covariance::Full { b, d, .. } => b * (b.transpose() * v).component_div(d),
            Covariance::Diagonal(diag) => v.zip_map(diag, |vi, ci| vi / ci.sqrt()),
        }
    }

    /// Ranks the candidates and updates mean, paths, covariance and step size.
    pub fn update(&mut self, candidates: &[Vec<f64>], values: &[f64]) -> Result<()> {
        let n = self.mean.len();
        if candidates.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} candidates but {} values",
                candidates.len(),
                values.len()
            )));
        }
        if candidates.len() != self.params.lambda {
            return Err(Error::invalid(format!(
                "expected {} candidates, got {}",
                self.params.lambda,
                candidates.len()
            )));
        }
        if let Some(c) = candidates.iter().find(|c| c.len() != n) {
            return Err(Error::shape(n, c.len()));
        }
        let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| key(values[a]).total_cmp(&key(values[b])));

        let p = &self.params;
        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..p.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in p.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }
        self.mean = &old_mean + &y_w * self.sigma;

        let c_s = p.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - c_s)
            + self.whiten(&y_w) * (c_s * (2.0 - c_s) * p.mu_eff).sqrt();
        let ps_norm = self.p_sigma.norm();
        let g = (self.generation + 1) as f64;
        let h_sigma = ps_norm / (1.0 - (1.0 - c_s).powf(2.0 * g)).sqrt() / p.chi_n
            < 1.4 + 2.0 / (n as f64 + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };
        let c_c = p.c_c;
        self.p_c = &self.p_c * (1.0 - c_c) + &y_w * (h * (c_c * (2.0 - c_c) * p.mu_eff).sqrt());

        let (c_1, c_mu) = (p.c_1, p.c_mu);
        let correction = (1.0 - h) * c_c * (2.0 - c_c);
        match &mut self.cov {
            Covariance::Full { c, .. } => {
                let mut rank_mu = DMatrix::zeros(n, n);
                for (w, y) in p.weights.iter().zip(&steps) {
                    rank_mu.ger(*w, y, y, 1.0);
                }
                let rank_one = &self.p_c * self.p_c.transpose();
                *c = &*c * (1.0 - c_1 - c_mu + c_1 * correction) + rank_one * c_1 + rank_mu * c_mu;
                *c = (&*c + c.transpose()) * 0.5;
            }
            Covariance::Diagonal(diag) => {
                for i in 0..n {
                    let rank_mu: f64 = p.weights.iter().zip(&steps).map(|(w, y)| w * y[i] * y[i]).sum();
                    diag[i] = diag[i] * (1.0 - c_1 - c_mu + c_1 * correction)
                        + c_1 * self.p_c[i] * self.p_c[i]
                        + c_mu * rank_mu;
                }
            }
        }

        self.sigma *= ((c_s / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).min(1.0).exp();
        self.generation += 1;
        Ok(())
    }
}

impl AskTell for CmaEs {
    fn dimension(&self) -> usize {
        self.mean.len()
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn ask(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        self.sample(rng)
    }

    fn tell(&mut self, candidates: &[Vec<f64>], values: &[f64]) -> Result<()> {
        self.update(candidates, values)
    }
}
