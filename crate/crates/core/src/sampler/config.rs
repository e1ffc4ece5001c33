use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::car::{Likelihood, WeightScheme};
use crate::error::{Result, WombleError};
use crate::temporal::Correlation;

/// Hyperpriors `δ ~ MVN(μ_δ, Ω_δ)`, `T ~ IW(ξ, Ψ)`, `φ ~ U(a_φ, b_φ)`.
///
/// `Ω_δ` and `Ψ` are diagonal; `phi_bounds = None` derives the bounds from
/// each series' visit days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub mu_delta: Vec<f64>,
    pub omega_delta: Vec<f64>,
    pub xi: f64,
    pub psi: Vec<f64>,
    pub phi_bounds: Option<(f64, f64)>,
}

impl HyperPriors {
    /// `μ_δ = (3, 0, 0…)`, `Ω_δ = Diag(1000, 1000, 1…)`, `ξ = q + 3`, `Ψ = I`.
    pub fn standard(q: usize) -> Self {
        let p = q + 2;
        let mut mu_delta = vec![0.0; p];
        mu_delta[0] = 3.0;
        let mut omega_delta = vec![1.0; p];
        omega_delta[0] = 1000.0;
        omega_delta[1] = 1000.0;
        Self {
            mu_delta,
            omega_delta,
            xi: p as f64 + 1.0,
            psi: vec![1.0; p],
            phi_bounds: None,
        }
    }

    pub fn p(&self) -> usize {
        self.mu_delta.len()
    }

    pub fn mu_delta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu_delta)
    }

    pub fn omega_delta_mat(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.omega_delta))
    }

    pub fn psi_mat(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.psi))
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let p = q + 2;
        let bad = |m: String| Err(WombleError::Config(m));
        if self.mu_delta.len() != p || self.omega_delta.len() != p || self.psi.len() != p {
            return bad(format!("hyperprior dimensions must equal q + 2 = {p}"));
        }
        if self.omega_delta.iter().chain(&self.psi).any(|v| !(*v > 0.0)) {
            return bad("Omega_delta and Psi diagonals must be positive".into());
        }
        if !(self.xi > p as f64 - 1.0) {
            return bad(format!("xi = {} must exceed q + 1 = {}", self.xi, p - 1));
        }
        if let Some((a, b)) = self.phi_bounds {
            if !(a > 0.0 && a < b) {
                return bad(format!("phi bounds ({a}, {b}) must satisfy 0 < a < b"));
            }
        }
        Ok(())
    }
}

/// Model specification shared by fitting, prediction and simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub rho: f64,
    pub correlation: Correlation,
    pub likelihood: Likelihood,
    pub weights: WeightScheme,
    /// Observations are divided by this before modeling (dB → model units).
    pub y_scale: f64,
    /// Dissimilarities are divided by this before entering the weights.
    pub dm_scale: f64,
    pub priors: HyperPriors,
}

impl ModelConfig {
    pub fn standard(q: usize) -> Self {
        Self {
            rho: 0.99,
            correlation: Correlation::Exponential,
            likelihood: Likelihood::Tobit,
            weights: WeightScheme::Continuous,
            y_scale: 10.0,
            dm_scale: 100.0,
            priors: HyperPriors::standard(q),
        }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(WombleError::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if !(self.y_scale > 0.0 && self.dm_scale > 0.0) {
            return Err(WombleError::Config("scales must be positive".into()));
        }
        if let Likelihood::Gaussian { variance } = self.likelihood {
            if !(variance > 0.0) {
                return Err(WombleError::Config("gaussian observation variance must be positive".into()));
            }
        }
        self.priors.validate(q)
    }
}

/// Initial random-walk scales and batch adaptation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub sd_mu: f64,
    pub sd_log_tau: f64,
    pub sd_log_alpha: f64,
    pub sd_phi: f64,
    pub target: f64,
    pub batch: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            sd_mu: 0.5,
            sd_log_tau: 0.1,
            sd_log_alpha: 0.5,
            sd_phi: 1.0,
            target: 0.44,
            batch: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub n_thin: usize,
    pub seed: u64,
    pub adapt: AdaptConfig,
    /// Update `μ_t`, `log τ_t` and `log α_t` as separate Metropolis blocks.
    pub componentwise: bool,
    pub store_latent: bool,
    pub model: ModelConfig,
}

impl SamplerConfig {
    pub fn standard(q: usize) -> Self {
        Self {
            n_iter: 10_000,
            n_burn: 2_000,
            n_thin: 5,
            seed: 1,
            adapt: AdaptConfig::default(),
            componentwise: true,
            store_latent: false,
            model: ModelConfig::standard(q),
        }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let bad = |m: &str| Err(WombleError::Config(m.to_string()));
        if self.n_iter <= self.n_burn {
            return bad("n_iter must exceed n_burn");
        }
        if self.n_thin == 0 {
            return bad("n_thin must be at least 1");
        }
        if !(self.adapt.target > 0.0 && self.adapt.target < 1.0) {
            return bad("target acceptance must lie in (0, 1)");
        }
        if self.adapt.batch == 0 {
            return bad("adaptation batch must be positive");
        }
        self.model.validate(q)
    }
}
