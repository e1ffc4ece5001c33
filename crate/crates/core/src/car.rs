//! Leroux CAR process with dissimilarity-driven adjacency weights.
//!
//! For visit-level parameters `(μ, τ, α)` the latent field satisfies
//! `φ ~ MVN(μ 1, τ² Q(α)⁻¹)` with `Q(α) = ρ W*(α) + (1 − ρ) I`, where `W*` is
//! the weighted graph Laplacian of `w_ij(α) = 1(i∼j) exp(−z_ijᵀ α)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, numerical, Result};
use crate::graph::ArealGraph;
use crate::linalg::{cholesky, logdet, Chol};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Visit-level parameters stored on the scale the separable prior acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsParams {
    pub mu: f64,
    pub log_tau: f64,
    pub log_alpha: Vec<f64>,
}

impl ObsParams {
    pub fn new(mu: f64, tau: f64, alpha: &[f64]) -> Self {
        Self {
            mu,
            log_tau: tau.ln(),
            log_alpha: alpha.iter().map(|a| a.ln()).collect(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.log_alpha.iter().map(|a| a.exp()).collect()
    }

    /// The `(q + 2)`-vector `(μ, log τ, log α_1..log α_q)`.
    pub fn to_column(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.log_alpha.len() + 2);
        v.push(self.mu);
        v.push(self.log_tau);
        v.extend_from_slice(&self.log_alpha);
        DVector::from_vec(v)
    }

    pub fn from_column(col: &[f64]) -> Self {
        Self {
            mu: col[0],
            log_tau: col[1],
            log_alpha: col[2..].to_vec(),
        }
    }
}

/// How adjacency weights are derived from `exp(−zᵀα)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// Continuous weights in (0, 1].
    #[default]
    Continuous,
    /// Binary weights: 1 when `exp(−zᵀα) ≥ 0.5` (the spatial-only comparator).
    Threshold,
}

fn check_alpha(z: &[f64], alpha: &[f64]) -> Result<()> {
    if z.len() != alpha.len() {
        return Err(domain(format!(
            "metric vector has length {} but alpha has length {}",
            z.len(),
            alpha.len()
        )));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0)) {
        return Err(domain(format!("alpha components must be non-negative, got {a}")));
    }
    Ok(())
}

fn dot(z: &[f64], alpha: &[f64]) -> f64 {
    z.iter().zip(alpha).map(|(a, b)| a * b).sum()
}

/// Continuous adjacency weight `1(i∼j) exp(−zᵀα)`.
pub fn weight(adjacent: bool, z: &[f64], alpha: &[f64]) -> Result<f64> {
    check_alpha(z, alpha)?;
    if !adjacent {
        return Ok(0.0);
    }
    Ok((-dot(z, alpha)).exp())
}

/// Binary adjacency weight `1(i∼j) 1(exp(−zᵀα) ≥ 0.5)`.
pub fn threshold_weight(adjacent: bool, z: &[f64], alpha: &[f64]) -> Result<f64> {
    check_alpha(z, alpha)?;
    if !adjacent {
        return Ok(0.0);
    }
    Ok(if (-dot(z, alpha)).exp() >= 0.5 { 1.0 } else { 0.0 })
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(domain(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok(())
}

/// Per-edge weights in the graph's edge order.
pub fn edge_weights(graph: &ArealGraph, alpha: &[f64], scheme: WeightScheme) -> Result<Vec<f64>> {
    graph
        .edges()
        .iter()
        .map(|e| match scheme {
            WeightScheme::Continuous => weight(true, &e.z, alpha),
            WeightScheme::Threshold => threshold_weight(true, &e.z, alpha),
        })
        .collect()
}

/// Leroux precision `Q = ρ W* + (1 − ρ) I` (unit-scale, τ excluded).
pub fn precision_matrix(
    graph: &ArealGraph,
    alpha: &[f64],
    rho: f64,
    scheme: WeightScheme,
) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    let w = edge_weights(graph, alpha, scheme)?;
    Ok(assemble_precision(graph, &w, rho))
}

fn assemble_precision(graph: &ArealGraph, w: &[f64], rho: f64) -> DMatrix<f64> {
    let n = graph.n();
    let mut q = DMatrix::from_diagonal_element(n, n, 1.0 - rho);
    for (e, &wij) in graph.edges().iter().zip(w) {
        q[(e.i, e.i)] += rho * wij;
        q[(e.j, e.j)] += rho * wij;
        q[(e.i, e.j)] -= rho * wij;
        q[(e.j, e.i)] -= rho * wij;
    }
    q
}

/// A CAR precision structure evaluated at one `α`, with its Cholesky factor.
///
/// Construction costs one dense factorization; density evaluations for
/// different `(μ, τ)` reuse it and run in O(n + |E|).
#[derive(Debug, Clone)]
pub struct CarStructure {
    pub weights: Vec<f64>,
    pub row_sums: Vec<f64>,
    pub rho: f64,
    chol: Chol,
    logdet_q: f64,
}

impl CarStructure {
    pub fn new(graph: &ArealGraph, alpha: &[f64], rho: f64, scheme: WeightScheme) -> Result<Self> {
        check_rho(rho)?;
        let weights = edge_weights(graph, alpha, scheme)?;
        Self::from_weights(graph, weights, rho).map_err(|e| match e {
            crate::error::WombleError::Numerical(m) => numerical(format!("{m} at alpha = {alpha:?}")),
            other => other,
        })
    }

    fn from_weights(graph: &ArealGraph, weights: Vec<f64>, rho: f64) -> Result<Self> {
        let mut row_sums = vec![0.0; graph.n()];
        for (e, &w) in graph.edges().iter().zip(&weights) {
            row_sums[e.i] += w;
            row_sums[e.j] += w;
        }
        let q = assemble_precision(graph, &weights, rho);
        let chol = cholesky(q, "CAR precision Q(alpha)")?;
        let logdet_q = logdet(&chol);
        Ok(Self {
            weights,
            row_sums,
            rho,
            chol,
            logdet_q,
        })
    }

    pub fn logdet_q(&self) -> f64 {
        self.logdet_q
    }

    pub fn chol(&self) -> &Chol {
        &self.chol
    }

    /// `(φ − μ1)ᵀ Q (φ − μ1)` via the edge decomposition of the Laplacian.
    pub fn quad_form(&self, graph: &ArealGraph, phi: &[f64], mu: f64) -> f64 {
        let rho = self.rho;
        let mut own = 0.0;
        for &p in phi {
            let d = p - mu;
            own += d * d;
        }
        let mut pair = 0.0;
        for (e, &w) in graph.edges().iter().zip(&self.weights) {
            let d = phi[e.i] - phi[e.j];
            pair += w * d * d;
        }
        rho * pair + (1.0 - rho) * own
    }

    pub fn logdensity(&self, graph: &ArealGraph, phi: &[f64], mu: f64, log_tau: f64) -> f64 {
        let n = phi.len() as f64;
        let tau2 = (2.0 * log_tau).exp();
        -0.5 * n * LN_2PI - n * log_tau + 0.5 * self.logdet_q
            - 0.5 * self.quad_form(graph, phi, mu) / tau2
    }

    /// Conditional mean and variance of site `i` given all other sites.
    pub fn conditional(&self, graph: &ArealGraph, i: usize, phi: &[f64], mu: f64, tau2: f64) -> (f64, f64) {
        let rho = self.rho;
        let mut acc = 0.0;
        for &(j, k) in graph.neighbors(i) {
            acc += self.weights[k] * phi[j];
        }
        let denom = rho * self.row_sums[i] + 1.0 - rho;
        ((rho * acc + (1.0 - rho) * mu) / denom, tau2 / denom)
    }
}

/// Full conditional `(mean, variance)` of `φ_i` given the other sites.
///
/// Accepts `ρ = 1` (intrinsic CAR), for which the conditional stays defined
/// whenever site `i` has at least one positive weight.
pub fn car_conditional(
    i: usize,
    phi: &[f64],
    params: &ObsParams,
    graph: &ArealGraph,
    rho: f64,
    scheme: WeightScheme,
) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(domain(format!("rho must lie in [0, 1], got {rho}")));
    }
    if i >= graph.n() || phi.len() != graph.n() {
        return Err(domain("site index or field length does not match the graph"));
    }
    let alpha = params.alpha();
    let mut num = 0.0;
    let mut wsum = 0.0;
    for &(j, _) in graph.neighbors(i) {
        let z = graph.dissim(i, j).expect("neighbor has dissimilarity");
        let w = match scheme {
            WeightScheme::Continuous => weight(true, z, &alpha)?,
            WeightScheme::Threshold => threshold_weight(true, z, &alpha)?,
        };
        num += w * phi[j];
        wsum += w;
    }
    let denom = rho * wsum + 1.0 - rho;
    if denom <= 0.0 {
        return Err(domain(format!("site {i} has no positive weight under rho = 1")));
    }
    let tau2 = params.tau().powi(2);
    Ok(((rho * num + (1.0 - rho) * params.mu) / denom, tau2 / denom))
}

/// Exact `MVN(μ1, τ² Q(α)⁻¹)` log-density of one visit's latent field.
pub fn joint_car_logdensity(
    phi: &[f64],
    params: &ObsParams,
    graph: &ArealGraph,
    rho: f64,
    scheme: WeightScheme,
) -> Result<f64> {
    if phi.len() != graph.n() {
        return Err(domain("field length does not match the graph"));
    }
    let car = CarStructure::new(graph, &params.alpha(), rho, scheme)?;
    Ok(car.logdensity(graph, phi, params.mu, params.log_tau))
}

/// Degenerate Tobit log-likelihood: 0 when the latent field reproduces the
/// data under `Y = max(0, φ)`, −∞ otherwise.
pub fn tobit_loglik(y: &[f64], phi: &[f64]) -> f64 {
    let feasible = y.iter().zip(phi).all(|(&yi, &pi)| {
        if yi == 0.0 {
            pi <= 0.0
        } else {
            pi == yi
        }
    });
    if feasible {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Observation layer linking the latent field to the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Likelihood {
    /// `Y = max(0, φ)`, no nuisance parameters.
    Tobit,
    /// `Y ~ N(φ, σ²)` with fixed observation variance.
    Gaussian { variance: f64 },
}

impl Default for Likelihood {
    fn default() -> Self {
        Likelihood::Tobit
    }
}

impl Likelihood {
    pub fn loglik(&self, y: &[f64], phi: &[f64]) -> f64 {
        match *self {
            Likelihood::Tobit => tobit_loglik(y, phi),
            Likelihood::Gaussian { variance } => y
                .iter()
                .zip(phi)
                .map(|(a, b)| -0.5 * (LN_2PI + variance.ln() + (a - b) * (a - b) / variance))
                .sum(),
        }
    }

    /// Maps a latent value to the observation scale's point prediction (or draw, for Tobit).
    pub fn observe(&self, phi: f64) -> f64 {
        match self {
            Likelihood::Tobit => phi.max(0.0),
            Likelihood::Gaussian { .. } => phi,
        }
    }
}

/// `α_k* = ln 2 / min z_ijk`, the largest `α_k` that keeps every edge's
/// single-metric weight at or above one half.
///
/// Zero dissimilarities are skipped since they never constrain `α_k`.
pub fn alpha_regularization_bound(graph: &ArealGraph, k: usize) -> Result<f64> {
    if k >= graph.q() {
        return Err(domain(format!("metric index {k} out of range (q = {})", graph.q())));
    }
    let zmin = graph
        .edges()
        .iter()
        .map(|e| e.z[k])
        .filter(|&z| z > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !zmin.is_finite() {
        return Err(domain(format!("metric {k} is zero on every edge; bound undefined")));
    }
    Ok(std::f64::consts::LN_2 / zmin)
}

/// Differential light sensitivity: `dB = 40 − 10 log10(asb)`.
pub fn db_from_asb(asb: f64) -> Result<f64> {
    if !(asb.is_finite() && asb > 0.0) {
        return Err(domain(format!("apostilb value {asb} must be finite and positive")));
    }
    Ok(40.0 - 10.0 * asb.log10())
}

pub fn asb_from_db(db: f64) -> Result<f64> {
    let asb = 10f64.powf((40.0 - db) / 10.0);
    if !(asb.is_finite() && asb > 0.0) {
        return Err(domain(format!("decibel value {db} maps outside the representable range")));
    }
    Ok(asb)
}
