//! Separable matrix-variate prior on the visit-level parameter matrix.
//!
//! `θ` is `(q + 2) × ν` with columns `(μ_t, log τ_t, log α_t)`, and
//! `vec(θ) ~ MVN(1_ν ⊗ δ, Σ(φ) ⊗ T)`. Nothing here forms the Kronecker product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, numerical, Result};
use crate::linalg::{cholesky, logdet};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Temporal correlation family for `Σ(φ)` over visit days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Correlation {
    /// `exp(−φ |x_t − x_t'|)`, `φ > 0` in 1/day.
    #[default]
    Exponential,
    /// `φ^{|x_t − x_t'|}`, `φ ∈ (0, 1)`.
    Ar1,
}

impl std::str::FromStr for Correlation {
    type Err = crate::error::WombleError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" | "exp" => Ok(Correlation::Exponential),
            "ar1" => Ok(Correlation::Ar1),
            other => Err(crate::error::WombleError::Config(format!(
                "unknown correlation family '{other}'"
            ))),
        }
    }
}

impl Correlation {
    pub fn corr(self, phi: f64, lag: f64) -> f64 {
        match self {
            Correlation::Exponential => (-phi * lag).exp(),
            Correlation::Ar1 => phi.powf(lag),
        }
    }

    fn check(self, phi: f64) -> Result<()> {
        let ok = match self {
            Correlation::Exponential => phi > 0.0 && phi.is_finite(),
            Correlation::Ar1 => phi > 0.0 && phi < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("phi = {phi} outside the {self:?} parameter range")))
        }
    }

    /// Solves `corr(φ, lag) = target` for φ.
    fn solve(self, lag: f64, target: f64) -> f64 {
        match self {
            Correlation::Exponential => -target.ln() / lag,
            Correlation::Ar1 => {
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                while hi - lo > 1e-10 {
                    let mid = 0.5 * (lo + hi);
                    if self.corr(mid, lag) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// `ν × ν` correlation matrix `[Σ(φ)]_{t,t'} = corr(φ, |x_t − x_t'|)`.
pub fn temporal_correlation(days: &[f64], phi: f64, family: Correlation) -> Result<DMatrix<f64>> {
    family.check(phi)?;
    if days.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(domain("visit days must be finite and non-negative"));
    }
    let n = days.len();
    Ok(DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            1.0
        } else {
            family.corr(phi, (days[a] - days[b]).abs())
        }
    }))
}

/// Bounds `(a_φ, b_φ)` for the uniform prior on φ.
///
/// `a_φ` lets the longest span between visits keep correlation 0.95 and
/// `b_φ` lets the shortest gap fall to 0.01. For families where correlation
/// increases with φ the two solutions are returned in ascending order.
pub fn phi_bounds(days: &[f64], family: Correlation) -> Result<(f64, f64)> {
    if days.len() < 2 {
        return Err(domain("phi bounds need at least two visits"));
    }
    let mut sorted = days.to_vec();
    sorted.sort_by(f64::total_cmp);
    let x_max = sorted[sorted.len() - 1] - sorted[0];
    let x_min = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if !(x_min > 0.0) {
        return Err(domain("phi bounds need distinct visit days"));
    }
    let strong = family.solve(x_max, 0.95);
    let weak = family.solve(x_min, 0.01);
    let (a, b) = match family {
        Correlation::Exponential => (strong, weak),
        Correlation::Ar1 => (weak, strong),
    };
    if !(a < b) {
        return Err(domain(format!(
            "degenerate phi bounds ({a}, {b}): longest span {x_max} is too large relative to the shortest gap {x_min}"
        )));
    }
    Ok((a, b))
}

/// Hyper-level state `(δ, T, φ)` of the separable prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub delta: DVector<f64>,
    pub t: DMatrix<f64>,
    pub phi: f64,
}

/// Matrix-variate normal log-density of `θ` under `MVN(1 ⊗ δ, Σ ⊗ T)`.
///
/// Uses `log|Σ ⊗ T| = p log|Σ| + ν log|T|` and
/// `vec(R)ᵀ (Σ ⊗ T)⁻¹ vec(R) = tr(T⁻¹ R Σ⁻¹ Rᵀ)` with `R = θ − δ1ᵀ`.
pub fn separable_prior_logdensity(
    theta: &DMatrix<f64>,
    delta: &DVector<f64>,
    t: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let (p, nu) = theta.shape();
    if delta.len() != p || t.shape() != (p, p) || sigma.shape() != (nu, nu) {
        return Err(domain("dimension mismatch in separable prior"));
    }
    let sig = cholesky(sigma.clone(), "temporal correlation Sigma(phi)")?;
    let tc = cholesky(t.clone(), "cross-covariance T")?;
    let resid = centered(theta, delta);
    let x = sig.solve(&resid.transpose());
    let m = &resid * x;
    let quad = tc.solve(&m).trace();
    Ok(-0.5 * (p * nu) as f64 * LN_2PI - 0.5 * p as f64 * logdet(&sig) - 0.5 * nu as f64 * logdet(&tc)
        - 0.5 * quad)
}

/// `θ − δ 1ᵀ`.
pub fn centered(theta: &DMatrix<f64>, delta: &DVector<f64>) -> DMatrix<f64> {
    let mut r = theta.clone();
    for mut c in r.column_iter_mut() {
        c -= delta;
    }
    r
}

/// Matrix-normal conditional of a set of columns given the rest.
///
/// Returns the conditional mean (`p × m`) and the column covariance
/// (`m × m`); the row covariance stays `T`.
pub fn condition_columns(
    theta_obs: &DMatrix<f64>,
    delta: &DVector<f64>,
    sigma_full: &DMatrix<f64>,
    n_obs: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let total = sigma_full.nrows();
    let m = total - n_obs;
    let s_oo = sigma_full.view((0, 0), (n_obs, n_obs)).into_owned();
    let s_of = sigma_full.view((0, n_obs), (n_obs, m)).into_owned();
    let s_ff = sigma_full.view((n_obs, n_obs), (m, m)).into_owned();
    let p = delta.len();
    if n_obs == 0 {
        let mean = DMatrix::from_fn(p, m, |r, _| delta[r]);
        return Ok((mean, s_ff));
    }
    let chol = cholesky(s_oo, "observed-visit correlation block")
        .map_err(|e| numerical(format!("{e}; conditioning failed")))?;
    let k = chol.solve(&s_of);
    let resid = centered(theta_obs, delta);
    let mut mean = resid * &k;
    for mut c in mean.column_iter_mut() {
        c += delta;
    }
    let cov = s_ff - s_of.transpose() * k;
    Ok((mean, crate::linalg::symmetrize(cov)))
}
