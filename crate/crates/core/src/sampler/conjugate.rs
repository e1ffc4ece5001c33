//! Closed-form full conditionals of `δ` and `T` under the separable prior.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{cholesky, symmetrize};
use crate::temporal::centered;

/// Full conditional of `δ`: `MVN(mean, cov)`.
///
/// With `P = Σ(φ)⁻¹` and `s = 1ᵀ P 1`, the precision is `Ω_δ⁻¹ + s T⁻¹`
/// and the canonical mean vector is `Ω_δ⁻¹ μ_δ + T⁻¹ θ P 1`.
pub fn delta_conditional(
    theta: &DMatrix<f64>,
    t: &DMatrix<f64>,
    sigma_inv: &DMatrix<f64>,
    mu_delta: &DVector<f64>,
    omega_delta: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (prec, b) = delta_canonical(theta, t, sigma_inv, mu_delta, omega_delta)?;
    let chol = cholesky(prec, "delta conditional precision")?;
    let mean = chol.solve(&b);
    Ok((mean, symmetrize(chol.inverse())))
}

/// Canonical form `(Λ, b)` of the `δ` full conditional, mean `Λ⁻¹ b`.
pub fn delta_canonical(
    theta: &DMatrix<f64>,
    t: &DMatrix<f64>,
    sigma_inv: &DMatrix<f64>,
    mu_delta: &DVector<f64>,
    omega_delta: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let nu = theta.ncols();
    let ones = DVector::from_element(nu, 1.0);
    let p1 = sigma_inv * &ones;
    let s = ones.dot(&p1);
    let omega_chol = cholesky(omega_delta.clone(), "Omega_delta")?;
    let t_chol = cholesky(t.clone(), "cross-covariance T")?;
    let omega_inv = omega_chol.inverse();
    let t_inv = t_chol.inverse();
    let prec = symmetrize(&omega_inv + &t_inv * s);
    let b = &omega_inv * mu_delta + &t_inv * (theta * p1);
    Ok((prec, b))
}

/// Full conditional of `T`: `IW(ξ + ν, Ψ + R Σ⁻¹ Rᵀ)` with `R = θ − δ1ᵀ`.
pub fn t_conditional(
    theta: &DMatrix<f64>,
    delta: &DVector<f64>,
    sigma_inv: &DMatrix<f64>,
    xi: f64,
    psi: &DMatrix<f64>,
) -> (f64, DMatrix<f64>) {
    let r = centered(theta, delta);
    let scale = symmetrize(psi + &r * sigma_inv * r.transpose());
    (xi + theta.ncols() as f64, scale)
}
