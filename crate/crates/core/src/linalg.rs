//! Dense linear-algebra and sampling helpers shared by the model layers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{numerical, Result};

pub type Chol = Cholesky<f64, Dyn>;

pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Chol> {
    Cholesky::new(m).ok_or_else(|| numerical(format!("{what} is not positive-definite")))
}

pub fn logdet(chol: &Chol) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn std_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draw from `MVN(mean, L Lᵀ)` given the lower Cholesky factor `L`.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, l: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    mean + l * std_normal_vec(mean.len(), rng)
}

/// Draw from `MVN(P⁻¹ b, P⁻¹)` given the Cholesky factor of the precision `P`.
pub fn sample_mvn_canonical<R: Rng + ?Sized>(b: &DVector<f64>, prec: &Chol, rng: &mut R) -> DVector<f64> {
    let mean = prec.solve(b);
    let z = std_normal_vec(b.len(), rng);
    let dev = prec
        .l_dirty()
        .lower_triangle()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("cholesky factor has positive diagonal");
    mean + dev
}

/// Inverse-Wishart draw with density ∝ |X|^{-(df+p+1)/2} exp(-tr(Ψ X⁻¹)/2).
///
/// Uses the Bartlett decomposition of the Wishart(df, Ψ⁻¹) precision.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= (p as f64) - 1.0 {
        return Err(numerical(format!("inverse-Wishart df {df} too small for dimension {p}")));
    }
    let scale_chol = cholesky(scale.clone(), "inverse-Wishart scale")?;
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| numerical(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    // With Ψ = L Lᵀ, W = L⁻ᵀ A Aᵀ L⁻¹ ~ Wishart(df, Ψ⁻¹), so W⁻¹ = Bᵀ B with B = A⁻¹ Lᵀ.
    let b = a
        .solve_lower_triangular(&scale_chol.l().transpose())
        .expect("bartlett factor invertible");
    let x = b.transpose() * &b;
    Ok(symmetrize(x))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Below this standardized bound the inverse-CDF route loses precision and
/// the exponential-proposal rejection sampler takes over.
const TAIL_SWITCH: f64 = -6.0;

/// Draw from `N(mean, sd²)` truncated to `(-∞, upper]`.
pub fn sample_truncnorm_upper<R: Rng + ?Sized>(mean: f64, sd: f64, upper: f64, rng: &mut R) -> f64 {
    let b = (upper - mean) / sd;
    let x = if b > TAIL_SWITCH {
        let pb = norm_cdf(b);
        let u: f64 = rng.random::<f64>() * pb;
        let x = norm_quantile(u.max(f64::MIN_POSITIVE));
        if x.is_finite() {
            x.min(b)
        } else {
            -sample_tail_robert(-b, rng)
        }
    } else {
        -sample_tail_robert(-b, rng)
    };
    mean + sd * x
}

/// Robert (1995) exponential-proposal sampler for a standard normal restricted to `[a, ∞)`, `a > 0`.
pub fn sample_tail_robert<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        let u: f64 = rng.random();
        if u <= (-0.5 * (z - lambda) * (z - lambda)).exp() {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normal_cdf_quantile_roundtrip() {
        for &p in &[1e-10, 0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-12 * p.max(1e-3) * 1e3);
        }
        let c = norm_cdf(1.959963984540054);
        assert!((c - 0.975).abs() < 1e-10, "{c:e}");
    }

    #[test]
    fn truncnorm_respects_bound_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, s, up) = (1.0, 2.0, 0.0);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_truncnorm_upper(m, s, up, &mut rng);
            assert!(x <= up);
            sum += x;
        }
        let b = (up - m) / s;
        let oracle = m - s * norm_pdf(b) / norm_cdf(b);
        assert!((sum / n as f64 - oracle).abs() < 0.01, "{} vs {oracle}", sum / n as f64);
    }

    #[test]
    fn truncnorm_far_tail_uses_rejection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // bound 40 SDs below the mean
        let n = 50_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample_truncnorm_upper(40.0, 1.0, 0.0, &mut rng);
            assert!(x <= 0.0 && x.is_finite());
            sum += x;
        }
        // E[X | X <= 0] for N(40,1) ≈ -1/40 (Mills ratio asymptotics)
        let mean = sum / n as f64;
        assert!((mean + 0.02498).abs() < 0.002, "{mean}");
    }

    #[test]
    fn inverse_wishart_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let df = 8.0;
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inverse_wishart(df, &scale, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let oracle = &scale / (df - 2.0 - 1.0);
        for k in 0..4 {
            assert!((mean[k] - oracle[k]).abs() < 0.02 * oracle[(0, 0)], "{mean} vs {oracle}");
        }
    }
}
