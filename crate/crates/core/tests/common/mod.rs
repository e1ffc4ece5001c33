//! Brute-force oracles and the joint-distribution (Geweke) harness shared by
//! the integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use womble_core::car::{Likelihood, WeightScheme};
use womble_core::data::VfSeries;
use womble_core::graph::{ArealGraph, Edge, Location};
use womble_core::linalg::{sample_inverse_wishart, sample_mvn};
use womble_core::sampler::{rng_for, Chain, ChainState, PriorMode, SamplerConfig};
use womble_core::sim::sample_theta;
use womble_core::temporal::{phi_bounds, Correlation, HyperState};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn locations(n: usize) -> Vec<Location> {
    (0..n)
        .map(|k| Location {
            id: k,
            file_id: k + 1,
            row: (k / 3) as i32,
            col: (k % 3) as i32,
            angle: None,
            blind_spot: false,
        })
        .collect()
}

/// Random graph on `n` nodes: a path (so nobody is isolated) plus each other
/// pair with probability ½, with dissimilarities drawn from U(0, 2).
pub fn random_graph<R: Rng>(n: usize, q: usize, rng: &mut R) -> ArealGraph {
    let u = Uniform::new(0.0, 2.0).unwrap();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || rng.random_bool(0.5) {
                edges.push(Edge {
                    i,
                    j,
                    z: (0..q).map(|_| u.sample(rng)).collect(),
                });
            }
        }
    }
    ArealGraph::from_edges(locations(n), Vec::new(), q, edges).unwrap()
}

/// 2 × 3 grid with queen adjacency and fixed dissimilarities.
pub fn grid6() -> ArealGraph {
    let pairs = [
        (0, 1, 0.2),
        (1, 2, 1.1),
        (3, 4, 0.4),
        (4, 5, 0.9),
        (0, 3, 0.3),
        (1, 4, 0.7),
        (2, 5, 0.5),
        (0, 4, 1.4),
        (1, 3, 0.6),
        (1, 5, 1.2),
        (2, 4, 0.8),
    ];
    let edges = pairs.iter().map(|&(i, j, z)| Edge { i, j, z: vec![z] }).collect();
    ArealGraph::from_edges(locations(6), Vec::new(), 1, edges).unwrap()
}

/// Dense `W` from explicit pair loops, independent of the edge list layout.
pub fn dense_weights(graph: &ArealGraph, alpha: &[f64], scheme: WeightScheme) -> DMatrix<f64> {
    let n = graph.n();
    DMatrix::from_fn(n, n, |i, j| match graph.dissim(i, j) {
        Some(z) if i != j => {
            let w = (-z.iter().zip(alpha).map(|(a, b)| a * b).sum::<f64>()).exp();
            match scheme {
                WeightScheme::Continuous => w,
                WeightScheme::Threshold => f64::from(u8::from(w >= 0.5)),
            }
        }
        _ => 0.0,
    })
}

/// `ρ(D − W) + (1 − ρ)I`.
pub fn dense_precision(graph: &ArealGraph, alpha: &[f64], rho: f64, scheme: WeightScheme) -> DMatrix<f64> {
    let w = dense_weights(graph, alpha, scheme);
    let n = w.nrows();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| w.row(i).sum()));
    (d - w) * rho + DMatrix::identity(n, n) * (1.0 - rho)
}

/// MVN log-density through LU inverse and determinant.
pub fn dense_mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let k = x.len() as f64;
    let lu = cov.clone().lu();
    let inv = lu.try_inverse().expect("invertible covariance");
    let det = cov.clone().lu().determinant();
    let r = x - mean;
    -0.5 * k * LN_2PI - 0.5 * det.ln() - 0.5 * (r.transpose() * inv * &r)[0]
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-stacking `vec`.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn dense_separable_logpdf(
    theta: &DMatrix<f64>,
    delta: &DVector<f64>,
    t: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> f64 {
    let nu = theta.ncols();
    let mean = kron(&DMatrix::from_element(nu, 1, 1.0), &DMatrix::from_column_slice(delta.len(), 1, delta.as_slice()));
    dense_mvn_logpdf(&vec_of(theta), &DVector::from_column_slice(mean.as_slice()), &kron(sigma, t))
}

/// Gaussian conditioning of `x[free] | x[given] = value` on a dense joint.
pub fn dense_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    given: &[usize],
    value: &DVector<f64>,
    free: &[usize],
) -> (DVector<f64>, DMatrix<f64>) {
    let sub = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |a, b| cov[(r[a], c[b])]);
    let s_gg = sub(given, given);
    let s_fg = sub(free, given);
    let s_ff = sub(free, free);
    let inv = s_gg.try_inverse().expect("invertible block");
    let mg = DVector::from_fn(given.len(), |a, _| mean[given[a]]);
    let mf = DVector::from_fn(free.len(), |a, _| mean[free[a]]);
    let m = mf + &s_fg * &inv * (value - mg);
    let c = s_ff - &s_fg * inv * s_fg.transpose();
    (m, c)
}

/// `δ | θ` in vec form: `vec θ = (1 ⊗ I)δ + e`, `e ~ N(0, Σ ⊗ T)`.
pub fn dense_delta_conditional(
    theta: &DMatrix<f64>,
    t: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    mu_delta: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (p, nu) = theta.shape();
    let a = kron(&DMatrix::from_element(nu, 1, 1.0), &DMatrix::identity(p, p));
    let v_inv = kron(sigma, t).try_inverse().unwrap();
    let o_inv = omega.clone().try_inverse().unwrap();
    let prec = &o_inv + a.transpose() * &v_inv * &a;
    let cov = prec.try_inverse().unwrap();
    let mean = &cov * (o_inv * mu_delta + a.transpose() * v_inv * vec_of(theta));
    (mean, cov)
}

/// `T | θ, δ` scale by explicit double sum over visit pairs.
pub fn dense_t_scale(theta: &DMatrix<f64>, delta: &DVector<f64>, sigma: &DMatrix<f64>, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let nu = theta.ncols();
    let p_inv = sigma.clone().try_inverse().unwrap();
    let mut s = psi.clone();
    for a in 0..nu {
        for b in 0..nu {
            let ra = theta.column(a) - delta;
            let rb = theta.column(b) - delta;
            s += ra * rb.transpose() * p_inv[(a, b)];
        }
    }
    s
}

/// Random SPD matrix `A Aᵀ + εI`.
pub fn random_spd<R: Rng>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let u = Uniform::new(-1.0, 1.0).unwrap();
    let a = DMatrix::from_fn(p, p, |_, _| u.sample(rng));
    &a * a.transpose() + DMatrix::identity(p, p) * 0.3
}

pub fn random_days<R: Rng>(nu: usize, rng: &mut R) -> Vec<f64> {
    let mut days = vec![0.0];
    for _ in 1..nu {
        let last = *days.last().unwrap();
        days.push(last + rng.random_range(10.0..200.0_f64).round());
    }
    days
}

/// Small-model setup for the joint-distribution test.
pub struct GewekeSetup {
    pub graph: ArealGraph,
    pub days: Vec<f64>,
    pub cfg: SamplerConfig,
}

impl GewekeSetup {
    /// 6 locations, 3 visits, one metric, proper and fairly tight hyperpriors
    /// so that every tested moment exists.
    pub fn standard() -> Self {
        let mut cfg = SamplerConfig::standard(1);
        cfg.model.y_scale = 1.0;
        cfg.model.dm_scale = 1.0;
        cfg.model.priors.mu_delta = vec![0.3, 0.0, 0.0];
        cfg.model.priors.omega_delta = vec![0.1, 0.05, 0.1];
        cfg.model.priors.xi = 13.0;
        cfg.model.priors.psi = vec![2.7, 0.9, 0.9];
        cfg.n_burn = 5_000;
        Self {
            graph: grid6(),
            days: vec![0.0, 60.0, 200.0],
            cfg,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        phi_bounds(&self.days, Correlation::Exponential).unwrap()
    }

    /// One draw of every quantity from the prior and the likelihood.
    pub fn forward<R: Rng>(&self, rng: &mut R) -> (ChainState, Vec<Vec<f64>>) {
        let pr = &self.cfg.model.priors;
        let omega = pr.omega_delta_mat();
        let l = omega.clone().cholesky().unwrap().l();
        let delta = sample_mvn(&pr.mu_delta_vec(), &l, rng);
        let t = sample_inverse_wishart(pr.xi, &pr.psi_mat(), rng).unwrap();
        let (a, b) = self.bounds();
        let phi = rng.random_range(a..b);
        let hyper = HyperState { delta, t, phi };
        let theta = sample_theta(&hyper, &self.days, self.cfg.model.correlation, rng).unwrap();
        let latent = womble_core::sim::sample_latent(&theta, &self.graph, &self.cfg.model, rng).unwrap();
        let y = observe(&latent);
        (ChainState { theta, latent, hyper }, y)
    }
}

pub fn observe(latent: &[Vec<f64>]) -> Vec<Vec<f64>> {
    latent.iter().map(|v| v.iter().map(|x| Likelihood::Tobit.observe(*x)).collect()).collect()
}

/// Scalar functionals of the state whose moments are compared.
pub fn functionals(s: &ChainState) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..s.theta.ncols() {
        out.push(s.theta[(0, t)]);
        out.push(s.theta[(1, t)].exp());
        out.push(s.theta[(2, t)].exp());
    }
    out.extend(s.hyper.delta.iter());
    out.extend(s.hyper.t.diagonal().iter());
    out.push(s.hyper.phi);
    out
}

pub fn functional_names(nu: usize) -> Vec<String> {
    let mut out = Vec::new();
    for t in 1..=nu {
        out.push(format!("mu[{t}]"));
        out.push(format!("tau[{t}]"));
        out.push(format!("alpha[{t}]"));
    }
    for k in 0..3 {
        out.push(format!("delta[{k}]"));
    }
    for k in 0..3 {
        out.push(format!("T[{k}{k}]"));
    }
    out.push("phi".into());
    out
}

pub struct GewekeResult {
    pub names: Vec<String>,
    pub z: Vec<f64>,
}

impl GewekeResult {
    pub fn fraction_within(&self, bound: f64) -> f64 {
        self.z.iter().filter(|z| z.abs() < bound).count() as f64 / self.z.len() as f64
    }
}

fn mean_se_iid(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn mean_se_batch(x: &[f64], batches: usize) -> (f64, f64) {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let (m, se) = mean_se_iid(&means);
    (m, se)
}

/// Marginal-conditional versus successive-conditional simulation; returns
/// a z-score for the first and second moment of every functional.
pub fn geweke(setup: &GewekeSetup, n: usize, seed: u64) -> GewekeResult {
    let mut rng: ChaCha8Rng = rng_for(seed, 1);
    let k = functional_names(setup.days.len()).len();
    let mut mc: Vec<Vec<f64>> = vec![Vec::with_capacity(n); k];
    for _ in 0..n {
        let (s, _) = setup.forward(&mut rng);
        for (c, v) in functionals(&s).into_iter().enumerate() {
            mc[c].push(v);
        }
    }

    let (state, y) = setup.forward(&mut rng);
    let series = VfSeries::new(y, setup.days.clone()).unwrap();
    let mut chain = Chain::with_state(&series, &setup.graph, &setup.cfg, PriorMode::Separable, 2, state).unwrap();
    let mut data_rng = rng_for(seed, 3);
    let mut sc: Vec<Vec<f64>> = vec![Vec::with_capacity(n); k];
    for it in 0..setup.cfg.n_burn + n {
        chain.sweep().unwrap();
        let latent =
            womble_core::sim::sample_latent(&chain.state().theta, &setup.graph, &setup.cfg.model, &mut data_rng).unwrap();
        chain.replace_data(observe(&latent), latent);
        if it >= setup.cfg.n_burn {
            for (c, v) in functionals(chain.state()).into_iter().enumerate() {
                sc[c].push(v);
            }
        }
    }

    let mut names = Vec::new();
    let mut z = Vec::new();
    for (c, name) in functional_names(setup.days.len()).into_iter().enumerate() {
        for power in [1, 2] {
            let a: Vec<f64> = mc[c].iter().map(|v| v.powi(power)).collect();
            let b: Vec<f64> = sc[c].iter().map(|v| v.powi(power)).collect();
            let (ma, sa) = mean_se_iid(&a);
            let (mb, sb) = mean_se_batch(&b, 50);
            names.push(if power == 1 { format!("E[{name}]") } else { format!("E[{name}^2]") });
            z.push((ma - mb) / (sa * sa + sb * sb).sqrt());
        }
    }
    GewekeResult { names, z }
}

/// Calls `f(scores, labels)` once for every distinct ranked configuration of
/// `n` cases: an ordered sequence of tie groups, each with its own count of
/// positives and negatives. Cases are placed in shuffled positions so the
/// caller also sees arbitrary input order. Configurations missing a class are
/// skipped. Returns the number of configurations visited.
pub fn for_each_ranked_configuration<F: FnMut(&[f64], &[bool])>(n: usize, seed: u64, mut f: F) -> usize {
    fn rec<F: FnMut(&[f64], &[bool])>(
        left: usize,
        groups: &mut Vec<(usize, usize)>,
        rng: &mut ChaCha8Rng,
        count: &mut usize,
        f: &mut F,
    ) {
        if left == 0 {
            let mut cases: Vec<(f64, bool)> = Vec::new();
            for (g, &(a, b)) in groups.iter().enumerate() {
                let s = g as f64 * 0.5 - 1.0;
                cases.extend(std::iter::repeat_n((s, true), a));
                cases.extend(std::iter::repeat_n((s, false), b));
            }
            let pos = groups.iter().map(|g| g.0).sum::<usize>();
            if pos == 0 || pos == cases.len() {
                return;
            }
            for k in (1..cases.len()).rev() {
                cases.swap(k, rng.random_range(0..=k));
            }
            let scores: Vec<f64> = cases.iter().map(|c| c.0).collect();
            let labels: Vec<bool> = cases.iter().map(|c| c.1).collect();
            *count += 1;
            f(&scores, &labels);
            return;
        }
        for size in 1..=left {
            for a in 0..=size {
                groups.push((a, size - a));
                rec(left - size, groups, rng, count, f);
                groups.pop();
            }
        }
    }
    let mut rng = rng_for(seed, n as u64);
    let mut count = 0;
    rec(n, &mut Vec::new(), &mut rng, &mut count, &mut f);
    count
}

/// Pairwise concordance counted directly: `(2 × concordant + ties, 2 × pairs)`.
pub fn concordance_counts(scores: &[f64], labels: &[bool]) -> (u64, u64) {
    let mut num = 0;
    let mut den = 0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 2;
                if scores[i] > scores[j] {
                    num += 2;
                } else if scores[i] == scores[j] {
                    num += 1;
                }
            }
        }
    }
    (num, den)
}
