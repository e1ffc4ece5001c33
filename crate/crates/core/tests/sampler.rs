mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use womble_core::car::{car_conditional, tobit_loglik, ObsParams, WeightScheme};
use womble_core::data::VfSeries;
use womble_core::graph::ArealGraph;
use womble_core::linalg::{norm_cdf, sample_inverse_wishart};
use womble_core::sampler::conjugate::{delta_conditional, t_conditional};
use womble_core::sampler::{
    fit_space_only, initial_state, rng_for, run_chain, Chain, ChainState, PriorMode, SamplerConfig,
};
use womble_core::sim::{generate_dataset, Setting};
use womble_core::temporal::{temporal_correlation, Correlation, HyperState};

/// Asymptotic Kolmogorov p-value of a one-sample KS statistic.
fn ks_p(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (k, v) in x.iter().enumerate() {
        let f = cdf(*v);
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    let l = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * l * l).exp();
    }
    p.clamp(0.0, 1.0)
}

fn batch_mean_se(x: &[f64]) -> (f64, f64) {
    let b = 50;
    let size = x.len() / b;
    let means: Vec<f64> = (0..b).map(|k| x[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / b as f64;
    let v = means.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    (m, (v / b as f64).sqrt())
}

fn small_cfg() -> SamplerConfig {
    let mut cfg = SamplerConfig::standard(1);
    cfg.model.y_scale = 1.0;
    cfg.model.dm_scale = 1.0;
    cfg
}

#[test]
fn conjugate_updates_match_dense_vec_form() {
    let mut rng = rng_for(301, 0);
    for _ in 0..50 {
        let p = 3;
        let nu = rng.random_range(1..=3);
        let days = random_days(nu, &mut rng);
        let sigma = temporal_correlation(&days, rng.random_range(0.002..0.05), Correlation::Exponential).unwrap();
        let sigma_inv = sigma.clone().try_inverse().unwrap();
        let t = random_spd(p, &mut rng);
        let omega = DMatrix::from_diagonal(&DVector::from_fn(p, |_, _| rng.random_range(0.1..10.0)));
        let mu = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let theta = DMatrix::from_fn(p, nu, |_, _| rng.random_range(-2.0..2.0));
        let (m, c) = delta_conditional(&theta, &t, &sigma_inv, &mu, &omega).unwrap();
        let (dm, dc) = dense_delta_conditional(&theta, &t, &sigma, &mu, &omega);
        assert!((m - dm).amax() < 1e-8);
        assert!((c - dc).amax() < 1e-6);

        let delta = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let psi = random_spd(p, &mut rng);
        let (df, scale) = t_conditional(&theta, &delta, &sigma_inv, 4.0, &psi);
        assert_eq!(df, 4.0 + nu as f64);
        assert!((scale - dense_t_scale(&theta, &delta, &sigma, &psi)).amax() < 1e-6);
    }
}

#[test]
fn delta_conditional_limits() {
    let theta = DMatrix::from_column_slice(3, 1, &[1.5, -0.2, 0.7]);
    let t = DMatrix::identity(3, 3);
    let one = DMatrix::identity(1, 1);
    let mu = DVector::from_vec(vec![3.0, 0.0, 0.0]);
    let (m, _) = delta_conditional(&theta, &t, &one, &mu, &(DMatrix::identity(3, 3) * 1e12)).unwrap();
    assert!((m - theta.column(0)).amax() < 1e-9);
    let (m, _) = delta_conditional(&theta, &t, &one, &mu, &(DMatrix::identity(3, 3) * 1e-12)).unwrap();
    assert!((m - &mu).amax() < 1e-9);
}

#[test]
fn t_scale_with_independent_visits_is_sum_of_outer_products() {
    let theta = DMatrix::from_column_slice(2, 3, &[1.0, 0.5, -0.3, 0.2, 0.4, -1.0]);
    let delta = DVector::from_vec(vec![0.1, -0.1]);
    let psi = DMatrix::identity(2, 2);
    let (_, scale) = t_conditional(&theta, &delta, &DMatrix::identity(3, 3), 3.0, &psi);
    let mut expected = psi.clone();
    for c in theta.column_iter() {
        let r = c - &delta;
        expected += &r * r.transpose();
    }
    assert!((scale - expected).amax() < 1e-14);
}

#[test]
fn inverse_wishart_mean_over_many_draws() {
    let mut rng = rng_for(302, 0);
    let scale = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5]);
    let df = 12.0;
    let n = 100_000;
    let mut acc = DMatrix::zeros(3, 3);
    for _ in 0..n {
        acc += sample_inverse_wishart(df, &scale, &mut rng).unwrap();
    }
    let mean = acc / n as f64;
    let expected = &scale / (df - 4.0);
    for i in 0..3 {
        assert!((mean[(i, i)] / expected[(i, i)] - 1.0).abs() < 0.02);
    }
    assert!((mean[(0, 1)] - expected[(0, 1)]).abs() < 0.02 * expected[(0, 0)]);
}

fn single_visit(y: Vec<f64>) -> VfSeries {
    VfSeries::new(vec![y], vec![0.0]).unwrap()
}

#[test]
fn latent_field_equals_data_without_censoring() {
    let g = grid6();
    let mut cfg = small_cfg();
    cfg.model.priors.phi_bounds = Some((0.01, 0.1));
    let y = vec![1.0, 2.0, 0.5, 1.5, 0.7, 0.9];
    let data = single_visit(y.clone());
    let mut chain = Chain::new(&data, &g, &cfg, PriorMode::Separable, 0).unwrap();
    for _ in 0..10 {
        chain.update_latent(0);
    }
    assert_eq!(chain.state().latent[0], y);
}

#[test]
fn single_censored_site_follows_truncated_conditional() {
    let g = grid6();
    let mut cfg = small_cfg();
    cfg.model.priors.phi_bounds = Some((0.01, 0.1));
    let data = single_visit(vec![0.3, 0.0, 0.5, 0.2, 0.9, 0.1]);
    let mut chain = Chain::new(&data, &g, &cfg, PriorMode::Separable, 0).unwrap();
    let params = ObsParams::from_column(chain.state().theta.column(0).as_slice());
    let (m, v) = car_conditional(1, &chain.state().latent[0], &params, &g, cfg.model.rho, WeightScheme::Continuous).unwrap();
    let s = v.sqrt();
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            chain.update_latent(0);
            chain.state().latent[0][1]
        })
        .collect();
    assert!(draws.iter().all(|x| *x <= 0.0));
    let z0 = norm_cdf(-m / s);
    let p = ks_p(draws, |x| norm_cdf((x - m) / s) / z0);
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn fully_censored_field_with_low_mean_concentrates_near_mean() {
    let g = grid6();
    let mut cfg = small_cfg();
    cfg.model.priors.phi_bounds = Some((0.01, 0.1));
    let data = single_visit(vec![0.0; 6]);
    let mut state = initial_state(&data, &g, &cfg).unwrap();
    state.theta[(0, 0)] = -40.0;
    state.theta[(1, 0)] = 0.0;
    let mut chain = Chain::with_state(&data, &g, &cfg, PriorMode::Separable, 0, state).unwrap();
    let draws: Vec<f64> = (0..50_000)
        .map(|_| {
            chain.update_latent(0);
            chain.state().latent[0][2]
        })
        .collect();
    let (m, se) = batch_mean_se(&draws);
    assert!((m + 40.0).abs() < 3.0 * se + 1e-12, "mean {m}, se {se}");
}

#[test]
fn obs_param_updates_recover_the_prior_without_data() {
    let g = grid6();
    let mut cfg = small_cfg();
    cfg.model.priors.omega_delta = vec![0.5, 0.2, 0.3];
    cfg.model.priors.mu_delta = vec![0.5, 0.1, -0.2];
    let data = single_visit(vec![0.3, 0.1, 0.5, 0.2, 0.9, 0.1]);
    let mut chain = Chain::new(&data, &g, &cfg, PriorMode::IndependentVisits, 4).unwrap();
    let mut gen = rng_for(303, 0);
    let n = 100_000;
    let mut cols = vec![Vec::with_capacity(n); 3];
    for _ in 0..n {
        chain.update_obs_params(0);
        let latent = womble_core::sim::sample_latent(&chain.state().theta, &g, &cfg.model, &mut gen).unwrap();
        let y = latent.clone();
        chain.replace_data(y, latent);
        for (k, c) in cols.iter_mut().enumerate() {
            c.push(chain.state().theta[(k, 0)]);
        }
    }
    for k in 0..3 {
        let (m, se) = batch_mean_se(&cols[k]);
        assert!((m - cfg.model.priors.mu_delta[k]).abs() < 3.5 * se, "component {k}: {m} ± {se}");
        let sq: Vec<f64> = cols[k].iter().map(|v| (v - cfg.model.priors.mu_delta[k]).powi(2)).collect();
        let (v, sev) = batch_mean_se(&sq);
        assert!((v - cfg.model.priors.omega_delta[k]).abs() < 3.5 * sev, "component {k}: var {v} ± {sev}");
    }
}

#[test]
fn phi_is_uniform_with_a_single_visit() {
    let g = grid6();
    let mut cfg = small_cfg();
    cfg.model.priors.phi_bounds = Some((0.001, 0.1));
    cfg.n_iter = 202_000;
    cfg.n_burn = 2_000;
    cfg.n_thin = 40;
    let data = single_visit(vec![0.3, 0.0, 0.5, 0.2, 0.9, 0.1]);
    let draws = run_chain(&data, &g, &cfg).unwrap();
    let phi: Vec<f64> = draws.hyper.iter().map(|h| h.phi).collect();
    assert!(phi.iter().all(|p| *p > 0.001 && *p < 0.1));
    let p = ks_p(phi, |x| (x - 0.001) / 0.099);
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn identical_seeds_give_identical_draws() {
    let g = grid6();
    let mut cfg = small_cfg();
    cfg.n_iter = 1_500;
    cfg.n_burn = 500;
    let data = VfSeries::new(
        vec![vec![0.3, 0.0, 0.5, 0.2, 0.9, 0.1], vec![0.4, 0.0, 0.0, 0.3, 0.8, 0.2], vec![0.2, 0.1, 0.6, 0.0, 0.7, 0.3]],
        vec![0.0, 90.0, 200.0],
    )
    .unwrap();
    let a = run_chain(&data, &g, &cfg).unwrap();
    let b = run_chain(&data, &g, &cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed = 2;
    let c = run_chain(&data, &g, &cfg).unwrap();
    assert_ne!(a.theta, c.theta);
}

#[test]
fn vf_sized_run_keeps_invariants_and_adapts() {
    let g = ArealGraph::vf24_2();
    let mut cfg = SamplerConfig::standard(1);
    cfg.store_latent = true;
    let mut rng = rng_for(304, 0);
    let ds = generate_dataset(Setting::D, &g, 7, &cfg.model, &mut rng).unwrap();
    let draws = run_chain(&ds.series, &g, &cfg).unwrap();
    assert_eq!(draws.len(), 1_600);
    let (a, b) = draws.phi_bounds.unwrap();
    let scaled_y: Vec<Vec<f64>> = ds.series.scaled(0.1).y;
    for (h, lat) in draws.hyper.iter().zip(&draws.latent) {
        assert!(h.t.clone().cholesky().is_some());
        assert!(h.phi > a && h.phi < b);
        for (y, l) in scaled_y.iter().zip(lat) {
            assert_eq!(tobit_loglik(y, l), 0.0);
        }
    }
    for blk in &draws.acceptance.blocks {
        assert!((0.34..=0.54).contains(&blk.rate), "{} rate {}", blk.name, blk.rate);
    }
}

#[test]
fn space_only_matches_single_visit_model_with_degenerate_hyper_level() {
    let g = ArealGraph::vf24_2();
    let mut cfg = SamplerConfig::standard(1);
    cfg.n_iter = 42_000;
    cfg.n_burn = 2_000;
    cfg.n_thin = 4;
    let mut rng = rng_for(305, 0);
    let ds = generate_dataset(Setting::A, &g, 2, &cfg.model, &mut rng).unwrap();
    let data = ds.series.truncate(1);

    let space = fit_space_only(&data, &g, &cfg, 0).unwrap();

    // Pin δ at μ_δ and T at Ω_δ so the separable prior reduces to MVN(μ_δ, Ω_δ).
    let mut st = cfg.clone();
    st.model.weights = WeightScheme::Threshold;
    st.model.priors.phi_bounds = Some((0.01, 0.1));
    let omega = cfg.model.priors.omega_delta.clone();
    st.model.priors.omega_delta = vec![1e-10; 3];
    st.model.priors.xi = 1e7;
    st.model.priors.psi = omega.iter().map(|w| w * (1e7 - 4.0)).collect();
    let mut init = initial_state(&data, &g, &st).unwrap();
    init.hyper = HyperState {
        delta: cfg.model.priors.mu_delta_vec(),
        t: cfg.model.priors.omega_delta_mat(),
        phi: 0.05,
    };
    let joint = Chain::with_state(&data, &g, &st, PriorMode::Separable, 9, init).unwrap().run().unwrap();

    for k in 0..3 {
        let a: Vec<f64> = space[0].theta.iter().map(|m| m[(k, 0)]).collect();
        let b: Vec<f64> = joint.theta.iter().map(|m| m[(k, 0)]).collect();
        let (ma, sa) = batch_mean_se(&a);
        let (mb, sb) = batch_mean_se(&b);
        let z = (ma - mb) / (sa * sa + sb * sb).sqrt();
        assert!(z.abs() < 4.0, "component {k}: {ma} vs {mb} (z = {z})");
    }
}

#[test]
fn space_only_visits_do_not_pool() {
    let g = grid6();
    let mut cfg = small_cfg();
    cfg.n_iter = 2_000;
    cfg.n_burn = 500;
    let v = vec![0.3, 0.0, 0.5, 0.2, 0.9, 0.1];
    let data = VfSeries::new(vec![v.clone(), v], vec![0.0, 100.0]).unwrap();
    let fits = fit_space_only(&data, &g, &cfg, 0).unwrap();
    assert_eq!(fits.len(), 2);
    assert!(fits[0].hyper.is_empty());
    assert_ne!(fits[0].theta, fits[1].theta);
}

#[test]
fn initial_state_follows_the_documented_rule() {
    let g = grid6();
    let cfg = small_cfg();
    let data = VfSeries::new(
        vec![vec![1.0, 0.0, 3.0, 2.0, 0.0, 2.0], vec![2.0, 2.0, 2.0, 2.0, 2.0, 2.0]],
        vec![0.0, 50.0],
    )
    .unwrap();
    let s: ChainState = initial_state(&data, &g, &cfg).unwrap();
    assert!((s.theta[(0, 0)] - 2.0).abs() < 1e-15);
    assert!((s.theta[(1, 0)] - (2.0f64 / 3.0).sqrt().ln()).abs() < 1e-12);
    assert!((s.theta[(1, 1)] - 0.1f64.ln()).abs() < 1e-12);
    assert_eq!(s.theta[(2, 0)], 0.0);
    assert_eq!(s.latent[0][1], -0.1);
    assert_eq!(s.hyper.t, DMatrix::identity(3, 3));
    assert!((s.hyper.delta[0] - 2.0).abs() < 1e-15);
}
