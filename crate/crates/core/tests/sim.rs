use nalgebra::DMatrix;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use womble_core::graph::ArealGraph;
use womble_core::sampler::{rng_for, SamplerConfig};
use womble_core::sim::*;
use womble_core::temporal::Correlation;

#[test]
fn true_hyperparameters() {
    let h = true_hypers();
    assert_eq!(h.delta[0], 2.446);
    assert_eq!(h.phi, 0.163);
    assert_eq!(h.t, h.t.transpose());
    assert!(h.t.clone().symmetric_eigenvalues().iter().all(|&e| e > 0.0));
    assert_eq!(t_diag(), DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.820, 0.380, 0.840])));
    assert_eq!(Setting::A.hypers().phi, 100.0);
    assert_eq!(Setting::C.hypers().t, t_diag());
    assert_eq!(Setting::D.hypers(), h);
}

#[test]
fn visit_schedule_shape_and_mean_gap() {
    let mut rng = rng_for(1, 0);
    let days = sample_visit_schedule(7, &mut rng).unwrap();
    assert_eq!(days.len(), 7);
    assert_eq!(days[0], 0.0);
    assert!(days.windows(2).all(|w| w[1] > w[0]));
    assert!(sample_visit_schedule(1, &mut rng).is_err());

    let n = 100_000;
    let s = sample_visit_schedule(n + 1, &mut rng).unwrap();
    let mean_gap = s[n] / n as f64;
    assert!((mean_gap - 117.25).abs() < 1.0, "{mean_gap}");
}

fn pooled_corr(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn theta_replicates(setting: Setting, n: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = rng_for(seed, 0);
    (0..n)
        .map(|_| {
            let days = sample_visit_schedule(7, &mut rng).unwrap();
            sample_theta(&setting.hypers(), &years(&days), Correlation::Exponential, &mut rng).unwrap()
        })
        .collect()
}

#[test]
fn setting_a_has_no_lag_one_autocorrelation() {
    let thetas = theta_replicates(Setting::A, 1000, 2);
    for r in 0..3 {
        let pairs: Vec<(f64, f64)> = thetas
            .iter()
            .flat_map(|th| (0..6).map(move |t| (th[(r, t)], th[(r, t + 1)])))
            .collect();
        let c = pooled_corr(&pairs);
        assert!(c.abs() < 0.1, "row {r}: {c}");
    }
}

#[test]
fn setting_c_is_autocorrelated() {
    let thetas = theta_replicates(Setting::C, 1000, 3);
    let pairs: Vec<(f64, f64)> = thetas
        .iter()
        .flat_map(|th| (0..6).map(move |t| (th[(2, t)], th[(2, t + 1)])))
        .collect();
    assert!(pooled_corr(&pairs) > 0.5);
}

#[test]
fn setting_d_has_negative_scale_alpha_cross_correlation() {
    let thetas = theta_replicates(Setting::D, 1000, 4);
    let pairs: Vec<(f64, f64)> = thetas
        .iter()
        .flat_map(|th| (0..7).map(move |t| (th[(1, t)], th[(2, t)])))
        .collect();
    let c = pooled_corr(&pairs);
    let expected = -0.191 / (0.380_f64 * 0.840).sqrt();
    assert!(c < 0.0 && (c - expected).abs() < 0.05, "{c} vs {expected}");
    let b = theta_replicates(Setting::C, 1000, 4);
    let pairs: Vec<(f64, f64)> = b.iter().flat_map(|th| (0..7).map(move |t| (th[(1, t)], th[(2, t)]))).collect();
    assert!(pooled_corr(&pairs).abs() < 0.05);
}

#[test]
fn truth_cv_matches_recomputation() {
    let g = ArealGraph::vf24_2();
    let model = SamplerConfig::standard(1).model;
    let mut rng = rng_for(5, 0);
    for s in Setting::ALL {
        let ds = generate_dataset(s, &g, 7, &model, &mut rng).unwrap();
        let a: Vec<f64> = (0..7).map(|t| ds.theta[(2, t)].exp()).collect();
        let m = a.iter().sum::<f64>() / 7.0;
        let sd = (a.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 6.0).sqrt();
        assert!((ds.cv_alpha - sd / m).abs() < 1e-14);
        assert_eq!(ds.series.n_visits(), 7);
        assert_eq!(ds.series.n_locations(), g.n());
        for (yv, lv) in ds.series.y.iter().zip(&ds.latent) {
            for (y, l) in yv.iter().zip(lv) {
                assert_eq!(*y, l.max(0.0) * model.y_scale);
            }
        }
    }
}

fn morans_i(x: &[f64], g: &ArealGraph) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut wsum = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if g.is_adjacent(i, j) {
                num += (x[i] - m) * (x[j] - m);
                wsum += 1.0;
            }
        }
    }
    let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    n / wsum * num / den
}

#[test]
fn vanishing_alpha_reduces_to_fixed_adjacency_car() {
    let g = ArealGraph::vf24_2();
    let n = g.n();
    let model = SamplerConfig::standard(1).model;
    let rho = model.rho;
    let mut q = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && g.is_adjacent(i, j) {
                q[(i, j)] = -rho;
                q[(i, i)] += rho;
            }
        }
        q[(i, i)] += 1.0 - rho;
    }
    let l = q.cholesky().unwrap().l();
    let mut rng = rng_for(6, 0);
    let reps = 400;
    let theta = DMatrix::from_fn(3, 1, |r, _| if r == 2 { -30.0 } else { 0.0 });
    let a: Vec<f64> = (0..reps)
        .map(|_| morans_i(&sample_latent(&theta, &g, &model, &mut rng).unwrap()[0], &g))
        .collect();
    let b: Vec<f64> = (0..reps)
        .map(|_| {
            let z = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let x = l.transpose().solve_upper_triangular(&z).unwrap();
            morans_i(x.as_slice(), &g)
        })
        .collect();
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
    };
    let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
    let se2 = va / reps as f64 + vb / reps as f64;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / reps as f64).powi(2) / (reps - 1) as f64 + (vb / reps as f64).powi(2) / (reps - 1) as f64);
    let p = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().cdf(-t.abs());
    assert!(p > 0.01, "Moran means {ma} vs {mb}, p = {p}");
    assert!(ma > 0.1, "{ma}");
}

#[test]
fn cohort_labels_and_shapes() {
    let g = ArealGraph::vf24_2();
    let model = SamplerConfig::standard(1).model;
    let design = CohortDesign {
        n_patients: 10,
        n_progressing: 4,
        n_visits: 6,
        alpha_sd: 0.5,
    };
    let cohort = simulate_cohort(&design, &g, &model, &mut rng_for(7, 0)).unwrap();
    assert_eq!(cohort.len(), 10);
    assert_eq!(cohort.iter().filter(|c| c.1).count(), 4);
    let ids: std::collections::HashSet<&str> = cohort.iter().map(|c| c.0.id.as_str()).collect();
    assert_eq!(ids.len(), 10);
    assert!(cohort.iter().all(|c| c.0.series.n_visits() == 6));
}

#[test]
fn study_rows_and_determinism() {
    let g = ArealGraph::vf24_2();
    let mut cfg = StudyConfig::desk(vec![Setting::A, Setting::D], vec![7], 11);
    cfg.n_theta = 2;
    cfg.n_data_per_theta = 1;
    cfg.sampler.n_iter = 120;
    cfg.sampler.n_burn = 40;
    cfg.sampler.n_thin = 2;
    let (rows, results) = run_study(&cfg, &g);
    assert_eq!(rows.len(), 4);
    assert_eq!(results.len(), 8);
    for r in &rows {
        assert_eq!(r.n_ok + r.n_fail, 2);
        assert!((0.0..=1.0).contains(&r.ec));
    }
    let mut a = Vec::new();
    write_study_csv(&rows, &mut a).unwrap();
    let text = String::from_utf8(a.clone()).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "setting,model,n_visits,bias,mse,ec,mcse_bias,mcse_mse,mcse_ec,n_ok,n_fail"
    );
    assert_eq!(text.lines().count(), 5);
    let (rows2, _) = run_study(&cfg, &g);
    let mut b = Vec::new();
    write_study_csv(&rows2, &mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_budget_scales_replicates() {
    let cfg = StudyConfig::desk(vec![Setting::A], vec![7], 1);
    assert_eq!((cfg.n_theta, cfg.n_data_per_theta, cfg.sampler.n_iter), (20, 5, 5000));
    let full = cfg.full_budget();
    assert_eq!((full.n_theta, full.n_data_per_theta), (100, 10));
}
