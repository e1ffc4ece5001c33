//! Forward simulation from the generative model and the coverage study.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::car::CarStructure;
use crate::data::{Patient, VfSeries};
use crate::diagnostics::{cv, cv_summary, CvSummary};
use crate::error::{Result, WombleError};
use crate::graph::ArealGraph;
use crate::linalg::{cholesky, std_normal_vec};
use crate::sampler::{fit_space_only, rng_for, run_chain_stream, scale_graph, ModelConfig, SamplerConfig};
use crate::temporal::{temporal_correlation, Correlation, HyperState};

/// Mean gap between visits, in days.
pub const VISIT_GAP_RATE: f64 = 117.25;
/// Temporal decay that makes exponential correlation vanish between visits.
pub const PHI_INDEPENDENT: f64 = 100.0;
/// The generating `φ` values are per year; visit days are divided by this.
pub const DAYS_PER_YEAR: f64 = 365.0;

/// Generating hyperparameters for a single Garway-Heath metric (`q = 1`).
pub fn true_hypers() -> HyperState {
    HyperState {
        delta: DVector::from_vec(vec![2.446, 0.070, 0.974]),
        t: DMatrix::from_row_slice(
            3,
            3,
            &[0.820, 0.004, -0.028, 0.004, 0.380, -0.191, -0.028, -0.191, 0.840],
        ),
        phi: 0.163,
    }
}

/// `Diag(T)` of [`true_hypers`].
pub fn t_diag() -> DMatrix<f64> {
    DMatrix::from_diagonal(&true_hypers().t.diagonal())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    A,
    B,
    C,
    D,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::A, Setting::B, Setting::C, Setting::D];

    pub fn temporal(self) -> bool {
        matches!(self, Setting::C | Setting::D)
    }

    pub fn cross_cov(self) -> bool {
        matches!(self, Setting::B | Setting::D)
    }

    pub fn label(self) -> &'static str {
        match self {
            Setting::A => "A",
            Setting::B => "B",
            Setting::C => "C",
            Setting::D => "D",
        }
    }

    /// Generating `(δ, T, φ)` for this setting.
    pub fn hypers(self) -> HyperState {
        let mut h = true_hypers();
        if !self.cross_cov() {
            h.t = t_diag();
        }
        if !self.temporal() {
            h.phi = PHI_INDEPENDENT;
        }
        h
    }
}

impl FromStr for Setting {
    type Err = WombleError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Setting::A),
            "B" | "b" => Ok(Setting::B),
            "C" | "c" => Ok(Setting::C),
            "D" | "d" => Ok(Setting::D),
            other => Err(WombleError::Config(format!("unknown simulation setting '{other}'"))),
        }
    }
}

/// Day 0 followed by cumulative Poisson gaps; zero gaps are redrawn.
pub fn sample_visit_schedule<R: Rng + ?Sized>(n_visits: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n_visits < 2 {
        return Err(WombleError::Config("a visit schedule needs at least two visits".into()));
    }
    let pois = Poisson::new(VISIT_GAP_RATE).expect("positive rate");
    let mut days = Vec::with_capacity(n_visits);
    days.push(0.0);
    while days.len() < n_visits {
        let gap: f64 = pois.sample(rng);
        if gap > 0.0 {
            days.push(days[days.len() - 1] + gap);
        }
    }
    Ok(days)
}

/// Draws `θ ~ MVN(1 ⊗ δ, Σ(φ) ⊗ T)` as `δ1ᵀ + L_T Z L_Σᵀ`; `times` are in
/// the units `φ` is expressed in.
pub fn sample_theta<R: Rng + ?Sized>(
    hypers: &HyperState,
    times: &[f64],
    correlation: Correlation,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = hypers.delta.len();
    let nu = times.len();
    let sigma = temporal_correlation(times, hypers.phi, correlation)?;
    let ls = cholesky(sigma, "generating Sigma(phi)")?.l();
    let lt = cholesky(hypers.t.clone(), "generating T")?.l();
    let z = DMatrix::from_iterator(p, nu, std_normal_vec(p * nu, rng).iter().copied());
    let mut theta = lt * z * ls.transpose();
    for mut c in theta.column_iter_mut() {
        c += &hypers.delta;
    }
    Ok(theta)
}

/// The generating `φ` of every setting is per year.
pub fn years(days: &[f64]) -> Vec<f64> {
    days.iter().map(|d| d / DAYS_PER_YEAR).collect()
}

/// Latent CAR fields `φ_t ~ MVN(μ_t 1, τ_t² Q(α_t)⁻¹)` on the model scale.
pub fn sample_latent<R: Rng + ?Sized>(
    theta: &DMatrix<f64>,
    graph: &ArealGraph,
    model: &ModelConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let scaled = scale_graph(graph, model.dm_scale)?;
    sample_latent_scaled(theta, &scaled, model, rng)
}

pub(crate) fn sample_latent_scaled<R: Rng + ?Sized>(
    theta: &DMatrix<f64>,
    scaled: &ArealGraph,
    model: &ModelConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let n = scaled.n();
    (0..theta.ncols())
        .map(|t| {
            let col = theta.column(t);
            let alpha: Vec<f64> = col.iter().skip(2).map(|v| v.exp()).collect();
            let car = CarStructure::new(scaled, &alpha, model.rho, model.weights)?;
            let z = std_normal_vec(n, rng);
            let x = car.chol().l().transpose().solve_upper_triangular(&z).expect("nonsingular factor");
            let tau = col[1].exp();
            Ok(x.iter().map(|v| col[0] + tau * v).collect())
        })
        .collect()
}

/// Observed dB series from latent fields: Tobit clamp and unit conversion.
pub fn observe(latent: &[Vec<f64>], days: &[f64], model: &ModelConfig) -> Result<VfSeries> {
    let y = latent
        .iter()
        .map(|v| v.iter().map(|x| model.likelihood.observe(*x) * model.y_scale).collect())
        .collect();
    VfSeries::new(y, days.to_vec())
}

/// One simulated series together with its generating truth.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub series: VfSeries,
    pub theta: DMatrix<f64>,
    pub latent: Vec<Vec<f64>>,
    /// Sample CV of `α_{t,1}` over visits.
    pub cv_alpha: f64,
}

/// Coefficient of variation of `exp(θ_{2,·})` over visits.
pub fn true_cv_alpha(theta: &DMatrix<f64>) -> f64 {
    let a: Vec<f64> = theta.row(2).iter().map(|v| v.exp()).collect();
    cv(&a)
}

/// Draws `θ`, then one dataset from it.
pub fn generate_dataset<R: Rng + ?Sized>(
    setting: Setting,
    graph: &ArealGraph,
    n_visits: usize,
    model: &ModelConfig,
    rng: &mut R,
) -> Result<SimDataset> {
    let days = sample_visit_schedule(n_visits, rng)?;
    let theta = sample_theta(&setting.hypers(), &years(&days), model.correlation, rng)?;
    dataset_from_theta(theta, &days, graph, model, rng)
}

/// Simulates data for a fixed `θ` and visit schedule.
pub fn dataset_from_theta<R: Rng + ?Sized>(
    theta: DMatrix<f64>,
    days: &[f64],
    graph: &ArealGraph,
    model: &ModelConfig,
    rng: &mut R,
) -> Result<SimDataset> {
    let latent = sample_latent(&theta, graph, model, rng)?;
    let series = observe(&latent, days, model)?;
    Ok(SimDataset {
        cv_alpha: true_cv_alpha(&theta),
        series,
        theta,
        latent,
    })
}

/// Labeled cohort design: stable patients keep one `θ` column at every
/// visit, progressing patients have `log α_t` drift as a Gaussian random walk
/// from the first visit with step standard deviation `alpha_sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDesign {
    pub n_patients: usize,
    pub n_progressing: usize,
    pub n_visits: usize,
    pub alpha_sd: f64,
}

impl Default for CohortDesign {
    fn default() -> Self {
        Self {
            n_patients: 50,
            n_progressing: 25,
            n_visits: 8,
            alpha_sd: 0.5,
        }
    }
}

/// Simulates a labeled cohort; the first `n_progressing` patients progress.
pub fn simulate_cohort<R: Rng + ?Sized>(
    design: &CohortDesign,
    graph: &ArealGraph,
    model: &ModelConfig,
    rng: &mut R,
) -> Result<Vec<(Patient, bool)>> {
    let h = true_hypers();
    let lt = cholesky(t_diag(), "T_Diag")?.l();
    (0..design.n_patients)
        .map(|k| {
            let progressing = k < design.n_progressing;
            let days = sample_visit_schedule(design.n_visits, rng)?;
            let base = &h.delta + &lt * std_normal_vec(3, rng);
            let mut theta = DMatrix::from_fn(3, design.n_visits, |r, _| base[r]);
            if progressing {
                let mut drift = 0.0;
                for t in 1..design.n_visits {
                    drift += design.alpha_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
                    theta[(2, t)] += drift;
                }
            }
            let ds = dataset_from_theta(theta, &days, graph, model, rng)?;
            Ok((
                Patient {
                    id: format!("p{:03}", k + 1),
                    series: ds.series,
                },
                progressing,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitModel {
    SpatioTemporal,
    Space,
}

impl FitModel {
    pub fn label(self) -> &'static str {
        match self {
            FitModel::SpatioTemporal => "st",
            FitModel::Space => "space",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub settings: Vec<Setting>,
    pub n_visits: Vec<usize>,
    pub n_theta: usize,
    pub n_data_per_theta: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
}

impl StudyConfig {
    /// 20 `θ` draws × 5 datasets, 5,000 iterations.
    pub fn desk(settings: Vec<Setting>, n_visits: Vec<usize>, seed: u64) -> Self {
        let mut sampler = SamplerConfig::standard(1);
        sampler.n_iter = 5_000;
        sampler.n_burn = 1_000;
        sampler.n_thin = 4;
        sampler.seed = seed;
        Self {
            settings,
            n_visits,
            n_theta: 20,
            n_data_per_theta: 5,
            seed,
            sampler,
        }
    }

    /// 100 `θ` draws × 10 datasets.
    /// Replicate counts must fit the RNG stream layout.
    pub fn validate(&self) -> Result<()> {
        if self.n_theta == 0 || self.n_theta >= 1 << 28 {
            return Err(WombleError::Config(format!("n_theta {} out of range", self.n_theta)));
        }
        if self.n_data_per_theta == 0 || self.n_data_per_theta > 256 {
            return Err(WombleError::Config(format!(
                "n_data_per_theta {} must be in 1..=256",
                self.n_data_per_theta
            )));
        }
        if self.n_visits.iter().any(|&nu| !(2..1 << 12).contains(&nu)) {
            return Err(WombleError::Config("visit counts must be in 2..4096".into()));
        }
        if self.settings.is_empty() || self.n_visits.is_empty() {
            return Err(WombleError::Config("no settings or visit counts requested".into()));
        }
        self.sampler.validate(1)
    }

    pub fn full_budget(mut self) -> Self {
        self.n_theta = 100;
        self.n_data_per_theta = 10;
        self
    }
}

/// Per-dataset result of one fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub setting: Setting,
    pub model: FitModel,
    pub n_visits: usize,
    pub theta_index: usize,
    pub data_index: usize,
    pub truth: f64,
    pub estimate: Option<CvSummary>,
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn covered(&self) -> Option<bool> {
        self.estimate.as_ref().map(|e| e.lower <= self.truth && self.truth <= e.upper)
    }
}

/// One row of the study table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub setting: Setting,
    pub model: FitModel,
    pub n_visits: usize,
    pub bias: f64,
    pub mse: f64,
    pub ec: f64,
    pub mcse_bias: f64,
    pub mcse_mse: f64,
    pub mcse_ec: f64,
    pub n_ok: usize,
    pub n_fail: usize,
}

/// Stream id of replicate `(setting, ν, θ index)`. Leaves the low 20 bits
/// of the 64-bit stream space free for dataset and per-visit sub-streams.
fn replicate_stream(setting: Setting, n_visits: usize, theta_index: usize) -> u64 {
    debug_assert!(n_visits < 1 << 12 && theta_index < 1 << 28);
    ((setting as u64) << 40) | ((n_visits as u64) << 28) | theta_index as u64
}

/// Simulates every dataset of one `θ` draw and fits both models to each.
///
/// The visit schedule is drawn once per `θ` because `θ` itself depends on it.
pub fn run_theta_replicate(
    setting: Setting,
    n_visits: usize,
    theta_index: usize,
    cfg: &StudyConfig,
    graph: &ArealGraph,
) -> Vec<ReplicateResult> {
    let stream = replicate_stream(setting, n_visits, theta_index);
    let mut rng = rng_for(cfg.seed, stream);
    let model = &cfg.sampler.model;
    let fail = |m: FitModel, d: usize, truth: f64, e: String| ReplicateResult {
        setting,
        model: m,
        n_visits,
        theta_index,
        data_index: d,
        truth,
        estimate: None,
        error: Some(e),
    };
    let generated = sample_visit_schedule(n_visits, &mut rng)
        .and_then(|days| sample_theta(&setting.hypers(), &years(&days), model.correlation, &mut rng).map(|th| (days, th)));
    let (days, theta) = match generated {
        Ok(x) => x,
        Err(e) => {
            return (0..cfg.n_data_per_theta)
                .flat_map(|d| {
                    [
                        fail(FitModel::SpatioTemporal, d, f64::NAN, e.to_string()),
                        fail(FitModel::Space, d, f64::NAN, e.to_string()),
                    ]
                })
                .collect()
        }
    };
    let mut out = Vec::with_capacity(2 * cfg.n_data_per_theta);
    for d in 0..cfg.n_data_per_theta {
        let truth = true_cv_alpha(&theta);
        let data = match dataset_from_theta(theta.clone(), &days, graph, model, &mut rng) {
            Ok(x) => x,
            Err(e) => {
                out.push(fail(FitModel::SpatioTemporal, d, truth, e.to_string()));
                out.push(fail(FitModel::Space, d, truth, e.to_string()));
                continue;
            }
        };
        let fit_stream = (stream << 8) | d as u64;
        let st = run_chain_stream(&data.series, graph, &cfg.sampler, fit_stream)
            .and_then(|draws| cv_summary(&draws.alpha(0)));
        let sp = fit_space_only(&data.series, graph, &cfg.sampler, fit_stream).and_then(|per_visit| {
            let alpha = crate::diagnostics::pair_space_alpha(&per_visit, 0)?;
            cv_summary(&alpha)
        });
        for (m, r) in [(FitModel::SpatioTemporal, st), (FitModel::Space, sp)] {
            out.push(match r {
                Ok(est) => ReplicateResult {
                    setting,
                    model: m,
                    n_visits,
                    theta_index,
                    data_index: d,
                    truth,
                    estimate: Some(est),
                    error: None,
                },
                Err(e) => fail(m, d, truth, e.to_string()),
            });
        }
    }
    out
}

/// Runs every `(setting, ν, θ)` replicate in parallel and returns the raw results.
pub fn run_replicates(cfg: &StudyConfig, graph: &ArealGraph) -> Vec<ReplicateResult> {
    let jobs: Vec<(Setting, usize, usize)> = cfg
        .settings
        .iter()
        .flat_map(|&s| cfg.n_visits.iter().flat_map(move |&nu| (0..cfg.n_theta).map(move |k| (s, nu, k))))
        .collect();
    jobs.par_iter()
        .flat_map_iter(|&(s, nu, k)| run_theta_replicate(s, nu, k, cfg, graph))
        .collect()
}

/// Aggregates replicate results into bias, MSE and coverage with Monte Carlo SEs.
pub fn summarize(results: &[ReplicateResult], cfg: &StudyConfig) -> Vec<StudyRow> {
    let mut rows = Vec::new();
    for &setting in &cfg.settings {
        for &model in &[FitModel::SpatioTemporal, FitModel::Space] {
            for &nu in &cfg.n_visits {
                let sel: Vec<&ReplicateResult> = results
                    .iter()
                    .filter(|r| r.setting == setting && r.model == model && r.n_visits == nu)
                    .collect();
                let ok: Vec<&ReplicateResult> = sel.iter().copied().filter(|r| r.estimate.is_some()).collect();
                let err: Vec<f64> = ok.iter().map(|r| r.estimate.as_ref().unwrap().mean - r.truth).collect();
                let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
                let cov: Vec<f64> = ok.iter().map(|r| f64::from(u8::from(r.covered().unwrap()))).collect();
                let (bias, mcse_bias) = mean_and_se(&err);
                let (mse, mcse_mse) = mean_and_se(&sq);
                let (ec, mcse_ec) = mean_and_se(&cov);
                rows.push(StudyRow {
                    setting,
                    model,
                    n_visits: nu,
                    bias,
                    mse,
                    ec,
                    mcse_bias,
                    mcse_mse,
                    mcse_ec,
                    n_ok: ok.len(),
                    n_fail: sel.len() - ok.len(),
                });
            }
        }
    }
    rows
}

fn mean_and_se(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, f64::NAN);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

pub fn run_study(cfg: &StudyConfig, graph: &ArealGraph) -> (Vec<StudyRow>, Vec<ReplicateResult>) {
    let results = run_replicates(cfg, graph);
    (summarize(&results, cfg), results)
}

pub fn write_study_csv<W: std::io::Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| WombleError::Data(e.to_string());
    w.write_record([
        "setting", "model", "n_visits", "bias", "mse", "ec", "mcse_bias", "mcse_mse", "mcse_ec", "n_ok", "n_fail",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.setting.label().to_string(),
            r.model.label().to_string(),
            r.n_visits.to_string(),
            format!("{:e}", r.bias),
            format!("{:e}", r.mse),
            format!("{:e}", r.ec),
            format!("{:e}", r.mcse_bias),
            format!("{:e}", r.mcse_mse),
            format!("{:e}", r.mcse_ec),
            r.n_ok.to_string(),
            r.n_fail.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| WombleError::Data(e.to_string()))
}
