//! Progression metrics, logistic regression and ROC analysis.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::data::{Patient, VfSeries};
use crate::error::{Result, WombleError};
use crate::graph::ArealGraph;
use crate::linalg::norm_cdf;
use crate::sampler::{fit_space_only, rng_for, run_chain_stream, PosteriorDraws, SamplerConfig};

/// Sample coefficient of variation, `sd / mean` with an `n − 1` denominator.
pub fn cv(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt() / m
}

/// Posterior summary of a per-draw CV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub mean: f64,
    pub sd: f64,
    /// 2.5% quantile.
    pub lower: f64,
    /// 97.5% quantile.
    pub upper: f64,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summarizes `CV({α_t})` across draws; `alpha[d][t]`.
pub fn cv_summary(alpha: &[Vec<f64>]) -> Result<CvSummary> {
    if alpha.is_empty() {
        return Err(WombleError::Data("no posterior draws".into()));
    }
    if alpha[0].len() < 2 {
        return Err(WombleError::Data("CV over time needs at least two visits".into()));
    }
    let mut cvs: Vec<f64> = alpha.iter().map(|a| cv(a)).collect();
    if cvs.iter().any(|c| !c.is_finite()) {
        return Err(WombleError::Numerical("non-finite CV in posterior draws".into()));
    }
    let n = cvs.len() as f64;
    let mean = cvs.iter().sum::<f64>() / n;
    let sd = if cvs.len() > 1 {
        (cvs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    cvs.sort_by(f64::total_cmp);
    Ok(CvSummary {
        mean,
        sd,
        lower: quantile_sorted(&cvs, 0.025),
        upper: quantile_sorted(&cvs, 0.975),
    })
}

/// Posterior mean of the CV of `α_{t,k}` over visits.
pub fn st_cv(draws: &PosteriorDraws, k: usize) -> Result<f64> {
    Ok(cv_summary(&draws.alpha(k))?.mean)
}

/// Pairs independently fitted per-visit `α_k` draws by retained-draw index.
pub fn pair_space_alpha(per_visit: &[PosteriorDraws], k: usize) -> Result<Vec<Vec<f64>>> {
    let n = per_visit.first().map_or(0, PosteriorDraws::len);
    if per_visit.iter().any(|d| d.len() != n) {
        return Err(WombleError::Data("per-visit chains have different lengths".into()));
    }
    Ok((0..n)
        .map(|d| per_visit.iter().map(|v| v.theta[d][(2 + k, 0)].exp()).collect())
        .collect())
}

/// As [`st_cv`] over per-visit spatial-only fits.
pub fn space_cv(per_visit: &[PosteriorDraws], k: usize) -> Result<f64> {
    Ok(cv_summary(&pair_space_alpha(per_visit, k)?)?.mean)
}

/// CV over visits of the field-wide mean DLS (zeros included).
pub fn mean_cv(series: &VfSeries) -> Result<f64> {
    if series.n_visits() < 2 {
        return Err(WombleError::Data("Mean CV needs at least two visits".into()));
    }
    let means: Vec<f64> = series
        .y
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    Ok(cv(&means))
}

/// Two-sided p-value of the OLS slope of `y` on `x`.
///
/// An exact fit gives 0 for a nonzero slope and 1 for a flat line.
pub fn ols_slope_p(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 3 {
        return Err(WombleError::Data("slope test needs at least three points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 0.0) {
        return Err(WombleError::Data("slope test needs distinct times".into()));
    }
    let slope = sxy / sxx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum();
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().max(1.0);
    if rss <= 1e-24 * scale {
        let flat = slope.abs() * (sxx / nf).sqrt() <= 1e-12 * scale.sqrt();
        return Ok(if flat { 1.0 } else { 0.0 });
    }
    let se = (rss / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| WombleError::Numerical(e.to_string()))?;
    Ok((2.0 * t.cdf(-(slope / se).abs())).min(1.0))
}

/// Minimum over locations of the pointwise linear-regression slope p-value.
pub fn plr_min_p(series: &VfSeries) -> Result<f64> {
    if series.n_visits() < 3 {
        return Err(WombleError::Data("PLR needs at least three visits".into()));
    }
    let mut best = 1.0_f64;
    for i in 0..series.n_locations() {
        let y: Vec<f64> = series.y.iter().map(|v| v[i]).collect();
        best = best.min(ols_slope_p(&series.days, &y)?);
    }
    Ok(best)
}

/// Progression metrics of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub patient: String,
    pub st_cv: f64,
    pub space_cv: f64,
    pub mean_cv: f64,
    pub plr_minp: f64,
    pub label: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    StCv,
    SpaceCv,
    MeanCv,
    PlrMinp,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::MeanCv, Metric::PlrMinp, Metric::SpaceCv, Metric::StCv];

    pub fn of(self, r: &MetricRecord) -> f64 {
        match self {
            Metric::StCv => r.st_cv,
            Metric::SpaceCv => r.space_cv,
            Metric::MeanCv => r.mean_cv,
            Metric::PlrMinp => r.plr_minp,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::StCv => "st_cv",
            Metric::SpaceCv => "space_cv",
            Metric::MeanCv => "mean_cv",
            Metric::PlrMinp => "plr_minp",
        }
    }
}

/// Fits both models to one series and computes all four metrics.
///
/// Both fits use RNG stream `stream`. With `include_space = false` the
/// spatial-only fit is skipped and `space_cv` is NaN.
pub fn series_metrics(
    patient: &str,
    series: &VfSeries,
    label: Option<bool>,
    graph: &ArealGraph,
    cfg: &SamplerConfig,
    stream: u64,
    include_space: bool,
) -> Result<MetricRecord> {
    let st = run_chain_stream(series, graph, cfg, stream)?;
    let space_cv = if include_space {
        space_cv(&fit_space_only(series, graph, cfg, stream)?, 0)?
    } else {
        f64::NAN
    };
    Ok(MetricRecord {
        patient: patient.to_string(),
        st_cv: st_cv(&st, 0)?,
        space_cv,
        mean_cv: mean_cv(series)?,
        plr_minp: plr_min_p(series)?,
        label,
    })
}

/// Metrics of every patient, in parallel; patient `k` uses stream `k`.
pub fn cohort_metrics(
    patients: &[Patient],
    labels: &[Option<bool>],
    graph: &ArealGraph,
    cfg: &SamplerConfig,
    include_space: bool,
) -> Result<Vec<MetricRecord>> {
    patients
        .par_iter()
        .enumerate()
        .map(|(k, p)| series_metrics(&p.id, &p.series, labels[k], graph, cfg, k as u64, include_space))
        .collect()
}

/// Metrics recomputed on each patient's data up to every multiple of
/// `step_days`. Patients with fewer than three visits at a time point are
/// skipped and counted. Patient `k` keeps stream `k`, so the final time
/// point reproduces [`cohort_metrics`] whenever it covers all visits.
pub fn followup_metrics(
    patients: &[Patient],
    labels: &[Option<bool>],
    graph: &ArealGraph,
    cfg: &SamplerConfig,
    step_days: f64,
    include_space: bool,
) -> Result<Vec<(f64, Vec<MetricRecord>, usize)>> {
    let last = patients
        .iter()
        .filter_map(|p| p.series.days.last().copied())
        .fold(0.0, f64::max);
    let mut out = Vec::new();
    let mut k = 1;
    loop {
        let day = step_days * k as f64;
        let jobs: Vec<(usize, VfSeries)> = patients
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.series.up_to_day(day)))
            .filter(|(_, s)| s.n_visits() >= 3)
            .collect();
        let skipped = patients.len() - jobs.len();
        let records = jobs
            .par_iter()
            .map(|(i, s)| series_metrics(&patients[*i].id, s, labels[*i], graph, cfg, *i as u64, include_space))
            .collect::<Result<Vec<_>>>()?;
        out.push((day, records, skipped));
        if day >= last {
            break;
        }
        k += 1;
    }
    Ok(out)
}

pub fn write_metrics_csv<W: Write>(records: &[MetricRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| WombleError::Data(e.to_string());
    w.write_record(["patient", "st_cv", "space_cv", "mean_cv", "plr_minp", "label"]).map_err(io)?;
    for r in records {
        let label = r.label.map_or(String::new(), |l| u8::from(l).to_string());
        w.write_record([
            r.patient.clone(),
            format!("{:e}", r.st_cv),
            format!("{:e}", r.space_cv),
            format!("{:e}", r.mean_cv),
            format!("{:e}", r.plr_minp),
            label,
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| WombleError::Data(e.to_string()))
}

/// Column-wise z-scoring fitted on one cohort and reusable on others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows() as f64;
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        for c in x.column_iter() {
            let m = c.sum() / n;
            let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if !(s > 0.0) {
                return Err(WombleError::Data("cannot standardize a constant column".into()));
            }
            mean.push(m);
            sd.push(s);
        }
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - self.mean[c]) / self.sd[c])
    }
}

/// Maximum-likelihood logistic regression with an intercept in column 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Fitted probabilities reached 0 or 1: the MLE does not exist.
    pub separation: bool,
}

impl LogisticFit {
    /// Linear predictor for rows of `x` (without the intercept column).
    pub fn eta(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|r| self.coef[0] + (0..x.ncols()).map(|c| self.coef[c + 1] * x[(r, c)]).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.eta(x).into_iter().map(logistic).collect()
    }
}

fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

fn bernoulli_loglik(eta: &[f64], y: &[bool]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(e, &yy)| {
            // log(1 + e^x) computed stably.
            let softplus = if *e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            if yy {
                e - softplus
            } else {
                -softplus
            }
        })
        .sum()
}

/// Fits `logit P(y) = β₀ + xβ` by iteratively reweighted least squares.
///
/// Stops when the largest coefficient change falls below 1e-10 or after 100
/// iterations.
pub fn logistic_fit(x: &DMatrix<f64>, y: &[bool]) -> Result<LogisticFit> {
    let n = x.nrows();
    if n != y.len() {
        return Err(WombleError::Data("design and label lengths differ".into()));
    }
    let k = x.ncols() + 1;
    if n <= k {
        return Err(WombleError::Data("logistic regression needs more observations than coefficients".into()));
    }
    let design = DMatrix::from_fn(n, k, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
    let yv = DVector::from_iterator(n, y.iter().map(|&b| f64::from(u8::from(b))));
    let mut beta = DVector::zeros(k);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(k, k);
    for it in 1..=100 {
        iterations = it;
        let eta = &design * &beta;
        let mu = eta.map(logistic);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-300));
        let mut xtw = design.transpose();
        for (c, wi) in w.iter().enumerate() {
            xtw.column_mut(c).scale_mut(*wi);
        }
        info = &xtw * &design;
        let score = design.transpose() * (&yv - &mu);
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => info
                .clone()
                .pseudo_inverse(1e-14)
                .map_err(|e| WombleError::Numerical(e.to_string()))?
                * &score,
        };
        // Halve the step until the log-likelihood does not drop.
        let current = bernoulli_loglik(eta.as_slice(), y);
        let mut step = step;
        for _ in 0..50 {
            let trial = &design * (&beta + &step);
            let ll = bernoulli_loglik(trial.as_slice(), y);
            if ll.is_finite() && ll >= current - 1e-12 * current.abs().max(1.0) {
                break;
            }
            step *= 0.5;
        }
        beta += &step;
        if step.amax() < 1e-10 {
            converged = true;
            break;
        }
    }
    let eta: Vec<f64> = (&design * &beta).iter().copied().collect();
    let loglik = bernoulli_loglik(&eta, y);
    let separation = !converged
        || eta.iter().any(|e| e.abs() > 30.0)
        || beta.iter().any(|b| !b.is_finite());
    let cov = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| DMatrix::from_element(k, k, f64::NAN));
    let se: Vec<f64> = (0..k).map(|i| cov[(i, i)].sqrt()).collect();
    let z: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let p = z.iter().map(|z| 2.0 * norm_cdf(-z.abs())).collect();
    Ok(LogisticFit {
        coef: beta.iter().copied().collect(),
        se,
        z,
        p,
        loglik,
        aic: -2.0 * loglik + 2.0 * k as f64,
        iterations,
        converged,
        separation,
    })
}

/// Nested likelihood-ratio test: `(statistic, df, p)`.
pub fn likelihood_ratio_test(full: &LogisticFit, reduced: &LogisticFit) -> Result<(f64, usize, f64)> {
    if full.coef.len() <= reduced.coef.len() {
        return Err(WombleError::Config("the full model must have more coefficients".into()));
    }
    let df = full.coef.len() - reduced.coef.len();
    let stat = (2.0 * (full.loglik - reduced.loglik)).max(0.0);
    let chi = ChiSquared::new(df as f64).map_err(|e| WombleError::Numerical(e.to_string()))?;
    Ok((stat, df, 1.0 - chi.cdf(stat)))
}

/// One ROC operating point; a case is called positive when `score ≥ threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub sens: f64,
    pub spec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    /// Raw area over false-positive rates `[0, 1 − spec_min]`.
    pub pauc: f64,
    /// McClish-standardized partial area (0.5 = chance, 1 = perfect).
    pub pauc_mcclish: f64,
    /// Starts at `(sens 0, spec 1)` with threshold `+∞`.
    pub curve: Vec<RocPoint>,
}

/// Empirical ROC by threshold sweep.
///
/// Tied scores move the curve diagonally, which gives ties half credit in
/// the trapezoidal AUC. `spec_min` bounds the partial area (0.85 in the
/// clinical convention).
pub fn roc_auc_pauc(scores: &[f64], labels: &[bool], spec_min: f64) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(WombleError::Data("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(WombleError::Data("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(WombleError::Data("ROC analysis needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts: Vec<(f64, u64, u64)> = vec![(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        pts.push((s, tp, fp));
    }
    let mut twice_area: u64 = 0;
    for w in pts.windows(2) {
        twice_area += (w[1].2 - w[0].2) * (w[1].1 + w[0].1);
    }
    let auc = twice_area as f64 / (2 * pos * neg) as f64;

    let e = 1.0 - spec_min;
    let mut pauc = 0.0;
    for w in pts.windows(2) {
        let (x0, y0) = (w[0].2 as f64 / neg as f64, w[0].1 as f64 / pos as f64);
        let (x1, y1) = (w[1].2 as f64 / neg as f64, w[1].1 as f64 / pos as f64);
        if x0 >= e {
            break;
        }
        if x1 == x0 {
            continue;
        }
        let xe = x1.min(e);
        let ye = y0 + (y1 - y0) * (xe - x0) / (x1 - x0);
        pauc += 0.5 * (xe - x0) * (y0 + ye);
    }
    let (lo, hi) = (0.5 * e * e, e);
    let pauc_mcclish = 0.5 * (1.0 + (pauc - lo) / (hi - lo));
    let curve = pts
        .iter()
        .map(|&(threshold, tp, fp)| RocPoint {
            threshold,
            sens: tp as f64 / pos as f64,
            spec: 1.0 - fp as f64 / neg as f64,
        })
        .collect();
    Ok(RocResult {
        auc,
        pauc,
        pauc_mcclish,
        curve,
    })
}

/// AUC as the fraction of concordant positive/negative pairs, ties counting ½.
pub fn concordance_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            twice += match scores[i].partial_cmp(&scores[j]) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

pub fn write_roc_csv<W: Write>(curve: &[RocPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| WombleError::Data(e.to_string());
    w.write_record(["threshold", "sens", "spec"]).map_err(io)?;
    for p in curve {
        w.write_record([format!("{:e}", p.threshold), format!("{:e}", p.sens), format!("{:e}", p.spec)])
            .map_err(io)?;
    }
    w.flush().map_err(|e| WombleError::Data(e.to_string()))
}

/// Paired bootstrap comparison of two scores on the same cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapComparison {
    pub auc_diff: f64,
    pub auc_p: f64,
    pub pauc_diff: f64,
    pub pauc_p: f64,
    pub n_boot: usize,
}

/// Resamples cases within each class (so both classes stay present) and
/// forms `z = Δ / sd*(Δ)`; resample `r` uses RNG stream `r`.
pub fn bootstrap_compare(
    a: &[f64],
    b: &[f64],
    labels: &[bool],
    spec_min: f64,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapComparison> {
    let ra = roc_auc_pauc(a, labels, spec_min)?;
    let rb = roc_auc_pauc(b, labels, spec_min)?;
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let diffs: Vec<(f64, f64)> = (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, r as u64);
            let mut idx: Vec<usize> = pos.iter().map(|_| pos[rng.random_range(0..pos.len())]).collect();
            idx.extend(neg.iter().map(|_| neg[rng.random_range(0..neg.len())]));
            let sa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let sb: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            let x = roc_auc_pauc(&sa, &l, spec_min).expect("both classes present");
            let y = roc_auc_pauc(&sb, &l, spec_min).expect("both classes present");
            (x.auc - y.auc, x.pauc - y.pauc)
        })
        .collect();
    let p_of = |obs: f64, vals: Vec<f64>| {
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if sd > 0.0 {
            2.0 * norm_cdf(-(obs / sd).abs())
        } else if obs == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let auc_diff = ra.auc - rb.auc;
    let pauc_diff = ra.pauc - rb.pauc;
    Ok(BootstrapComparison {
        auc_diff,
        auc_p: p_of(auc_diff, diffs.iter().map(|d| d.0).collect()),
        pauc_diff,
        pauc_p: p_of(pauc_diff, diffs.iter().map(|d| d.1).collect()),
        n_boot,
    })
}

/// Smallest probability threshold whose specificity is at least `spec_min`;
/// on an ROC sweep this is also the one with the highest sensitivity.
pub fn threshold_for_specificity(probs: &[f64], labels: &[bool], spec_min: f64) -> Result<f64> {
    let roc = roc_auc_pauc(probs, labels, spec_min)?;
    Ok(roc
        .curve
        .iter()
        .filter(|p| p.spec >= spec_min)
        .map(|p| p.threshold)
        .fold(f64::INFINITY, f64::min))
}

/// A model term built from metric columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Main(Metric),
    Interaction(Metric, Metric),
}

impl Term {
    pub fn name(self) -> String {
        match self {
            Term::Main(m) => m.name().to_string(),
            Term::Interaction(a, b) => format!("{}:{}", a.name(), b.name()),
        }
    }
}

/// Logistic model on standardized metrics, frozen for re-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    pub terms: Vec<Term>,
    pub standardizer: Standardizer,
    pub fit: LogisticFit,
    /// Probability cut-off chosen on the fitting cohort.
    pub threshold: f64,
}

fn metric_matrix(records: &[MetricRecord], metrics: &[Metric]) -> DMatrix<f64> {
    DMatrix::from_fn(records.len(), metrics.len(), |r, c| metrics[c].of(&records[r]))
}

fn main_metrics(terms: &[Term]) -> Vec<Metric> {
    let mut out = Vec::new();
    for t in terms {
        let ms = match *t {
            Term::Main(m) => vec![m],
            Term::Interaction(a, b) => vec![a, b],
        };
        for m in ms {
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    out
}

fn design(terms: &[Term], metrics: &[Metric], z: &DMatrix<f64>) -> DMatrix<f64> {
    let col = |m: Metric| metrics.iter().position(|x| *x == m).expect("metric present");
    DMatrix::from_fn(z.nrows(), terms.len(), |r, c| match terms[c] {
        Term::Main(m) => z[(r, col(m))],
        Term::Interaction(a, b) => z[(r, col(a))] * z[(r, col(b))],
    })
}

impl MetricModel {
    /// Standardizes the metrics on `records`, fits, and picks the threshold.
    pub fn fit(terms: &[Term], records: &[MetricRecord], spec_min: f64) -> Result<Self> {
        let labels = labels_of(records)?;
        let metrics = main_metrics(terms);
        let raw = metric_matrix(records, &metrics);
        let standardizer = Standardizer::fit(&raw)?;
        let x = design(terms, &metrics, &standardizer.apply(&raw));
        let fit = logistic_fit(&x, &labels)?;
        let probs = fit.predict(&x);
        let threshold = threshold_for_specificity(&probs, &labels, spec_min)?;
        Ok(Self {
            terms: terms.to_vec(),
            standardizer,
            fit,
            threshold,
        })
    }

    pub fn predict(&self, records: &[MetricRecord]) -> Vec<f64> {
        let metrics = main_metrics(&self.terms);
        let raw = metric_matrix(records, &metrics);
        let x = design(&self.terms, &metrics, &self.standardizer.apply(&raw));
        self.fit.predict(&x)
    }
}

pub fn labels_of(records: &[MetricRecord]) -> Result<Vec<bool>> {
    records
        .iter()
        .map(|r| {
            r.label
                .ok_or_else(|| WombleError::Data(format!("patient {} has no progression label", r.patient)))
        })
        .collect()
}

/// One row of the single-metric regression table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub metric: Metric,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub separation: bool,
}

/// Regresses the labels on each standardized metric separately.
pub fn single_metric_table(records: &[MetricRecord], metrics: &[Metric]) -> Result<Vec<CoefficientRow>> {
    metrics
        .iter()
        .map(|&m| {
            let model = MetricModel::fit(&[Term::Main(m)], records, 0.85)?;
            let f = &model.fit;
            Ok(CoefficientRow {
                metric: m,
                estimate: f.coef[1],
                se: f.se[1],
                z: f.z[1],
                p: f.p[1],
                separation: f.separation,
            })
        })
        .collect()
}

/// Trend-based composite (Mean CV, PLR and their interaction), optionally
/// extended by one CV-of-α metric with its pairwise interactions.
pub fn composite_terms(extra: Option<Metric>) -> Vec<Term> {
    let mut t = vec![
        Term::Main(Metric::MeanCv),
        Term::Main(Metric::PlrMinp),
        Term::Interaction(Metric::MeanCv, Metric::PlrMinp),
    ];
    if let Some(m) = extra {
        t.push(Term::Main(m));
        t.push(Term::Interaction(m, Metric::MeanCv));
        t.push(Term::Interaction(m, Metric::PlrMinp));
    }
    t
}

/// Operating characteristics of one model; p-values compare it with the
/// base model (the first one passed to [`compare_models`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub aic: f64,
    pub auc: f64,
    pub pauc: f64,
    pub pauc_mcclish: f64,
    pub p_lrt: Option<f64>,
    pub p_auc: Option<f64>,
    pub p_pauc: Option<f64>,
}

/// Fits each named model and compares every later model with the first by a
/// likelihood-ratio test and paired bootstrap AUC/pAUC tests.
pub fn compare_models(
    records: &[MetricRecord],
    models: &[(String, Vec<Term>)],
    spec_min: f64,
    n_boot: usize,
    seed: u64,
) -> Result<(Vec<ComparisonRow>, Vec<MetricModel>, Vec<RocResult>)> {
    let labels = labels_of(records)?;
    let fitted: Vec<MetricModel> = models
        .iter()
        .map(|(_, terms)| MetricModel::fit(terms, records, spec_min))
        .collect::<Result<_>>()?;
    let probs: Vec<Vec<f64>> = fitted.iter().map(|m| m.predict(records)).collect();
    let rocs: Vec<RocResult> = probs
        .iter()
        .map(|p| roc_auc_pauc(p, &labels, spec_min))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(models.len());
    for (k, (name, _)) in models.iter().enumerate() {
        let (p_lrt, p_auc, p_pauc) = if k == 0 {
            (None, None, None)
        } else {
            let (_, _, p) = likelihood_ratio_test(&fitted[k].fit, &fitted[0].fit)?;
            let b = bootstrap_compare(&probs[k], &probs[0], &labels, spec_min, n_boot, seed)?;
            (Some(p), Some(b.auc_p), Some(b.pauc_p))
        };
        rows.push(ComparisonRow {
            model: name.clone(),
            aic: fitted[k].fit.aic,
            auc: rocs[k].auc,
            pauc: rocs[k].pauc,
            pauc_mcclish: rocs[k].pauc_mcclish,
            p_lrt,
            p_auc,
            p_pauc,
        });
    }
    Ok((rows, fitted, rocs))
}

/// Scores at one follow-up time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowupPoint {
    pub day: f64,
    pub n_scored: usize,
    pub n_skipped: usize,
    pub pauc: f64,
    /// Mean of `pauc` over the surrounding window of time points.
    pub pauc_smooth: f64,
    pub sens: f64,
    pub spec: f64,
    pub median_prob_progressing: f64,
    pub median_prob_stable: f64,
}

/// Re-scores truncated-series metrics with a frozen end-of-study model.
///
/// `by_time[k] = (day, records)` holds the metrics recomputed on each
/// patient's data up to `day`; `skipped[k]` counts patients with too few
/// visits. `window` is the number of neighbouring time points on each side
/// averaged into `pauc_smooth`.
pub fn early_followup_curve(
    by_time: &[(f64, Vec<MetricRecord>)],
    skipped: &[usize],
    model: &MetricModel,
    spec_min: f64,
    window: usize,
) -> Result<Vec<FollowupPoint>> {
    let mut pts = Vec::with_capacity(by_time.len());
    for (k, (day, records)) in by_time.iter().enumerate() {
        let labels = labels_of(records)?;
        let probs = model.predict(records);
        let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
        let pauc = if both {
            roc_auc_pauc(&probs, &labels, spec_min)?.pauc
        } else {
            f64::NAN
        };
        let (mut tp, mut fp, mut np, mut nn) = (0.0, 0.0, 0.0, 0.0);
        let mut pp = Vec::new();
        let mut ps = Vec::new();
        for (p, &l) in probs.iter().zip(&labels) {
            let called = *p >= model.threshold;
            if l {
                np += 1.0;
                tp += f64::from(u8::from(called));
                pp.push(*p);
            } else {
                nn += 1.0;
                fp += f64::from(u8::from(called));
                ps.push(*p);
            }
        }
        pts.push(FollowupPoint {
            day: *day,
            n_scored: records.len(),
            n_skipped: skipped.get(k).copied().unwrap_or(0),
            pauc,
            pauc_smooth: f64::NAN,
            sens: tp / np,
            spec: 1.0 - fp / nn,
            median_prob_progressing: median(pp),
            median_prob_stable: median(ps),
        });
    }
    for k in 0..pts.len() {
        let lo = k.saturating_sub(window);
        let hi = (k + window).min(pts.len() - 1);
        let vals: Vec<f64> = pts[lo..=hi].iter().map(|p| p.pauc).filter(|v| v.is_finite()).collect();
        pts[k].pauc_smooth = if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        };
    }
    Ok(pts)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

pub fn write_followup_csv<W: Write>(pts: &[FollowupPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| WombleError::Data(e.to_string());
    w.write_record([
        "day",
        "n_scored",
        "n_skipped",
        "pauc",
        "pauc_smooth",
        "sens",
        "spec",
        "median_prob_progressing",
        "median_prob_stable",
    ])
    .map_err(io)?;
    for p in pts {
        w.write_record([
            format!("{}", p.day),
            p.n_scored.to_string(),
            p.n_skipped.to_string(),
            format!("{:e}", p.pauc),
            format!("{:e}", p.pauc_smooth),
            format!("{:e}", p.sens),
            format!("{:e}", p.spec),
            format!("{:e}", p.median_prob_progressing),
            format!("{:e}", p.median_prob_stable),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| WombleError::Data(e.to_string()))
}
