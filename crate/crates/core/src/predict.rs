//! Posterior predictive sampling for future visits.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::quantile_sorted;
use crate::error::{numerical, Result, WombleError};
use crate::graph::ArealGraph;
use crate::linalg::{cholesky, std_normal_vec};
use crate::sampler::{rng_for, scale_graph, PosteriorDraws};
use crate::sim::sample_latent_scaled;
use crate::temporal::{condition_columns, temporal_correlation};

/// Predictive draws; `phi[d][f][i]` and `y[d][f][i]` are in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub days: Vec<f64>,
    pub theta: Vec<DMatrix<f64>>,
    pub phi: Vec<Vec<Vec<f64>>>,
    pub y: Vec<Vec<Vec<f64>>>,
}

/// Per-location predictive summary of `Y` at one future day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSummary {
    pub day: f64,
    pub location: usize,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Distribution of the future parameter columns given one posterior draw:
/// conditional mean (`p × m`), row covariance `T` and column covariance.
pub fn future_theta_conditional(
    draws: &PosteriorDraws,
    d: usize,
    future_days: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let h = draws
        .hyper
        .get(d)
        .ok_or_else(|| WombleError::Data("prediction needs hyper-level draws from the spatiotemporal fit".into()))?;
    let mut all = draws.days.clone();
    all.extend_from_slice(future_days);
    let sigma = temporal_correlation(&all, h.phi, draws.model.correlation)?;
    let (mean, col) = condition_columns(&draws.theta[d], &h.delta, &sigma, draws.n_visits())
        .map_err(|e| numerical(format!("{e} (future days {future_days:?})")))?;
    Ok((mean, h.t.clone(), col))
}

fn check_days(draws: &PosteriorDraws, future_days: &[f64]) -> Result<()> {
    let last = *draws.days.last().ok_or_else(|| WombleError::Data("draws have no visits".into()))?;
    if future_days.is_empty() {
        return Err(WombleError::Config("no future days requested".into()));
    }
    if !(future_days[0] > last) || future_days.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(WombleError::Config(format!(
            "future days must be strictly increasing and after day {last}"
        )));
    }
    Ok(())
}

/// Composition sampling: for every retained draw, the future columns of `θ`
/// jointly from their matrix-normal conditional, then each visit's latent
/// CAR field, then the Tobit observation. Draw `d` uses RNG stream `d`.
pub fn sample_ppd(
    draws: &PosteriorDraws,
    graph: &ArealGraph,
    future_days: &[f64],
    seed: u64,
) -> Result<Prediction> {
    if draws.is_empty() {
        return Err(WombleError::Data("no posterior draws".into()));
    }
    check_days(draws, future_days)?;
    let scaled = scale_graph(graph, draws.model.dm_scale)?;
    let ys = draws.model.y_scale;
    let out: Vec<(DMatrix<f64>, Vec<Vec<f64>>)> = (0..draws.len())
        .into_par_iter()
        .map(|d| {
            let mut rng = rng_for(seed, d as u64);
            let (mean, t, col) = future_theta_conditional(draws, d, future_days)?;
            let lt = cholesky(t, "T draw")?.l();
            let lc = cholesky(col.clone(), "future-visit conditional correlation")
                .map_err(|_| {
                    numerical(format!(
                        "conditioning on the observed visits failed for future days {future_days:?}"
                    ))
                })?
                .l();
            let (p, m) = mean.shape();
            let z = DMatrix::from_iterator(p, m, std_normal_vec(p * m, &mut rng).iter().copied());
            let theta = mean + lt * z * lc.transpose();
            let latent = sample_latent_scaled(&theta, &scaled, &draws.model, &mut rng)?;
            Ok((theta, latent))
        })
        .collect::<Result<_>>()?;
    let mut pred = Prediction {
        days: future_days.to_vec(),
        theta: Vec::with_capacity(out.len()),
        phi: Vec::with_capacity(out.len()),
        y: Vec::with_capacity(out.len()),
    };
    for (theta, latent) in out {
        pred.y.push(
            latent
                .iter()
                .map(|v| v.iter().map(|x| draws.model.likelihood.observe(*x) * ys).collect())
                .collect(),
        );
        pred.phi.push(latent.iter().map(|v| v.iter().map(|x| x * ys).collect()).collect());
        pred.theta.push(theta);
    }
    Ok(pred)
}

impl Prediction {
    pub fn summarize(&self) -> Vec<LocationSummary> {
        let mut out = Vec::new();
        let n = self.y.first().and_then(|v| v.first()).map_or(0, Vec::len);
        for (f, &day) in self.days.iter().enumerate() {
            for i in 0..n {
                let mut v: Vec<f64> = self.y.iter().map(|d| d[f][i]).collect();
                let k = v.len() as f64;
                let mean = v.iter().sum::<f64>() / k;
                let sd = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
                } else {
                    0.0
                };
                v.sort_by(f64::total_cmp);
                out.push(LocationSummary {
                    day,
                    location: i + 1,
                    mean,
                    sd,
                    lower: quantile_sorted(&v, 0.025),
                    upper: quantile_sorted(&v, 0.975),
                });
            }
        }
        out
    }

    /// Writes `draw,day,location,phi,y` with 1-based draw and location.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| WombleError::Data(e.to_string());
        w.write_record(["draw", "day", "location", "phi", "y"]).map_err(io)?;
        for d in 0..self.y.len() {
            for (f, day) in self.days.iter().enumerate() {
                for (i, (phi, y)) in self.phi[d][f].iter().zip(&self.y[d][f]).enumerate() {
                    w.write_record([
                        (d + 1).to_string(),
                        day.to_string(),
                        (i + 1).to_string(),
                        format!("{phi:e}"),
                        format!("{y:e}"),
                    ])
                    .map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| WombleError::Data(e.to_string()))
    }
}
