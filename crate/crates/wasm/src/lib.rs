//! Browser bindings: edge weights on the 24-2 layout, the temporal
//! correlation range for a visit schedule, and CAR field draws.
//!
//! Every export returns JSON. The plain functions in [`ops`] do the work and
//! are what the native tests call.

use wasm_bindgen::prelude::*;

pub mod ops {
    use nalgebra::DMatrix;
    use serde::Serialize;

    use womble_core::car::{edge_weights, WeightScheme};
    use womble_core::graph::ArealGraph;
    use womble_core::sampler::{rng_for, scale_graph, ModelConfig, SamplerConfig};
    use womble_core::sim::sample_latent;
    use womble_core::temporal::{phi_bounds, Correlation};
    use womble_core::{Result, WombleError};

    #[derive(Serialize)]
    struct Point {
        row: i32,
        col: i32,
        angle: Option<f64>,
    }

    #[derive(Serialize)]
    struct Layout {
        locations: Vec<Point>,
        blind_spots: Vec<Point>,
        edges: Vec<(usize, usize)>,
    }

    #[derive(Serialize)]
    pub struct Weights {
        pub alpha: f64,
        pub weights: Vec<f64>,
        /// Edges with weight below 0.5: candidate boundaries.
        pub n_boundary: usize,
    }

    #[derive(Serialize)]
    pub struct Curve {
        pub lower: f64,
        pub upper: f64,
        pub phi: f64,
        pub lags: Vec<f64>,
        pub corr: Vec<f64>,
        /// Correlation between consecutive visits.
        pub consecutive: Vec<f64>,
    }

    #[derive(Serialize)]
    pub struct Field {
        pub latent: Vec<f64>,
        pub observed: Vec<f64>,
        pub n_censored: usize,
    }

    fn json<T: Serialize>(v: &T) -> String {
        serde_json::to_string(v).expect("plain data serializes")
    }

    fn scheme(threshold: bool) -> WeightScheme {
        if threshold {
            WeightScheme::Threshold
        } else {
            WeightScheme::Continuous
        }
    }

    /// The fitted model's configuration: dissimilarities in units of 100
    /// degrees, sensitivities in units of 10 dB.
    fn model(rho: f64, threshold: bool) -> ModelConfig {
        let mut m = SamplerConfig::standard(1).model;
        m.rho = rho;
        m.weights = scheme(threshold);
        m
    }

    pub fn layout() -> String {
        let g = ArealGraph::vf24_2();
        let point = |l: &womble_core::graph::Location| Point {
            row: l.row,
            col: l.col,
            angle: l.angle,
        };
        json(&Layout {
            locations: g.locations().iter().map(point).collect(),
            blind_spots: g.blind_spots().iter().map(point).collect(),
            edges: g.edges().iter().map(|e| (e.i, e.j)).collect(),
        })
    }

    pub fn weights(log_alpha: f64, threshold: bool) -> Result<Weights> {
        let m = model(0.99, threshold);
        let g = scale_graph(&ArealGraph::vf24_2(), m.dm_scale)?;
        let alpha = log_alpha.exp();
        let weights = edge_weights(&g, &[alpha], m.weights)?;
        let n_boundary = weights.iter().filter(|&&w| w < 0.5).count();
        Ok(Weights {
            alpha,
            weights,
            n_boundary,
        })
    }

    pub fn weights_json(log_alpha: f64, threshold: bool) -> Result<String> {
        weights(log_alpha, threshold).map(|w| json(&w))
    }

    /// `position` in [0, 1] places φ log-linearly between the prior bounds.
    pub fn correlation(days: &[f64], position: f64, n_points: usize) -> Result<Curve> {
        if !(0.0..=1.0).contains(&position) || n_points < 2 {
            return Err(WombleError::Config("position must lie in [0, 1] and n_points ≥ 2".into()));
        }
        let (lower, upper) = phi_bounds(days, Correlation::Exponential)?;
        let phi = (lower.ln() + position * (upper.ln() - lower.ln())).exp();
        let mut sorted = days.to_vec();
        sorted.sort_by(f64::total_cmp);
        let span = sorted[sorted.len() - 1] - sorted[0];
        let lags: Vec<f64> = (0..n_points).map(|k| span * k as f64 / (n_points - 1) as f64).collect();
        let corr = lags.iter().map(|&l| Correlation::Exponential.corr(phi, l)).collect();
        let consecutive = sorted.windows(2).map(|w| Correlation::Exponential.corr(phi, w[1] - w[0])).collect();
        Ok(Curve {
            lower,
            upper,
            phi,
            lags,
            corr,
            consecutive,
        })
    }

    pub fn correlation_json(days: &[f64], position: f64, n_points: usize) -> Result<String> {
        correlation(days, position, n_points).map(|c| json(&c))
    }

    /// One draw of the CAR field in dB and its floored observation.
    pub fn field(mu: f64, tau: f64, log_alpha: f64, rho: f64, threshold: bool, seed: u64) -> Result<Field> {
        if !(tau > 0.0) {
            return Err(WombleError::Config("tau must be positive".into()));
        }
        let m = model(rho, threshold);
        let ys = m.y_scale;
        let theta = DMatrix::from_column_slice(3, 1, &[mu / ys, (tau / ys).ln(), log_alpha]);
        let fields = sample_latent(&theta, &ArealGraph::vf24_2(), &m, &mut rng_for(seed, 0))?;
        let latent: Vec<f64> = fields[0].iter().map(|v| v * ys).collect();
        let observed: Vec<f64> = latent.iter().map(|v| v.max(0.0)).collect();
        let n_censored = latent.iter().filter(|&&v| v <= 0.0).count();
        Ok(Field {
            latent,
            observed,
            n_censored,
        })
    }

    pub fn field_json(mu: f64, tau: f64, log_alpha: f64, rho: f64, threshold: bool, seed: u64) -> Result<String> {
        field(mu, tau, log_alpha, rho, threshold, seed).map(|f| json(&f))
    }
}

fn js(r: womble_core::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Locations, blind spots and edges of the 24-2 layout.
#[wasm_bindgen]
pub fn layout() -> String {
    ops::layout()
}

#[wasm_bindgen]
pub fn edge_weights(log_alpha: f64, threshold: bool) -> Result<String, JsError> {
    js(ops::weights_json(log_alpha, threshold))
}

#[wasm_bindgen]
pub fn correlation_curve(days: Vec<f64>, position: f64, n_points: usize) -> Result<String, JsError> {
    js(ops::correlation_json(&days, position, n_points))
}

#[wasm_bindgen]
pub fn simulate_field(mu: f64, tau: f64, log_alpha: f64, rho: f64, threshold: bool, seed: u64) -> Result<String, JsError> {
    js(ops::field_json(mu, tau, log_alpha, rho, threshold, seed))
}
