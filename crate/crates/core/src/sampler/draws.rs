//! Retained posterior draws and their long-format CSV persistence.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Result, WombleError};
use crate::temporal::HyperState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub name: String,
    pub rate: f64,
    pub final_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AcceptanceSummary {
    /// Post-burn-in acceptance per Metropolis block.
    pub blocks: Vec<BlockAcceptance>,
    /// Proposals rejected because `Q(α)` or `Σ(φ)` failed to factorize.
    pub non_pd_rejections: u64,
}

/// Posterior draws of one chain, on the model scale.
///
/// `theta[d]` is the `(q + 2) × ν` parameter matrix of draw `d`; `hyper`
/// is empty for the spatial-only comparator and `latent` is empty unless
/// latent storage was requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub days: Vec<f64>,
    pub n_locations: usize,
    pub model: ModelConfig,
    pub phi_bounds: Option<(f64, f64)>,
    pub iterations: Vec<usize>,
    pub theta: Vec<DMatrix<f64>>,
    pub hyper: Vec<HyperState>,
    pub latent: Vec<Vec<Vec<f64>>>,
    pub acceptance: AcceptanceSummary,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Rebuilds draws read back from a CSV file for a series observed on `days`.
    pub fn from_table(table: DrawTable, days: Vec<f64>, n_locations: usize, model: ModelConfig) -> Result<Self> {
        if let Some(th) = table.theta.iter().find(|th| th.ncols() != days.len()) {
            return Err(WombleError::Data(format!(
                "draws have {} visits but the series has {}",
                th.ncols(),
                days.len()
            )));
        }
        Ok(Self {
            days,
            n_locations,
            model,
            phi_bounds: None,
            iterations: table.iterations,
            theta: table.theta,
            hyper: table.hyper,
            latent: Vec::new(),
            acceptance: AcceptanceSummary::default(),
        })
    }

    /// Joins independent single-visit fits into one draw set without a
    /// hyper level; draw `d` pairs the `d`-th draw of every visit.
    pub fn join_visits(per_visit: &[PosteriorDraws]) -> Result<Self> {
        let first = per_visit
            .first()
            .ok_or_else(|| WombleError::Data("no per-visit fits".into()))?;
        if per_visit.iter().any(|v| v.len() != first.len() || v.n_visits() != 1) {
            return Err(WombleError::Data("per-visit fits differ in length or span several visits".into()));
        }
        let theta = (0..first.len())
            .map(|d| {
                let cols: Vec<_> = per_visit.iter().map(|v| v.theta[d].column(0).into_owned()).collect();
                DMatrix::from_columns(&cols)
            })
            .collect();
        let mut blocks = Vec::new();
        for (t, v) in per_visit.iter().enumerate() {
            for b in &v.acceptance.blocks {
                blocks.push(BlockAcceptance {
                    name: format!("visit{}:{}", t + 1, b.name),
                    ..b.clone()
                });
            }
        }
        Ok(Self {
            days: per_visit.iter().map(|v| v.days[0]).collect(),
            n_locations: first.n_locations,
            model: first.model.clone(),
            phi_bounds: None,
            iterations: first.iterations.clone(),
            theta,
            hyper: Vec::new(),
            latent: Vec::new(),
            acceptance: AcceptanceSummary {
                blocks,
                non_pd_rejections: per_visit.iter().map(|v| v.acceptance.non_pd_rejections).sum(),
            },
        })
    }

    pub fn n_visits(&self) -> usize {
        self.days.len()
    }

    pub fn q(&self) -> usize {
        self.theta.first().map_or(0, |m| m.nrows() - 2)
    }

    /// `α_{t,k}` for every draw: `out[d][t]`.
    pub fn alpha(&self, k: usize) -> Vec<Vec<f64>> {
        self.theta
            .iter()
            .map(|m| m.row(2 + k).iter().map(|v| v.exp()).collect())
            .collect()
    }

    /// Writes `iter,param,visit,component,value` rows.
    ///
    /// `visit` is 1-based for visit-level quantities and 0 for hyper-level
    /// ones; `component` indexes the metric (α), location (latent) or the
    /// row-major entry (T).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| WombleError::Data(e.to_string());
        w.write_record(["iter", "param", "visit", "component", "value"]).map_err(io)?;
        let mut row = |it: usize, param: &str, visit: usize, comp: usize, v: f64| {
            w.write_record([
                it.to_string(),
                param.to_string(),
                visit.to_string(),
                comp.to_string(),
                format!("{v:e}"),
            ])
        };
        for (d, &it) in self.iterations.iter().enumerate() {
            let th = &self.theta[d];
            for t in 0..th.ncols() {
                row(it, "mu", t + 1, 0, th[(0, t)]).map_err(io)?;
                row(it, "log_tau", t + 1, 0, th[(1, t)]).map_err(io)?;
                for k in 2..th.nrows() {
                    row(it, "log_alpha", t + 1, k - 2, th[(k, t)]).map_err(io)?;
                }
            }
            if let Some(h) = self.hyper.get(d) {
                for (k, v) in h.delta.iter().enumerate() {
                    row(it, "delta", 0, k, *v).map_err(io)?;
                }
                let p = h.t.nrows();
                for r in 0..p {
                    for c in 0..p {
                        row(it, "T", 0, r * p + c, h.t[(r, c)]).map_err(io)?;
                    }
                }
                row(it, "phi", 0, 0, h.phi).map_err(io)?;
            }
            if let Some(lat) = self.latent.get(d) {
                for (t, v) in lat.iter().enumerate() {
                    for (i, x) in v.iter().enumerate() {
                        row(it, "latent", t + 1, i, *x).map_err(io)?;
                    }
                }
            }
        }
        w.flush().map_err(|e| WombleError::Data(e.to_string()))?;
        Ok(())
    }
}

/// Draws reconstructed from a CSV file: per-iteration `θ` matrices and hyper states.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    pub iterations: Vec<usize>,
    pub theta: Vec<DMatrix<f64>>,
    pub hyper: Vec<HyperState>,
}

/// Reads the `iter,param,visit,component,value` format back into matrices.
pub fn read_draws_csv<R: Read>(reader: R, label: &str) -> Result<DrawTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let err = |line: usize, msg: String| WombleError::Parse {
        path: label.to_string(),
        line,
        msg,
    };
    struct Acc {
        it: usize,
        cells: Vec<(String, usize, usize, f64)>,
    }
    let mut groups: Vec<Acc> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        if rec.len() != 5 {
            return Err(err(line, "expected 5 fields".into()));
        }
        let it: usize = rec[0].parse().map_err(|_| err(line, "bad iter".into()))?;
        let visit: usize = rec[2].parse().map_err(|_| err(line, "bad visit".into()))?;
        let comp: usize = rec[3].parse().map_err(|_| err(line, "bad component".into()))?;
        let value: f64 = rec[4].parse().map_err(|_| err(line, "bad value".into()))?;
        if groups.last().map_or(true, |g| g.it != it) {
            groups.push(Acc { it, cells: Vec::new() });
        }
        groups.last_mut().unwrap().cells.push((rec[1].to_string(), visit, comp, value));
    }
    let mut table = DrawTable {
        iterations: Vec::new(),
        theta: Vec::new(),
        hyper: Vec::new(),
    };
    for g in groups {
        let nu = g.cells.iter().filter(|c| c.0 == "mu").count();
        let q = g.cells.iter().filter(|c| c.0 == "log_alpha").count() / nu.max(1);
        let p = q + 2;
        let mut theta = DMatrix::zeros(p, nu);
        let mut delta = vec![0.0; p];
        let mut t = DMatrix::zeros(p, p);
        let mut phi = None;
        for (param, visit, comp, v) in &g.cells {
            match param.as_str() {
                "mu" => theta[(0, visit - 1)] = *v,
                "log_tau" => theta[(1, visit - 1)] = *v,
                "log_alpha" => theta[(2 + comp, visit - 1)] = *v,
                "delta" => delta[*comp] = *v,
                "T" => t[(comp / p, comp % p)] = *v,
                "phi" => phi = Some(*v),
                _ => {}
            }
        }
        table.iterations.push(g.it);
        table.theta.push(theta);
        if let Some(phi) = phi {
            table.hyper.push(HyperState {
                delta: DVector::from_vec(delta),
                t,
                phi,
            });
        }
    }
    Ok(table)
}
