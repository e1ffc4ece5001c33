//! Metropolis-within-Gibbs sampler.
//!
//! One systematic scan visits, in order: the censored latent sites of every
//! visit (truncated-normal Gibbs), each visit's `(μ_t, log τ_t, log α_t)`
//! (adaptive random-walk Metropolis), `δ` (conjugate normal), `T`
//! (conjugate inverse-Wishart) and `φ` (random-walk Metropolis on the logit
//! scale). Proposal scales adapt in batches during burn-in and are frozen
//! afterwards.
//!
//! The spatial-only comparator reuses the same engine with an independent
//! `MVN(μ_δ, Ω_δ)` prior per visit and no hyper-level updates.

mod config;
pub mod conjugate;
mod draws;

pub use config::{AdaptConfig, HyperPriors, ModelConfig, SamplerConfig};
pub use draws::{read_draws_csv, AcceptanceSummary, BlockAcceptance, DrawTable, PosteriorDraws};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::car::{CarStructure, Likelihood, ObsParams, WeightScheme};
use crate::data::VfSeries;
use crate::error::{numerical, Result, WombleError};
use crate::graph::{ArealGraph, Edge};
use crate::linalg::{cholesky, logdet, sample_inverse_wishart, sample_mvn_canonical, sample_truncnorm_upper, Chol};
use crate::temporal::{centered, phi_bounds, temporal_correlation, HyperState};

/// Log-target values below this are treated as impossible.
const LOG_FLOOR: f64 = -1e300;

/// Deterministic RNG for one `(seed, stream)` pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Prior acting on the visit-level parameter columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMode {
    /// Separable matrix-normal prior with sampled `(δ, T, φ)`.
    Separable,
    /// Independent `MVN(μ_δ, Ω_δ)` per visit; no hyper-level updates.
    IndependentVisits,
}

/// Current values of every sampled quantity, on the model scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: DMatrix<f64>,
    pub latent: Vec<Vec<f64>>,
    pub hyper: HyperState,
}

#[derive(Debug, Clone)]
struct Block {
    name: String,
    log_sd: f64,
    batch_acc: u32,
    batch_n: u32,
    n_batches: u32,
    /// Running sum of `log_sd` over the second half of burn-in.
    late_sum: f64,
    late_n: u32,
    acc: u64,
    tried: u64,
}

impl Block {
    fn new(name: String, sd: f64) -> Self {
        Self {
            name,
            log_sd: sd.ln(),
            batch_acc: 0,
            batch_n: 0,
            n_batches: 0,
            late_sum: 0.0,
            late_n: 0,
            acc: 0,
            tried: 0,
        }
    }

    fn sd(&self) -> f64 {
        self.log_sd.exp()
    }

    /// Fixes the scale at its late-burn-in average, removing the jitter of
    /// the last few adaptation steps.
    fn freeze(&mut self) {
        if self.late_n > 0 {
            self.log_sd = self.late_sum / f64::from(self.late_n);
        }
    }
}

/// A Markov chain over the full posterior of one series.
#[derive(Debug, Clone)]
pub struct Chain {
    graph: ArealGraph,
    y: Vec<Vec<f64>>,
    censored: Vec<Vec<usize>>,
    days: Vec<f64>,
    cfg: SamplerConfig,
    mode: PriorMode,
    bounds: (f64, f64),
    state: ChainState,
    car: Vec<CarStructure>,
    sigma_chol: Chol,
    sigma_inv: DMatrix<f64>,
    t_inv: DMatrix<f64>,
    mu_delta: DVector<f64>,
    omega_inv: DMatrix<f64>,
    omega_delta: DMatrix<f64>,
    psi: DMatrix<f64>,
    blocks: Vec<Block>,
    non_pd: u64,
    iteration: usize,
    rng: ChaCha8Rng,
}

/// Copy of `graph` with every dissimilarity divided by `scale`.
pub fn scale_graph(graph: &ArealGraph, scale: f64) -> Result<ArealGraph> {
    let edges = graph
        .edges()
        .iter()
        .map(|e| Edge {
            i: e.i,
            j: e.j,
            z: e.z.iter().map(|z| z / scale).collect(),
        })
        .collect();
    ArealGraph::from_edges(
        graph.locations().to_vec(),
        graph.blind_spots().to_vec(),
        graph.q(),
        edges,
    )
}

impl Chain {
    /// Builds a chain with the deterministic default initialization.
    pub fn new(
        data: &VfSeries,
        graph: &ArealGraph,
        cfg: &SamplerConfig,
        mode: PriorMode,
        stream: u64,
    ) -> Result<Self> {
        let init = initial_state(data, graph, cfg)?;
        Self::with_state(data, graph, cfg, mode, stream, init)
    }

    /// Builds a chain from an explicit model-scale state.
    pub fn with_state(
        data: &VfSeries,
        graph: &ArealGraph,
        cfg: &SamplerConfig,
        mode: PriorMode,
        stream: u64,
        state: ChainState,
    ) -> Result<Self> {
        let q = graph.q();
        cfg.validate(q)?;
        data.validate()?;
        if data.n_locations() != graph.n() {
            return Err(WombleError::Data(format!(
                "series has {} locations but the graph has {}",
                data.n_locations(),
                graph.n()
            )));
        }
        let model = &cfg.model;
        let scaled = scale_graph(graph, model.dm_scale)?;
        let y: Vec<Vec<f64>> = data.scaled(1.0 / model.y_scale).y;
        let censored = y
            .iter()
            .map(|v| v.iter().enumerate().filter(|(_, x)| **x == 0.0).map(|(i, _)| i).collect())
            .collect();
        let bounds = match (model.priors.phi_bounds, mode) {
            (Some(b), _) => b,
            (None, PriorMode::IndependentVisits) => (1.0, 2.0),
            (None, PriorMode::Separable) => phi_bounds(&data.days, model.correlation).map_err(|e| {
                WombleError::Config(format!("{e}; supply explicit phi bounds for this series"))
            })?,
        };
        let p = q + 2;
        let nu = data.n_visits();
        if state.theta.shape() != (p, nu) || state.latent.len() != nu {
            return Err(WombleError::Config("initial state has the wrong shape".into()));
        }
        let omega_delta = model.priors.omega_delta_mat();
        let omega_inv = cholesky(omega_delta.clone(), "Omega_delta")?.inverse();
        let mut blocks = Vec::with_capacity(3 * nu + 1);
        for t in 0..nu {
            blocks.push(Block::new(format!("mu[{}]", t + 1), cfg.adapt.sd_mu));
            blocks.push(Block::new(format!("log_tau[{}]", t + 1), cfg.adapt.sd_log_tau));
            blocks.push(Block::new(format!("log_alpha[{}]", t + 1), cfg.adapt.sd_log_alpha));
        }
        blocks.push(Block::new("phi".into(), cfg.adapt.sd_phi));

        let car = (0..nu)
            .map(|t| {
                let alpha: Vec<f64> = state.theta.column(t).iter().skip(2).map(|v| v.exp()).collect();
                CarStructure::new(&scaled, &alpha, model.rho, model.weights)
            })
            .collect::<Result<Vec<_>>>()?;
        let sigma = temporal_correlation(&data.days, state.hyper.phi, model.correlation)?;
        let sigma_chol = cholesky(sigma, "Sigma(phi)")?;
        let sigma_inv = sigma_chol.inverse();
        let t_inv = cholesky(state.hyper.t.clone(), "T")?.inverse();
        Ok(Self {
            graph: scaled,
            y,
            censored,
            days: data.days.clone(),
            cfg: cfg.clone(),
            mode,
            bounds,
            state,
            car,
            sigma_chol,
            sigma_inv,
            t_inv,
            mu_delta: model.priors.mu_delta_vec(),
            omega_inv,
            omega_delta,
            psi: model.priors.psi_mat(),
            blocks,
            non_pd: 0,
            iteration: 0,
            rng: rng_for(cfg.seed, stream),
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn phi_bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Replaces the data and the latent fields together, keeping all
    /// parameters (used by joint-distribution tests that regenerate data).
    pub fn replace_data(&mut self, y_model_scale: Vec<Vec<f64>>, latent: Vec<Vec<f64>>) {
        self.censored = y_model_scale
            .iter()
            .map(|v| v.iter().enumerate().filter(|(_, x)| **x == 0.0).map(|(i, _)| i).collect())
            .collect();
        self.y = y_model_scale;
        self.state.latent = latent;
    }

    fn adapting(&self) -> bool {
        self.iteration <= self.cfg.n_burn
    }

    fn record(&mut self, b: usize, accepted: bool) {
        let adapting = self.adapting();
        let (target, batch) = (self.cfg.adapt.target, self.cfg.adapt.batch as u32);
        let late = 2 * self.iteration > self.cfg.n_burn;
        let blk = &mut self.blocks[b];
        if adapting {
            blk.batch_n += 1;
            blk.batch_acc += u32::from(accepted);
            if blk.batch_n == batch {
                blk.n_batches += 1;
                let step = (1.0 / f64::from(blk.n_batches).sqrt()).min(0.1);
                let rate = f64::from(blk.batch_acc) / f64::from(batch);
                blk.log_sd += if rate > target { step } else { -step };
                if late {
                    blk.late_sum += blk.log_sd;
                    blk.late_n += 1;
                }
                blk.batch_n = 0;
                blk.batch_acc = 0;
            }
        } else {
            blk.tried += 1;
            blk.acc += u64::from(accepted);
        }
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Redraws the latent field of visit `t` from its full conditional.
    pub fn update_latent(&mut self, t: usize) {
        let mu = self.state.theta[(0, t)];
        let tau2 = (2.0 * self.state.theta[(1, t)]).exp();
        let car = &self.car[t];
        let graph = &self.graph;
        let latent = &mut self.state.latent[t];
        match self.cfg.model.likelihood {
            Likelihood::Tobit => {
                for &i in &self.censored[t] {
                    let (m, v) = car.conditional(graph, i, latent, mu, tau2);
                    latent[i] = sample_truncnorm_upper(m, v.sqrt(), 0.0, &mut self.rng);
                }
            }
            Likelihood::Gaussian { variance } => {
                let obs_var = variance / self.cfg.model.y_scale.powi(2);
                for i in 0..latent.len() {
                    let (m, v) = car.conditional(graph, i, latent, mu, tau2);
                    let prec = 1.0 / v + 1.0 / obs_var;
                    let mean = (m / v + self.y[t][i] / obs_var) / prec;
                    latent[i] = mean + self.rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
                }
            }
        }
    }

    /// Conditional prior mean and precision scale of column `t` given the others.
    fn column_prior(&self, t: usize) -> (DVector<f64>, f64) {
        match self.mode {
            PriorMode::IndependentVisits => (self.mu_delta.clone(), 1.0),
            PriorMode::Separable => {
                let delta = &self.state.hyper.delta;
                let ptt = self.sigma_inv[(t, t)];
                let mut m = delta.clone();
                for s in 0..self.state.theta.ncols() {
                    if s != t {
                        let w = self.sigma_inv[(t, s)] / ptt;
                        m -= (self.state.theta.column(s) - delta) * w;
                    }
                }
                (m, ptt)
            }
        }
    }

    fn column_logprior(&self, col: &DVector<f64>, mean: &DVector<f64>, scale: f64) -> f64 {
        let d = col - mean;
        let prec = match self.mode {
            PriorMode::IndependentVisits => &self.omega_inv,
            PriorMode::Separable => &self.t_inv,
        };
        -0.5 * scale * (d.transpose() * prec * &d)[0]
    }

    /// One Metropolis pass over `(μ_t, log τ_t, log α_t)`.
    pub fn update_obs_params(&mut self, t: usize) {
        let (pmean, pscale) = self.column_prior(t);
        let current: DVector<f64> = self.state.theta.column(t).into_owned();
        if self.cfg.componentwise {
            let p = current.len();
            for (b, range) in [(0, 0..1), (1, 1..2), (2, 2..p)] {
                if range.is_empty() {
                    continue;
                }
                let block = 3 * t + b;
                let sd = self.blocks[block].sd();
                let cur = self.state.theta.column(t).into_owned();
                let mut prop = cur.clone();
                for k in range {
                    prop[k] += sd * self.normal();
                }
                let acc = self.metropolis_column(t, &cur, &prop, b == 2, &pmean, pscale);
                self.record(block, acc);
            }
        } else {
            let sds = [self.blocks[3 * t].sd(), self.blocks[3 * t + 1].sd(), self.blocks[3 * t + 2].sd()];
            let mut prop = current.clone();
            for k in 0..prop.len() {
                prop[k] += sds[k.min(2)] * self.normal();
            }
            let acc = self.metropolis_column(t, &current, &prop, true, &pmean, pscale);
            for b in 0..3 {
                self.record(3 * t + b, acc);
            }
        }
    }

    fn metropolis_column(
        &mut self,
        t: usize,
        cur: &DVector<f64>,
        prop: &DVector<f64>,
        alpha_changed: bool,
        pmean: &DVector<f64>,
        pscale: f64,
    ) -> bool {
        let new_car = if alpha_changed {
            let alpha: Vec<f64> = prop.iter().skip(2).map(|v| v.exp()).collect();
            match CarStructure::new(&self.graph, &alpha, self.cfg.model.rho, self.cfg.model.weights) {
                Ok(c) => Some(c),
                Err(_) => {
                    self.non_pd += 1;
                    return false;
                }
            }
        } else {
            None
        };
        let latent = &self.state.latent[t];
        let cur_ll = self.car[t].logdensity(&self.graph, latent, cur[0], cur[1]);
        let prop_car = new_car.as_ref().unwrap_or(&self.car[t]);
        let prop_ll = prop_car.logdensity(&self.graph, latent, prop[0], prop[1]);
        let lp_cur = cur_ll + self.column_logprior(cur, pmean, pscale);
        let lp_prop = prop_ll + self.column_logprior(prop, pmean, pscale);
        if !(lp_prop > LOG_FLOOR) {
            return false;
        }
        let log_u: f64 = self.rng.random::<f64>().ln();
        if log_u < lp_prop - lp_cur {
            self.state.theta.set_column(t, prop);
            if let Some(c) = new_car {
                self.car[t] = c;
            }
            true
        } else {
            false
        }
    }

    pub fn update_delta(&mut self) -> Result<()> {
        let (prec, b) = conjugate::delta_canonical(
            &self.state.theta,
            &self.state.hyper.t,
            &self.sigma_inv,
            &self.mu_delta,
            &self.omega_delta,
        )?;
        let chol = cholesky(prec, "delta conditional precision")?;
        self.state.hyper.delta = sample_mvn_canonical(&b, &chol, &mut self.rng);
        Ok(())
    }

    pub fn update_t(&mut self) -> Result<()> {
        let (df, scale) = conjugate::t_conditional(
            &self.state.theta,
            &self.state.hyper.delta,
            &self.sigma_inv,
            self.cfg.model.priors.xi,
            &self.psi,
        );
        let t = sample_inverse_wishart(df, &scale, &mut self.rng)?;
        self.t_inv = cholesky(t.clone(), "T draw")?.inverse();
        self.state.hyper.t = t;
        Ok(())
    }

    /// Log-target of φ on the logit scale (matrix-normal likelihood plus Jacobian).
    fn phi_logtarget(&self, phi: f64, sigma_chol: &Chol) -> f64 {
        let (a, b) = self.bounds;
        let p = self.state.theta.nrows() as f64;
        let r = centered(&self.state.theta, &self.state.hyper.delta);
        let x = sigma_chol.solve(&r.transpose());
        let quad = (&self.t_inv * (&r * x)).trace();
        -0.5 * p * logdet(sigma_chol) - 0.5 * quad + ((phi - a) * (b - phi)).ln()
    }

    pub fn update_phi(&mut self) {
        let (a, b) = self.bounds;
        let phi = self.state.hyper.phi;
        let u = ((phi - a) / (b - phi)).ln();
        let block = self.blocks.len() - 1;
        let u_new = u + self.blocks[block].sd() * self.normal();
        let phi_new = a + (b - a) / (1.0 + (-u_new).exp());
        let accepted = if phi_new > a && phi_new < b {
            match temporal_correlation(&self.days, phi_new, self.cfg.model.correlation)
                .and_then(|s| cholesky(s, "Sigma(phi)"))
            {
                Ok(chol_new) => {
                    let lp_new = self.phi_logtarget(phi_new, &chol_new);
                    let lp_cur = self.phi_logtarget(phi, &self.sigma_chol);
                    let log_u: f64 = self.rng.random::<f64>().ln();
                    if lp_new > LOG_FLOOR && log_u < lp_new - lp_cur {
                        self.sigma_inv = chol_new.inverse();
                        self.sigma_chol = chol_new;
                        self.state.hyper.phi = phi_new;
                        true
                    } else {
                        false
                    }
                }
                Err(_) => {
                    self.non_pd += 1;
                    false
                }
            }
        } else {
            false
        };
        self.record(block, accepted);
    }

    /// Total model-scale log posterior (up to a constant) of the current state.
    pub fn log_target(&self) -> f64 {
        let mut lp = 0.0;
        let likelihood = self.cfg.model.likelihood;
        for t in 0..self.y.len() {
            let th = self.state.theta.column(t);
            lp += self.car[t].logdensity(&self.graph, &self.state.latent[t], th[0], th[1]);
            lp += match likelihood {
                Likelihood::Tobit => crate::car::tobit_loglik(&self.y[t], &self.state.latent[t]),
                Likelihood::Gaussian { variance } => Likelihood::Gaussian {
                    variance: variance / self.cfg.model.y_scale.powi(2),
                }
                .loglik(&self.y[t], &self.state.latent[t]),
            };
        }
        if self.mode == PriorMode::Separable {
            let h = &self.state.hyper;
            let sigma = self.sigma_chol.l() * self.sigma_chol.l().transpose();
            lp += crate::temporal::separable_prior_logdensity(&self.state.theta, &h.delta, &h.t, &sigma)
                .unwrap_or(f64::NEG_INFINITY);
        }
        lp
    }

    /// One full systematic scan.
    pub fn sweep(&mut self) -> Result<()> {
        self.iteration += 1;
        if self.iteration == self.cfg.n_burn + 1 {
            for b in &mut self.blocks {
                b.freeze();
            }
        }
        let nu = self.y.len();
        for t in 0..nu {
            self.update_latent(t);
        }
        for t in 0..nu {
            self.update_obs_params(t);
        }
        if self.mode == PriorMode::Separable {
            self.update_delta()?;
            self.update_t()?;
            self.update_phi();
        }
        self.check_state()
    }

    fn check_state(&self) -> Result<()> {
        if self.cfg.model.likelihood == Likelihood::Tobit {
            for (t, (y, lat)) in self.y.iter().zip(&self.state.latent).enumerate() {
                if crate::car::tobit_loglik(y, lat) != 0.0 {
                    return Err(numerical(format!(
                        "latent field of visit {} violates the Tobit constraint at iteration {}",
                        t + 1,
                        self.iteration
                    )));
                }
            }
        }
        let lt = self.log_target();
        if !lt.is_finite() {
            return Err(numerical(format!(
                "non-finite log target at iteration {}: theta = {:?}, delta = {:?}, T = {:?}, phi = {}",
                self.iteration,
                self.state.theta.as_slice(),
                self.state.hyper.delta.as_slice(),
                self.state.hyper.t.as_slice(),
                self.state.hyper.phi
            )));
        }
        Ok(())
    }

    fn acceptance(&self) -> AcceptanceSummary {
        let blocks = self
            .blocks
            .iter()
            .filter(|b| self.mode == PriorMode::Separable || b.name != "phi")
            .map(|b| BlockAcceptance {
                name: b.name.clone(),
                rate: if b.tried == 0 { f64::NAN } else { b.acc as f64 / b.tried as f64 },
                final_sd: b.sd(),
            })
            .collect();
        AcceptanceSummary {
            blocks,
            non_pd_rejections: self.non_pd,
        }
    }

    /// Runs the configured number of iterations and collects retained draws.
    pub fn run(mut self) -> Result<PosteriorDraws> {
        let cfg = self.cfg.clone();
        let keep = (cfg.n_iter - cfg.n_burn) / cfg.n_thin;
        let mut draws = PosteriorDraws {
            days: self.days.clone(),
            n_locations: self.graph.n(),
            model: cfg.model.clone(),
            phi_bounds: (self.mode == PriorMode::Separable).then_some(self.bounds),
            iterations: Vec::with_capacity(keep),
            theta: Vec::with_capacity(keep),
            hyper: Vec::new(),
            latent: Vec::new(),
            acceptance: AcceptanceSummary::default(),
        };
        for k in 1..=cfg.n_iter {
            self.sweep()?;
            if k > cfg.n_burn && (k - cfg.n_burn) % cfg.n_thin == 0 {
                draws.iterations.push(k);
                draws.theta.push(self.state.theta.clone());
                if self.mode == PriorMode::Separable {
                    draws.hyper.push(self.state.hyper.clone());
                }
                if cfg.store_latent {
                    draws.latent.push(self.state.latent.clone());
                }
            }
        }
        draws.acceptance = self.acceptance();
        Ok(draws)
    }
}

/// Deterministic data-driven starting point.
///
/// `μ_t` and `log τ_t` come from the uncensored values of each visit,
/// `log α_t = 0`, `δ` is the row mean of `θ`, `T = I`, `φ` sits mid-range and
/// censored latent sites start at −0.1.
pub fn initial_state(data: &VfSeries, graph: &ArealGraph, cfg: &SamplerConfig) -> Result<ChainState> {
    let q = graph.q();
    let p = q + 2;
    let nu = data.n_visits();
    let y = data.scaled(1.0 / cfg.model.y_scale).y;
    let mut theta = DMatrix::zeros(p, nu);
    for (t, v) in y.iter().enumerate() {
        let obs: Vec<f64> = v.iter().copied().filter(|x| *x > 0.0).collect();
        let (mean, sd) = match obs.len() {
            0 => (-0.1, 0.1),
            1 => (obs[0], 0.1),
            n => {
                let m = obs.iter().sum::<f64>() / n as f64;
                let var = obs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                (m, var.sqrt().max(0.1))
            }
        };
        theta[(0, t)] = mean;
        theta[(1, t)] = sd.ln();
    }
    let latent = y
        .iter()
        .map(|v| v.iter().map(|&x| if x == 0.0 { -0.1 } else { x }).collect())
        .collect();
    let delta = DVector::from_fn(p, |r, _| theta.row(r).mean());
    let bounds = match cfg.model.priors.phi_bounds {
        Some(b) => b,
        None if nu >= 2 => phi_bounds(&data.days, cfg.model.correlation)?,
        None => (1.0, 2.0),
    };
    Ok(ChainState {
        theta,
        latent,
        hyper: HyperState {
            delta,
            t: DMatrix::identity(p, p),
            phi: 0.5 * (bounds.0 + bounds.1),
        },
    })
}

/// Fits the spatiotemporal model to one series.
pub fn run_chain(data: &VfSeries, graph: &ArealGraph, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    run_chain_stream(data, graph, cfg, 0)
}

/// As [`run_chain`] with an explicit RNG stream (patients, replicates).
pub fn run_chain_stream(
    data: &VfSeries,
    graph: &ArealGraph,
    cfg: &SamplerConfig,
    stream: u64,
) -> Result<PosteriorDraws> {
    Chain::new(data, graph, cfg, PriorMode::Separable, stream)?.run()
}

/// Fits the spatial-only comparator: an independent chain per visit with
/// binary threshold weights and an `MVN(μ_δ, Ω_δ)` prior on each column.
///
/// Visit `t` uses RNG stream `stream * 4096 + t`.
pub fn fit_space_only(
    data: &VfSeries,
    graph: &ArealGraph,
    cfg: &SamplerConfig,
    stream: u64,
) -> Result<Vec<PosteriorDraws>> {
    let mut cfg = cfg.clone();
    cfg.model.weights = WeightScheme::Threshold;
    let base = stream
        .checked_mul(4096)
        .ok_or_else(|| WombleError::Config(format!("stream {stream} too large for per-visit fits")))?;
    (0..data.n_visits())
        .map(|t| {
            let single = VfSeries {
                y: vec![data.y[t].clone()],
                days: vec![0.0],
            };
            let mut draws =
                Chain::new(&single, graph, &cfg, PriorMode::IndependentVisits, base + t as u64)?.run()?;
            draws.days = vec![data.days[t]];
            Ok(draws)
        })
        .collect()
}

/// Convenience constructor for `ObsParams` from column `t` of a draw.
pub fn obs_params(theta: &DMatrix<f64>, t: usize) -> ObsParams {
    ObsParams::from_column(theta.column(t).as_slice())
}
