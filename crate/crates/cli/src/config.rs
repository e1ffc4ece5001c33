//! Run configuration: built-in defaults, then a JSON file, then flags and
//! `WOMBLE_` environment variables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use womble_core::car::{Likelihood, WeightScheme};
use womble_core::graph::Metric;
use womble_core::sampler::{AdaptConfig, HyperPriors, ModelConfig, SamplerConfig};
use womble_core::sim::{CohortDesign, Setting, StudyConfig};
use womble_core::temporal::Correlation;
use womble_core::WombleError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Location file; the built-in 24-2 layout when absent.
    pub graph: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub metric: Metric,
    pub out: PathBuf,
    pub labels: Option<PathBuf>,
    /// `None` until resolved; a generated seed is recorded in the manifest.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Fit every visit separately with threshold weights and no hyper level.
    pub space_only: bool,
    /// Restrict to these patient ids (all when empty).
    pub patients: Vec<String>,
    pub sampler: SamplerSection,
    pub model: ModelSection,
    pub predict: PredictSection,
    pub diagnose: DiagnoseSection,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub n_iter: usize,
    pub n_burn: usize,
    pub n_thin: usize,
    pub componentwise: bool,
    pub store_latent: bool,
    pub adapt: AdaptConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodKind {
    Tobit,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub rho: f64,
    pub correlation: Correlation,
    pub likelihood: LikelihoodKind,
    /// Observation variance (dB²) for the Gaussian likelihood.
    pub gaussian_variance: f64,
    pub y_scale: f64,
    pub dm_scale: f64,
    pub priors: HyperPriors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    /// Directory written by `fit`; the model is refitted when absent.
    pub draws: Option<PathBuf>,
    /// Absolute future days; takes precedence over `after`.
    pub days: Vec<f64>,
    /// Future days relative to each patient's last visit.
    pub after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    pub spec_min: f64,
    pub n_boot: usize,
    pub include_space: bool,
    pub followup: bool,
    pub step_days: f64,
    /// Neighbouring time points averaged on each side of the pAUC curve.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub settings: Vec<Setting>,
    pub n_visits: Vec<usize>,
    pub n_theta: usize,
    pub n_data_per_theta: usize,
    pub full_budget: bool,
    pub n_iter: usize,
    pub n_burn: usize,
    pub n_thin: usize,
    /// Simulate a labeled cohort instead of running the study.
    pub cohort: Option<CohortDesign>,
}

impl RunConfig {
    pub fn defaults(q: usize) -> Self {
        let s = SamplerConfig::standard(q);
        let desk = StudyConfig::desk(Setting::ALL.to_vec(), vec![7], 1);
        Self {
            data: None,
            graph: None,
            edges: None,
            metric: Metric::GarwayHeath,
            out: PathBuf::from("womble-out"),
            labels: None,
            seed: None,
            threads: None,
            space_only: false,
            patients: Vec::new(),
            sampler: SamplerSection {
                n_iter: s.n_iter,
                n_burn: s.n_burn,
                n_thin: s.n_thin,
                componentwise: s.componentwise,
                store_latent: s.store_latent,
                adapt: s.adapt,
            },
            model: ModelSection {
                rho: s.model.rho,
                correlation: s.model.correlation,
                likelihood: LikelihoodKind::Tobit,
                gaussian_variance: 1.0,
                y_scale: s.model.y_scale,
                dm_scale: s.model.dm_scale,
                priors: s.model.priors,
            },
            predict: PredictSection {
                draws: None,
                days: Vec::new(),
                after: vec![365.0],
            },
            diagnose: DiagnoseSection {
                spec_min: 0.85,
                n_boot: 2000,
                include_space: true,
                followup: true,
                step_days: 182.5,
                window: 1,
            },
            simulate: SimulateSection {
                settings: desk.settings,
                n_visits: desk.n_visits,
                n_theta: desk.n_theta,
                n_data_per_theta: desk.n_data_per_theta,
                full_budget: false,
                n_iter: desk.sampler.n_iter,
                n_burn: desk.sampler.n_burn,
                n_thin: desk.sampler.n_thin,
                cohort: None,
            },
        }
    }

    /// Resolves `defaults < file < overrides`, where each override is a
    /// dotted key path and a JSON value.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let file_value = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| WombleError::Parse {
                    path: p.display().to_string(),
                    line: e.line(),
                    msg: e.to_string(),
                })?;
                if !v.is_object() {
                    return Err(WombleError::Config(format!("{}: config must be a JSON object", p.display())).into());
                }
                v
            }
            None => json!({}),
        };
        let mut layered = json!({});
        merge(&mut layered, &file_value);
        for (k, v) in overrides {
            set_path(&mut layered, k, v.clone());
        }
        let metric: Metric = match layered.get("metric") {
            Some(m) => serde_json::from_value(m.clone()).map_err(|e| WombleError::Config(format!("metric: {e}")))?,
            None => Metric::GarwayHeath,
        };
        let mut value = serde_json::to_value(Self::defaults(metric.q()))?;
        merge(&mut value, &layered);
        let cfg: Self = serde_json::from_value(value).map_err(|e| WombleError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            rho: m.rho,
            correlation: m.correlation,
            likelihood: match m.likelihood {
                LikelihoodKind::Tobit => Likelihood::Tobit,
                LikelihoodKind::Gaussian => Likelihood::Gaussian {
                    variance: m.gaussian_variance / (m.y_scale * m.y_scale),
                },
            },
            weights: WeightScheme::Continuous,
            y_scale: m.y_scale,
            dm_scale: m.dm_scale,
            priors: m.priors.clone(),
        }
    }

    pub fn sampler_config(&self, seed: u64) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            n_iter: s.n_iter,
            n_burn: s.n_burn,
            n_thin: s.n_thin,
            seed,
            adapt: s.adapt.clone(),
            componentwise: s.componentwise,
            store_latent: s.store_latent,
            model: self.model_config(),
        }
    }

    pub fn study_config(&self, seed: u64) -> Result<StudyConfig> {
        let sim = &self.simulate;
        let mut sampler = self.sampler_config(seed);
        sampler.n_iter = sim.n_iter;
        sampler.n_burn = sim.n_burn;
        sampler.n_thin = sim.n_thin;
        let mut cfg = StudyConfig {
            settings: sim.settings.clone(),
            n_visits: sim.n_visits.clone(),
            n_theta: sim.n_theta,
            n_data_per_theta: sim.n_data_per_theta,
            seed,
            sampler,
        };
        if sim.full_budget {
            cfg = cfg.full_budget();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn require_data(&self) -> Result<&Path> {
        match &self.data {
            Some(p) => Ok(p),
            None => bail!(WombleError::Config("no data file given (--data or \"data\" in the config)".into())),
        }
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn set_path(root: &mut Value, path: &str, v: Value) {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        if !cur.get(*p).is_some_and(Value::is_object) {
            cur.as_object_mut().expect("object").insert(p.to_string(), Value::Object(Map::new()));
        }
        cur = cur.get_mut(*p).expect("just inserted");
    }
    cur.as_object_mut()
        .expect("object")
        .insert(parts[parts.len() - 1].to_string(), v);
}
