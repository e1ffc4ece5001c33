use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use womble_core::data::{write_cohort, Patient};
use womble_core::diagnostics::{
    cohort_metrics, compare_models, composite_terms, cv_summary, early_followup_curve, followup_metrics,
    quantile_sorted, single_metric_table, write_followup_csv, write_metrics_csv, write_roc_csv, CvSummary,
    Metric, MetricRecord,
};
use womble_core::graph::ArealGraph;
use womble_core::predict::sample_ppd;
use womble_core::sampler::{
    fit_space_only, read_draws_csv, rng_for, run_chain_stream, AcceptanceSummary, PosteriorDraws, SamplerConfig,
};
use womble_core::sim::{run_study, simulate_cohort, write_study_csv, ReplicateResult};
use womble_core::WombleError;

use crate::config::RunConfig;
use crate::inputs;
use crate::manifest::Manifest;

fn generated_seed() -> u64 {
    use std::hash::{BuildHasher, Hasher};
    let mut h = std::collections::hash_map::RandomState::new().build_hasher();
    h.write_u128(
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos()),
    );
    h.finish()
}

pub fn dispatch(command: &str, cfg: RunConfig, config_file: Option<&Path>) -> Result<()> {
    let (seed, generated) = match cfg.seed {
        Some(s) => (s, false),
        None => (generated_seed(), true),
    };
    if generated {
        info!("no seed given; using generated seed {seed}");
    }
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut manifest = Manifest::new(command, &cfg, seed, generated)?;
    if let Some(p) = config_file {
        manifest.add_input("config", p)?;
    }
    if let Some(p) = &cfg.predict.draws {
        if command == "predict" {
            manifest.add_input("draws", p.join("manifest.json").as_path()).ok();
        }
    }
    manifest.write(&cfg.out)?;
    let start = Instant::now();
    match command {
        "fit" => fit(&cfg, seed),
        "predict" => predict(&cfg, seed),
        "diagnose" => diagnose(&cfg, seed),
        "simulate" => simulate(&cfg, seed),
        other => unreachable!("unknown command {other}"),
    }?;
    info!("{command} finished in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

/// File-system-safe directory name for a patient id.
fn patient_dir(out: &Path, id: &str) -> PathBuf {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    out.join(safe)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn sampler(cfg: &RunConfig, seed: u64, graph: &ArealGraph) -> Result<SamplerConfig> {
    let s = cfg.sampler_config(seed);
    s.validate(graph.q())?;
    Ok(s)
}

fn fit_patient(p: &Patient, stream: u64, graph: &ArealGraph, s: &SamplerConfig, space_only: bool) -> Result<PosteriorDraws> {
    let draws = if space_only {
        PosteriorDraws::join_visits(&fit_space_only(&p.series, graph, s, stream)?)
    } else {
        run_chain_stream(&p.series, graph, s, stream)
    };
    draws.with_context(|| format!("patient {}", p.id))
}

#[derive(Serialize)]
struct ParamSummary {
    name: &'static str,
    visit: usize,
    component: usize,
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
}

fn summarize(name: &'static str, visit: usize, component: usize, mut v: Vec<f64>) -> ParamSummary {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    v.sort_by(f64::total_cmp);
    ParamSummary {
        name,
        visit,
        component,
        mean,
        sd,
        lower: quantile_sorted(&v, 0.025),
        upper: quantile_sorted(&v, 0.975),
    }
}

#[derive(Serialize)]
struct FitSummary {
    patient: String,
    model: &'static str,
    n_visits: usize,
    n_locations: usize,
    n_draws: usize,
    days: Vec<f64>,
    /// Posterior mean of `α_t` per visit, one vector per metric.
    alpha_mean: Vec<Vec<f64>>,
    /// Posterior CV of `α_t` over visits, one entry per metric.
    cv_alpha: Vec<Option<CvSummary>>,
    parameters: Vec<ParamSummary>,
    acceptance: AcceptanceSummary,
}

fn fit_summary(id: &str, d: &PosteriorDraws, space_only: bool) -> FitSummary {
    let nu = d.n_visits();
    let q = d.q();
    let mut parameters = Vec::new();
    let rows = |r: usize, t: usize| d.theta.iter().map(|th| th[(r, t)]).collect::<Vec<f64>>();
    for t in 0..nu {
        parameters.push(summarize("mu", t + 1, 0, rows(0, t)));
        parameters.push(summarize("log_tau", t + 1, 0, rows(1, t)));
        for k in 0..q {
            parameters.push(summarize("log_alpha", t + 1, k, rows(2 + k, t)));
        }
    }
    if !d.hyper.is_empty() {
        let p = q + 2;
        for k in 0..p {
            parameters.push(summarize("delta", 0, k, d.hyper.iter().map(|h| h.delta[k]).collect()));
        }
        for r in 0..p {
            for c in 0..p {
                parameters.push(summarize("T", 0, r * p + c, d.hyper.iter().map(|h| h.t[(r, c)]).collect()));
            }
        }
        parameters.push(summarize("phi", 0, 0, d.hyper.iter().map(|h| h.phi).collect()));
    }
    let n = d.len() as f64;
    let alpha_mean = (0..q)
        .map(|k| {
            let a = d.alpha(k);
            (0..nu).map(|t| a.iter().map(|x| x[t]).sum::<f64>() / n).collect()
        })
        .collect();
    let cv_alpha = (0..q).map(|k| cv_summary(&d.alpha(k)).ok()).collect();
    FitSummary {
        patient: id.to_string(),
        model: if space_only { "space" } else { "spatiotemporal" },
        n_visits: nu,
        n_locations: d.n_locations,
        n_draws: d.len(),
        days: d.days.clone(),
        alpha_mean,
        cv_alpha,
        parameters,
        acceptance: d.acceptance.clone(),
    }
}

fn fit(cfg: &RunConfig, seed: u64) -> Result<()> {
    let graph = inputs::graph(cfg)?;
    let patients = inputs::cohort(cfg, &graph)?;
    let s = sampler(cfg, seed, &graph)?;
    info!("fitting {} patient(s), {} iterations each", patients.len(), s.n_iter);
    patients.par_iter().try_for_each(|(k, p)| -> Result<()> {
        let start = Instant::now();
        let draws = fit_patient(p, *k as u64, &graph, &s, cfg.space_only)?;
        let dir = patient_dir(&cfg.out, &p.id);
        draws.write_csv(create(&dir.join("draws.csv"))?)?;
        write_json(&dir.join("summary.json"), &fit_summary(&p.id, &draws, cfg.space_only))?;
        info!("patient {}: {} draws in {:.1} s", p.id, draws.len(), start.elapsed().as_secs_f64());
        Ok(())
    })
}

fn stored_draws(dir: &Path, p: &Patient, s: &SamplerConfig) -> Result<PosteriorDraws> {
    let path = patient_dir(dir, &p.id).join("draws.csv");
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let table = read_draws_csv(file, &path.display().to_string())?;
    Ok(PosteriorDraws::from_table(table, p.series.days.clone(), p.series.n_locations(), s.model.clone())?)
}

/// Per-patient seed for predictive sampling, so patients never share streams.
fn patient_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(k as u64 + 1))
}

fn predict(cfg: &RunConfig, seed: u64) -> Result<()> {
    if cfg.space_only {
        return Err(WombleError::Config("prediction needs the spatiotemporal model; drop --space-only".into()).into());
    }
    let graph = inputs::graph(cfg)?;
    let patients = inputs::cohort(cfg, &graph)?;
    let s = sampler(cfg, seed, &graph)?;
    patients.par_iter().try_for_each(|(k, p)| -> Result<()> {
        let draws = match &cfg.predict.draws {
            Some(dir) => stored_draws(dir, p, &s)?,
            None => fit_patient(p, *k as u64, &graph, &s, false)?,
        };
        let last = *p.series.days.last().expect("validated series");
        let days: Vec<f64> = if cfg.predict.days.is_empty() {
            cfg.predict.after.iter().map(|a| last + a).collect()
        } else {
            cfg.predict.days.clone()
        };
        let pred = sample_ppd(&draws, &graph, &days, patient_seed(seed, *k)).with_context(|| format!("patient {}", p.id))?;
        let dir = patient_dir(&cfg.out, &p.id);
        pred.write_csv(create(&dir.join("prediction.csv"))?)?;
        let mut w = csv::Writer::from_writer(create(&dir.join("prediction_summary.csv"))?);
        w.write_record(["day", "location", "mean", "sd", "lower", "upper"])?;
        for r in pred.summarize() {
            w.write_record([
                format!("{}", r.day),
                r.location.to_string(),
                format!("{:e}", r.mean),
                format!("{:e}", r.sd),
                format!("{:e}", r.lower),
                format!("{:e}", r.upper),
            ])?;
        }
        w.flush()?;
        info!("patient {}: predicted {} day(s) from {} draws", p.id, days.len(), draws.len());
        Ok(())
    })
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn diagnose(cfg: &RunConfig, seed: u64) -> Result<()> {
    let graph = inputs::graph(cfg)?;
    let selected = inputs::cohort(cfg, &graph)?;
    let s = sampler(cfg, seed, &graph)?;
    let d = &cfg.diagnose;
    let label_map = cfg.labels.as_deref().map(inputs::labels).transpose()?;
    let mut patients: Vec<Patient> = selected.into_iter().map(|(_, p)| p).collect();
    if let Some(map) = &label_map {
        let before = patients.len();
        patients.retain(|p| map.contains_key(&p.id));
        if patients.len() < before {
            warn!("{} patient(s) without a label are left out", before - patients.len());
        }
    }
    let labels: Vec<Option<bool>> = patients
        .iter()
        .map(|p| label_map.as_ref().and_then(|m| m.get(&p.id).copied()))
        .collect();
    info!("computing metrics for {} patient(s)", patients.len());
    let records = cohort_metrics(&patients, &labels, &graph, &s, d.include_space)?;
    write_metrics_csv(&records, create(&cfg.out.join("metrics.csv"))?)?;
    if label_map.is_none() {
        return Ok(());
    }
    let y: Vec<bool> = labels.iter().map(|l| l.expect("filtered")).collect();
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        warn!("labels contain a single class; regression and ROC outputs skipped");
        return Ok(());
    }

    let mut metrics = vec![Metric::MeanCv, Metric::PlrMinp];
    if d.include_space {
        metrics.push(Metric::SpaceCv);
    }
    metrics.push(Metric::StCv);
    let coef = single_metric_table(&records, &metrics)?;
    write_csv_rows(&cfg.out.join("coefficients.csv"), &coef)?;

    let mut models = vec![("trend".to_string(), composite_terms(None))];
    if d.include_space {
        models.push(("trend_space_cv".to_string(), composite_terms(Some(Metric::SpaceCv))));
    }
    models.push(("trend_st_cv".to_string(), composite_terms(Some(Metric::StCv))));
    let needed = models.iter().map(|(_, t)| t.len() + 2).max().unwrap_or(0);
    if records.len() < needed {
        warn!(
            "{} labeled patient(s) are too few for the composite models (need {needed}); comparison skipped",
            records.len()
        );
        return Ok(());
    }
    let (rows, fitted, rocs) = compare_models(&records, &models, d.spec_min, d.n_boot, seed)?;
    write_csv_rows(&cfg.out.join("comparison.csv"), &rows)?;
    for ((name, _), roc) in models.iter().zip(&rocs) {
        write_roc_csv(&roc.curve, create(&cfg.out.join(format!("roc_{name}.csv")))?)?;
    }

    if d.followup {
        info!("recomputing metrics every {} days of follow-up", d.step_days);
        let steps = followup_metrics(&patients, &labels, &graph, &s, d.step_days, d.include_space)?;
        write_followup_metrics(&cfg.out.join("followup_metrics.csv"), &steps)?;
        let by_time: Vec<(f64, Vec<MetricRecord>)> = steps.iter().map(|(t, r, _)| (*t, r.clone())).collect();
        let skipped: Vec<usize> = steps.iter().map(|s| s.2).collect();
        for ((name, _), model) in models.iter().zip(&fitted) {
            let curve = early_followup_curve(&by_time, &skipped, model, d.spec_min, d.window)?;
            write_followup_csv(&curve, create(&cfg.out.join(format!("followup_{name}.csv")))?)?;
        }
    }
    Ok(())
}

fn write_followup_metrics(path: &Path, steps: &[(f64, Vec<MetricRecord>, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["day", "patient", "st_cv", "space_cv", "mean_cv", "plr_minp", "label"])?;
    for (day, records, _) in steps {
        for r in records {
            w.write_record([
                format!("{day}"),
                r.patient.clone(),
                format!("{:e}", r.st_cv),
                format!("{:e}", r.space_cv),
                format!("{:e}", r.mean_cv),
                format!("{:e}", r.plr_minp),
                r.label.map_or(String::new(), |l| u8::from(l).to_string()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate(cfg: &RunConfig, seed: u64) -> Result<()> {
    let graph = inputs::graph(cfg)?;
    if let Some(design) = &cfg.simulate.cohort {
        if design.n_progressing > design.n_patients || design.n_visits < 2 {
            return Err(WombleError::Config("cohort needs n_progressing ≤ n_patients and at least two visits".into()).into());
        }
        let cohort = simulate_cohort(design, &graph, &cfg.model_config(), &mut rng_for(seed, 0))?;
        let patients: Vec<Patient> = cohort.iter().map(|c| c.0.clone()).collect();
        write_cohort(&patients, create(&cfg.out.join("data.csv"))?)?;
        let mut w = csv::Writer::from_writer(create(&cfg.out.join("labels.csv"))?);
        w.write_record(["patient", "label"])?;
        for (p, l) in &cohort {
            w.write_record([p.id.as_str(), if *l { "1" } else { "0" }])?;
        }
        w.flush()?;
        info!("wrote a cohort of {} patients", patients.len());
        return Ok(());
    }
    let study = cfg.study_config(seed)?;
    info!(
        "simulation study: settings {:?}, visits {:?}, {} θ × {} datasets, {} iterations",
        study.settings, study.n_visits, study.n_theta, study.n_data_per_theta, study.sampler.n_iter
    );
    let (rows, results) = run_study(&study, &graph);
    for r in results.iter().filter(|r| r.error.is_some()) {
        warn!(
            "setting {} {} θ{} data{} failed: {}",
            r.setting.label(),
            r.model.label(),
            r.theta_index,
            r.data_index,
            r.error.as_deref().unwrap_or("")
        );
    }
    write_study_csv(&rows, create(&cfg.out.join("study.csv"))?)?;
    write_replicates(&cfg.out.join("replicates.csv"), &results)?;
    Ok(())
}

fn write_replicates(path: &Path, results: &[ReplicateResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "setting", "model", "n_visits", "theta_index", "data_index", "truth", "mean", "sd", "lower", "upper", "covered",
        "error",
    ])?;
    for r in results {
        let e = r.estimate.as_ref();
        let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
        w.write_record([
            r.setting.label().to_string(),
            r.model.label().to_string(),
            r.n_visits.to_string(),
            r.theta_index.to_string(),
            r.data_index.to_string(),
            format!("{:e}", r.truth),
            f(e.map(|e| e.mean)),
            f(e.map(|e| e.sd)),
            f(e.map(|e| e.lower)),
            f(e.map(|e| e.upper)),
            r.covered().map_or(String::new(), |c| u8::from(c).to_string()),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
