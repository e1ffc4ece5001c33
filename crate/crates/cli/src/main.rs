//! `womble`: fit, predict, diagnose and simulate from the command line.

mod commands;
mod config;
mod inputs;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::RunConfig;
use womble_core::WombleError;

#[derive(Parser, Debug)]
#[command(name = "womble", version, about = "Spatiotemporal boundary detection for visual field series")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON config file; flags and WOMBLE_ variables override it.
    #[arg(long, global = true, env = "WOMBLE_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "WOMBLE_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "WOMBLE_SEED")]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "WOMBLE_THREADS")]
    threads: Option<usize>,
    /// Long-format data CSV `patient,visit,day,location,dls_db`.
    #[arg(long, global = true, env = "WOMBLE_DATA")]
    data: Option<PathBuf>,
    /// Location CSV `id,row,col,angle,blind_spot` (default: built-in 24-2).
    #[arg(long, global = true, env = "WOMBLE_GRAPH")]
    graph: Option<PathBuf>,
    /// Optional `i,j` edge list replacing queen adjacency.
    #[arg(long, global = true, env = "WOMBLE_EDGES")]
    edges: Option<PathBuf>,
    /// Dissimilarity metric: garway-heath or none.
    #[arg(long, global = true, env = "WOMBLE_METRIC")]
    metric: Option<String>,
    /// Labels CSV `patient,label` with label 0/1.
    #[arg(long, global = true, env = "WOMBLE_LABELS")]
    labels: Option<PathBuf>,
    /// Restrict to one patient id (repeatable).
    #[arg(long = "patient", global = true)]
    patients: Vec<String>,
    #[arg(long, global = true, env = "WOMBLE_N_ITER")]
    n_iter: Option<usize>,
    #[arg(long, global = true, env = "WOMBLE_N_BURN")]
    n_burn: Option<usize>,
    #[arg(long, global = true, env = "WOMBLE_N_THIN")]
    n_thin: Option<usize>,
    #[arg(long, global = true, env = "WOMBLE_RHO")]
    rho: Option<f64>,
    /// exponential or ar1.
    #[arg(long, global = true, env = "WOMBLE_CORRELATION")]
    correlation: Option<String>,
    /// tobit or gaussian.
    #[arg(long, global = true, env = "WOMBLE_LIKELIHOOD")]
    likelihood: Option<String>,
    /// Fit every visit separately (spatial-only comparator).
    #[arg(long, global = true)]
    space_only: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit each patient's series and write draws and a posterior summary.
    Fit,
    /// Posterior predictive draws for future visits.
    Predict {
        /// Output directory of an earlier `fit` run (refits when absent).
        #[arg(long, env = "WOMBLE_DRAWS")]
        draws: Option<PathBuf>,
        /// Comma-separated absolute future days.
        #[arg(long, value_delimiter = ',')]
        days: Vec<f64>,
        /// Comma-separated days after each patient's last visit.
        #[arg(long, value_delimiter = ',')]
        after: Vec<f64>,
    },
    /// Progression metrics, and regression/ROC/follow-up outputs with labels.
    Diagnose {
        #[arg(long, env = "WOMBLE_N_BOOT")]
        n_boot: Option<usize>,
        /// Skip the spatial-only fits and Space CV.
        #[arg(long)]
        no_space: bool,
        /// Skip the early follow-up recomputation.
        #[arg(long)]
        no_followup: bool,
        #[arg(long)]
        step_days: Option<f64>,
    },
    /// Simulation study (or a labeled cohort with --cohort).
    Simulate {
        /// Comma-separated settings, e.g. A,D.
        #[arg(long, value_delimiter = ',')]
        settings: Vec<String>,
        /// Comma-separated visit counts.
        #[arg(long, value_delimiter = ',')]
        visits: Vec<usize>,
        #[arg(long)]
        n_theta: Option<usize>,
        #[arg(long)]
        n_data: Option<usize>,
        /// 100 θ draws × 10 datasets per setting.
        #[arg(long, env = "WOMBLE_FULL_BUDGET")]
        full_budget: bool,
        /// Write a labeled cohort of this many patients instead.
        #[arg(long)]
        cohort: Option<usize>,
        /// Progressing patients in the cohort (default: half).
        #[arg(long)]
        progressing: Option<usize>,
        /// Visits per cohort patient.
        #[arg(long)]
        cohort_visits: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Predict { .. } => "predict",
            Command::Diagnose { .. } => "diagnose",
            Command::Simulate { .. } => "simulate",
        }
    }
}

fn overrides(cli: &Cli) -> Vec<(String, Value)> {
    let c = &cli.common;
    let mut o: Vec<(String, Value)> = Vec::new();
    let mut put = |k: &str, v: Value| o.push((k.to_string(), v));
    let path = |p: &PathBuf| json!(p.display().to_string());
    if let Some(p) = &c.out {
        put("out", path(p));
    }
    if let Some(s) = c.seed {
        put("seed", json!(s));
    }
    if let Some(t) = c.threads {
        put("threads", json!(t));
    }
    if let Some(p) = &c.data {
        put("data", path(p));
    }
    if let Some(p) = &c.graph {
        put("graph", path(p));
    }
    if let Some(p) = &c.edges {
        put("edges", path(p));
    }
    if let Some(m) = &c.metric {
        put("metric", json!(m));
    }
    if let Some(p) = &c.labels {
        put("labels", path(p));
    }
    if !c.patients.is_empty() {
        put("patients", json!(c.patients));
    }
    let sim = matches!(cli.command, Command::Simulate { .. });
    let section = if sim { "simulate" } else { "sampler" };
    if let Some(n) = c.n_iter {
        put(&format!("{section}.n_iter"), json!(n));
    }
    if let Some(n) = c.n_burn {
        put(&format!("{section}.n_burn"), json!(n));
    }
    if let Some(n) = c.n_thin {
        put(&format!("{section}.n_thin"), json!(n));
    }
    if let Some(r) = c.rho {
        put("model.rho", json!(r));
    }
    if let Some(s) = &c.correlation {
        put("model.correlation", json!(s));
    }
    if let Some(s) = &c.likelihood {
        put("model.likelihood", json!(s));
    }
    if c.space_only {
        put("space_only", json!(true));
    }
    match &cli.command {
        Command::Fit => {}
        Command::Predict { draws, days, after } => {
            if let Some(p) = draws {
                put("predict.draws", path(p));
            }
            if !days.is_empty() {
                put("predict.days", json!(days));
            }
            if !after.is_empty() {
                put("predict.after", json!(after));
            }
        }
        Command::Diagnose {
            n_boot,
            no_space,
            no_followup,
            step_days,
        } => {
            if let Some(n) = n_boot {
                put("diagnose.n_boot", json!(n));
            }
            if *no_space {
                put("diagnose.include_space", json!(false));
            }
            if *no_followup {
                put("diagnose.followup", json!(false));
            }
            if let Some(s) = step_days {
                put("diagnose.step_days", json!(s));
            }
        }
        Command::Simulate {
            settings,
            visits,
            n_theta,
            n_data,
            full_budget,
            cohort,
            progressing,
            cohort_visits,
        } => {
            if !settings.is_empty() {
                put("simulate.settings", json!(settings.iter().map(|s| s.trim().to_uppercase()).collect::<Vec<_>>()));
            }
            if !visits.is_empty() {
                put("simulate.n_visits", json!(visits));
            }
            if let Some(n) = n_theta {
                put("simulate.n_theta", json!(n));
            }
            if let Some(n) = n_data {
                put("simulate.n_data_per_theta", json!(n));
            }
            if *full_budget {
                put("simulate.full_budget", json!(true));
            }
            if let Some(n) = cohort {
                let d = womble_core::sim::CohortDesign::default();
                put(
                    "simulate.cohort",
                    json!({
                        "n_patients": n,
                        "n_progressing": progressing.unwrap_or(n / 2),
                        "n_visits": cohort_visits.unwrap_or(d.n_visits),
                        "alpha_sd": d.alpha_sd,
                    }),
                );
            }
        }
    }
    o
}

/// Exit code 2 for malformed input or configuration, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<WombleError>() {
        Some(WombleError::Parse { .. } | WombleError::Config(_)) => 2,
        _ => 1,
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(cli.common.config.as_deref(), &overrides(cli))?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    commands::dispatch(cli.command.name(), cfg, cli.common.config.as_deref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WOMBLE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
