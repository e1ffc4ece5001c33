use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};

use womble_core::data::{read_cohort, Patient};
use womble_core::graph::{build_queen_adjacency, load_graph, read_locations, ArealGraph, VF24_2_CSV};
use womble_core::WombleError;

use crate::config::RunConfig;

pub fn graph(cfg: &RunConfig) -> Result<ArealGraph> {
    match &cfg.graph {
        Some(p) => Ok(load_graph(p, cfg.metric, cfg.edges.as_deref())?),
        None => {
            if cfg.edges.is_some() {
                return Err(WombleError::Config("an edge list needs a location file (--graph)".into()).into());
            }
            let locs = read_locations(VF24_2_CSV.as_bytes(), "built-in 24-2 layout")?;
            Ok(build_queen_adjacency(locs, cfg.metric)?)
        }
    }
}

/// Reads the cohort, keeps the requested patients and checks the location
/// count against the graph. Each patient keeps its index in the file, which
/// selects its RNG stream.
pub fn cohort(cfg: &RunConfig, graph: &ArealGraph) -> Result<Vec<(usize, Patient)>> {
    let path = cfg.require_data()?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let all = read_cohort(file, &path.display().to_string())?;
    let mut out = Vec::new();
    for (k, p) in all.into_iter().enumerate() {
        if !cfg.patients.is_empty() && !cfg.patients.contains(&p.id) {
            continue;
        }
        if p.series.n_locations() != graph.n() {
            return Err(WombleError::Data(format!(
                "patient {} has {} locations but the graph has {}",
                p.id,
                p.series.n_locations(),
                graph.n()
            ))
            .into());
        }
        out.push((k, p));
    }
    if out.is_empty() {
        return Err(WombleError::Data("no patients selected".into()).into());
    }
    Ok(out)
}

/// Reads `patient,label` with labels `0`/`1` (or `false`/`true`).
pub fn labels(path: &Path) -> Result<HashMap<String, bool>> {
    let label = path.display().to_string();
    let file = File::open(path).with_context(|| format!("opening {label}"))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let err = |line: usize, msg: String| WombleError::Parse {
        path: label.clone(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["patient", "label"] {
        return Err(err(1, "header must be patient,label".into()).into());
    }
    let mut out = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        let v = match &rec[1] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(err(line, format!("bad label '{other}'")).into()),
        };
        if out.insert(rec[0].to_string(), v).is_some() {
            return Err(err(line, format!("duplicate patient '{}'", &rec[0])).into());
        }
    }
    Ok(out)
}
