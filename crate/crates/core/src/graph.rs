//! Areal lattice: locations, queen adjacency and pairwise dissimilarity metrics.
//!
//! Location files use the header `id,row,col,angle,blind_spot` with 1-based
//! ids. Blind-spot rows are kept as metadata but never enter the adjacency;
//! the remaining locations are re-indexed contiguously from 0 in file order.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, WombleError};

/// The 24-2 visual field layout with Garway-Heath angles, as shipped in `data/vf24_2.csv`.
pub const VF24_2_CSV: &str = include_str!("../data/vf24_2.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    /// 0-based index among informative locations (blind spots keep `usize::MAX`).
    pub id: usize,
    /// 1-based id as written in the source file.
    pub file_id: usize,
    pub row: i32,
    pub col: i32,
    /// Garway-Heath angle in degrees, `[0, 360)`.
    pub angle: Option<f64>,
    pub blind_spot: bool,
}

/// Selects how the dissimilarity vector `z_ij` is derived from location attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// No dissimilarity metrics (q = 0); weights reduce to plain adjacency.
    None,
    /// Circular distance between Garway-Heath angles (q = 1).
    #[default]
    GarwayHeath,
}

impl Metric {
    pub fn q(self) -> usize {
        match self {
            Metric::None => 0,
            Metric::GarwayHeath => 1,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = WombleError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Metric::None),
            "garway-heath" | "gh" => Ok(Metric::GarwayHeath),
            other => Err(WombleError::Config(format!("unknown metric '{other}'"))),
        }
    }
}

/// Minimum arc distance between two angles on the circle, in degrees.
pub fn circular_distance(x: f64, y: f64) -> Result<f64> {
    for v in [x, y] {
        if !(0.0..360.0).contains(&v) {
            return Err(domain(format!("angle {v} outside [0, 360)")));
        }
    }
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    Ok((hi - lo).min(360.0 - hi + lo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub z: Vec<f64>,
}

/// Immutable areal graph over the informative (non-blind-spot) locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArealGraph {
    locations: Vec<Location>,
    blind_spots: Vec<Location>,
    q: usize,
    /// Undirected edges with `i < j`, sorted.
    edges: Vec<Edge>,
    /// Per-node `(neighbor, edge index)` lists, sorted by neighbor.
    neighbors: Vec<Vec<(usize, usize)>>,
}

impl ArealGraph {
    /// Builds a graph from an explicit undirected pair list over informative locations.
    ///
    /// `pairs` refer to the 0-based informative indices. Duplicates and either
    /// orientation are accepted; self-loops are rejected.
    pub fn from_pairs(
        locations: Vec<Location>,
        blind_spots: Vec<Location>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        metric: Metric,
    ) -> Result<Self> {
        let n = locations.len();
        for (k, loc) in locations.iter().enumerate() {
            if loc.id != k {
                return Err(WombleError::Graph(format!(
                    "location ids must be contiguous: position {k} has id {}",
                    loc.id
                )));
            }
            if loc.blind_spot {
                return Err(WombleError::Graph(format!(
                    "blind-spot location {} passed as informative",
                    loc.file_id
                )));
            }
            if metric == Metric::GarwayHeath && loc.angle.is_none() {
                return Err(WombleError::Graph(format!(
                    "location {} has no angle but the garway-heath metric was requested",
                    loc.file_id
                )));
            }
        }
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(WombleError::Graph(format!("pair ({a}, {b}) out of range for {n} locations")));
            }
            if a == b {
                return Err(WombleError::Graph(format!("self-adjacency at location {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut edges = Vec::with_capacity(set.len());
        for (i, j) in set {
            let z = match metric {
                Metric::None => Vec::new(),
                Metric::GarwayHeath => {
                    let (ai, aj) = (locations[i].angle.unwrap(), locations[j].angle.unwrap());
                    vec![circular_distance(ai, aj)?]
                }
            };
            edges.push(Edge { i, j, z });
        }
        Self::from_edges(locations, blind_spots, metric.q(), edges)
    }

    /// Builds a graph from edges that already carry their dissimilarity vectors.
    pub fn from_edges(
        locations: Vec<Location>,
        blind_spots: Vec<Location>,
        q: usize,
        mut edges: Vec<Edge>,
    ) -> Result<Self> {
        let n = locations.len();
        for e in &mut edges {
            if e.i == e.j || e.i >= n || e.j >= n {
                return Err(WombleError::Graph(format!("invalid edge ({}, {})", e.i, e.j)));
            }
            if e.i > e.j {
                std::mem::swap(&mut e.i, &mut e.j);
            }
            if e.z.len() != q {
                return Err(WombleError::Graph(format!(
                    "edge ({}, {}) has {} metrics, expected {q}",
                    e.i,
                    e.j,
                    e.z.len()
                )));
            }
            if e.z.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(WombleError::Graph(format!(
                    "edge ({}, {}) has a negative or non-finite dissimilarity",
                    e.i, e.j
                )));
            }
        }
        edges.sort_by_key(|e| (e.i, e.j));
        if edges.windows(2).any(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(WombleError::Graph("duplicate edge".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            neighbors[e.i].push((e.j, k));
            neighbors[e.j].push((e.i, k));
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            locations,
            blind_spots,
            q,
            edges,
            neighbors,
        })
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    /// Number of dissimilarity metrics per edge.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn blind_spots(&self) -> &[Location] {
        &self.blind_spots
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.neighbors[i]
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.dissim(i, j).is_some()
    }

    /// Dissimilarity vector of an adjacent pair, `None` when not adjacent.
    pub fn dissim(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.neighbors
            .get(i)?
            .binary_search_by_key(&j, |&(nb, _)| nb)
            .ok()
            .map(|pos| self.edges[self.neighbors[i][pos].1].z.as_slice())
    }

    /// The shipped 24-2 visual field graph: 52 locations, queen adjacency, Garway-Heath metric.
    pub fn vf24_2() -> Self {
        let locs = read_locations(VF24_2_CSV.as_bytes(), "vf24_2.csv")
            .expect("shipped VF layout parses");
        build_queen_adjacency(locs, Metric::GarwayHeath).expect("shipped VF layout is valid")
    }

    /// Writes the location table (blind spots included, original file ids) in the graph CSV format.
    pub fn write_locations<W: Write>(&self, out: W) -> Result<()> {
        let mut all: Vec<&Location> = self.locations.iter().chain(&self.blind_spots).collect();
        all.sort_by_key(|l| l.file_id);
        let mut w = out;
        let io = |e| WombleError::Io {
            path: "<graph>".into(),
            source: e,
        };
        writeln!(w, "id,row,col,angle,blind_spot").map_err(io)?;
        for l in all {
            let angle = l.angle.map(|a| format!("{a}")).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", l.file_id, l.row, l.col, angle, u8::from(l.blind_spot))
                .map_err(io)?;
        }
        Ok(())
    }

    /// Writes the adjacency as an `i,j` edge list using 1-based file ids.
    pub fn write_edges<W: Write>(&self, out: W) -> Result<()> {
        let mut w = out;
        let io = |e| WombleError::Io {
            path: "<edges>".into(),
            source: e,
        };
        writeln!(w, "i,j").map_err(io)?;
        for e in &self.edges {
            writeln!(w, "{},{}", self.locations[e.i].file_id, self.locations[e.j].file_id)
                .map_err(io)?;
        }
        Ok(())
    }
}

/// Queen adjacency: two informative locations are neighbors when both
/// lattice offsets are at most one.
pub fn build_queen_adjacency(grid: Vec<Location>, metric: Metric) -> Result<ArealGraph> {
    let mut seen = HashMap::new();
    for l in &grid {
        if let Some(prev) = seen.insert((l.row, l.col), l.file_id) {
            return Err(WombleError::Graph(format!(
                "locations {prev} and {} share grid cell ({}, {})",
                l.file_id, l.row, l.col
            )));
        }
    }
    let (mut informative, blind): (Vec<_>, Vec<_>) = grid.into_iter().partition(|l| !l.blind_spot);
    let blind = blind
        .into_iter()
        .map(|mut l| {
            l.id = usize::MAX;
            l
        })
        .collect();
    for (k, l) in informative.iter_mut().enumerate() {
        l.id = k;
    }
    let index: HashMap<(i32, i32), usize> =
        informative.iter().map(|l| ((l.row, l.col), l.id)).collect();
    let mut pairs = Vec::new();
    for l in &informative {
        for dr in -1..=1 {
            for dc in -1..=1 {
                if (dr, dc) == (0, 0) {
                    continue;
                }
                if let Some(&j) = index.get(&(l.row + dr, l.col + dc)) {
                    if l.id < j {
                        pairs.push((l.id, j));
                    }
                }
            }
        }
    }
    ArealGraph::from_pairs(informative, blind, pairs, metric)
}

/// Parses a location table. The `angle` column is optional; empty cells mean "no angle".
pub fn read_locations<R: Read>(reader: R, label: &str) -> Result<Vec<Location>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let parse_err = |line: usize, msg: String| WombleError::Parse {
        path: label.to_string(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c_id), Some(c_row), Some(c_col), Some(c_blind)) =
        (col("id"), col("row"), col("col"), col("blind_spot"))
    else {
        return Err(parse_err(1, "header must contain id,row,col,blind_spot".into()));
    };
    let c_angle = col("angle");
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let file_id: usize = field(c_id)
            .parse()
            .map_err(|_| parse_err(line, format!("bad id '{}'", field(c_id))))?;
        if file_id == 0 {
            return Err(parse_err(line, "ids are 1-based".into()));
        }
        let row: i32 = field(c_row)
            .parse()
            .map_err(|_| parse_err(line, format!("bad row '{}'", field(c_row))))?;
        let colv: i32 = field(c_col)
            .parse()
            .map_err(|_| parse_err(line, format!("bad col '{}'", field(c_col))))?;
        let blind_spot = match field(c_blind) {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" => false,
            other => return Err(parse_err(line, format!("bad blind_spot '{other}'"))),
        };
        let angle = match c_angle.map(field) {
            None | Some("") => None,
            Some(s) => {
                let a: f64 = s
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad angle '{s}'")))?;
                if !(0.0..360.0).contains(&a) {
                    return Err(WombleError::Domain(format!(
                        "{label}: line {line}: angle {a} outside [0, 360)"
                    )));
                }
                Some(a)
            }
        };
        out.push(Location {
            id: usize::MAX,
            file_id,
            row,
            col: colv,
            angle,
            blind_spot,
        });
    }
    let mut ids: Vec<usize> = out.iter().map(|l| l.file_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(WombleError::Graph(format!("{label}: duplicate location id")));
    }
    Ok(out)
}

/// Parses an `i,j` edge list of 1-based file ids.
pub fn read_edge_list<R: Read>(reader: R, label: &str) -> Result<Vec<(usize, usize)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let err = |msg: String| WombleError::Parse {
            path: label.to_string(),
            line,
            msg,
        };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 2 {
            return Err(err(format!("expected 2 fields, found {}", rec.len())));
        }
        let a: usize = rec[0].parse().map_err(|_| err(format!("bad id '{}'", &rec[0])))?;
        let b: usize = rec[1].parse().map_err(|_| err(format!("bad id '{}'", &rec[1])))?;
        out.push((a, b));
    }
    Ok(out)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| WombleError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Loads a graph from a location file, deriving queen adjacency, or from an
/// explicit edge list when one is given.
///
/// A declared edge list must be symmetric: if it lists `i,j` in both
/// orientations anywhere, each must have its mirror; single-orientation lists
/// are taken as undirected.
pub fn load_graph(path: &Path, metric: Metric, edge_list: Option<&Path>) -> Result<ArealGraph> {
    let label = path.display().to_string();
    let locs = read_locations(open(path)?, &label)?;
    match edge_list {
        None => build_queen_adjacency(locs, metric),
        Some(ep) => {
            let elabel = ep.display().to_string();
            let raw = read_edge_list(open(ep)?, &elabel)?;
            graph_from_edge_list(locs, &raw, metric, &elabel)
        }
    }
}

/// Assembles a graph from locations and a file-id edge list.
pub fn graph_from_edge_list(
    locs: Vec<Location>,
    raw: &[(usize, usize)],
    metric: Metric,
    label: &str,
) -> Result<ArealGraph> {
    let directed: BTreeSet<(usize, usize)> = raw.iter().copied().collect();
    let has_reverse = directed.iter().any(|&(a, b)| directed.contains(&(b, a)));
    if has_reverse {
        if let Some(&(a, b)) = directed.iter().find(|&&(a, b)| !directed.contains(&(b, a))) {
            return Err(WombleError::Graph(format!(
                "{label}: adjacency is not symmetric: ({a}, {b}) declared without ({b}, {a})"
            )));
        }
    }
    let mut seen = HashMap::new();
    let (mut informative, blind): (Vec<_>, Vec<_>) = locs.into_iter().partition(|l| !l.blind_spot);
    for (k, l) in informative.iter_mut().enumerate() {
        l.id = k;
        seen.insert(l.file_id, k);
    }
    let blind_ids: BTreeSet<usize> = blind.iter().map(|l| l.file_id).collect();
    let mut pairs = Vec::new();
    for &(a, b) in &directed {
        if blind_ids.contains(&a) || blind_ids.contains(&b) {
            continue;
        }
        let (Some(&i), Some(&j)) = (seen.get(&a), seen.get(&b)) else {
            return Err(WombleError::Graph(format!("{label}: edge ({a}, {b}) names an unknown location")));
        };
        pairs.push((i, j));
    }
    ArealGraph::from_pairs(informative, blind, pairs, metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: i32, cols: i32) -> Vec<Location> {
        let mut v = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                v.push(Location {
                    id: 0,
                    file_id: v.len() + 1,
                    row: r,
                    col: c,
                    angle: Some(((r * cols + c) * 10) as f64),
                    blind_spot: false,
                });
            }
        }
        v
    }

    #[test]
    fn circular_distance_examples() {
        assert_eq!(circular_distance(77.0, 77.0).unwrap(), 0.0);
        assert_eq!(circular_distance(350.0, 10.0).unwrap(), 20.0);
        assert_eq!(circular_distance(0.0, 180.0).unwrap(), 180.0);
        assert!(circular_distance(360.0, 10.0).is_err());
        assert!(circular_distance(-1.0, 10.0).is_err());
    }

    #[test]
    fn circular_distance_metric_axioms_on_degree_grid() {
        for x in 0..360 {
            let x = x as f64;
            assert_eq!(circular_distance(x, x).unwrap(), 0.0);
            for y in (0..360).step_by(7) {
                let y = y as f64;
                let dxy = circular_distance(x, y).unwrap();
                assert_eq!(dxy, circular_distance(y, x).unwrap());
                assert!((0.0..=180.0).contains(&dxy));
                for w in (0..360).step_by(29) {
                    let w = w as f64;
                    let lhs = circular_distance(x, w).unwrap();
                    let rhs = dxy + circular_distance(y, w).unwrap();
                    assert!(lhs <= rhs + 1e-12, "triangle fails at {x},{y},{w}");
                }
            }
        }
    }

    #[test]
    fn queen_small_grids() {
        let g = build_queen_adjacency(grid(2, 2), Metric::GarwayHeath).unwrap();
        assert_eq!(g.edges().len(), 6);
        let g = build_queen_adjacency(grid(1, 3), Metric::None).unwrap();
        assert!(g.is_adjacent(0, 1) && g.is_adjacent(1, 2) && !g.is_adjacent(0, 2));
        assert_eq!(g.q(), 0);
        assert_eq!(g.dissim(0, 1).unwrap().len(), 0);
    }

    #[test]
    fn queen_pair_count_formula() {
        for r in 1..6 {
            for c in 1..6 {
                let g = build_queen_adjacency(grid(r, c), Metric::None).unwrap();
                let (r, c) = (r as usize, c as usize);
                let expected = (r - 1) * c + r * (c - 1) + 2 * (r - 1) * (c - 1);
                assert_eq!(g.edges().len(), expected);
            }
        }
    }

    #[test]
    fn duplicate_cells_rejected() {
        let mut g = grid(1, 2);
        g[1].col = 0;
        assert!(matches!(
            build_queen_adjacency(g, Metric::None),
            Err(WombleError::Graph(_))
        ));
    }

    #[test]
    fn dissim_is_symmetric() {
        let g = build_queen_adjacency(grid(3, 3), Metric::GarwayHeath).unwrap();
        for e in g.edges() {
            assert_eq!(g.dissim(e.i, e.j), g.dissim(e.j, e.i));
            assert_eq!(g.dissim(e.i, e.j).unwrap(), e.z.as_slice());
        }
    }

    #[test]
    fn missing_angle_with_metric_is_an_error() {
        let mut g = grid(2, 2);
        g[3].angle = None;
        assert!(build_queen_adjacency(g.clone(), Metric::GarwayHeath).is_err());
        assert!(build_queen_adjacency(g, Metric::None).is_ok());
    }

    #[test]
    fn angle_at_360_is_domain_error() {
        let csv = "id,row,col,angle,blind_spot\n1,0,0,360.0,0\n";
        assert!(matches!(
            read_locations(csv.as_bytes(), "t"),
            Err(WombleError::Domain(_))
        ));
    }

    #[test]
    fn no_angle_column_metric_none() {
        let csv = "id,row,col,blind_spot\n1,0,0,0\n2,0,1,0\n";
        let locs = read_locations(csv.as_bytes(), "t").unwrap();
        let g = build_queen_adjacency(locs, Metric::None).unwrap();
        assert_eq!(g.q(), 0);
        assert_eq!(g.edges().len(), 1);
        assert!(g.edges()[0].z.is_empty());
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "id,row,col,angle,blind_spot\n1,0,0,10,0\n2,x,1,20,0\n";
        match read_locations(csv.as_bytes(), "t") {
            Err(WombleError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn asymmetric_edge_list_rejected() {
        let locs = read_locations(
            "id,row,col,angle,blind_spot\n1,0,0,,0\n2,5,5,,0\n3,9,9,,0\n".as_bytes(),
            "t",
        )
        .unwrap();
        let err = graph_from_edge_list(locs.clone(), &[(1, 2), (2, 1), (2, 3)], Metric::None, "e");
        assert!(err.is_err());
        let ok = graph_from_edge_list(locs, &[(1, 2), (2, 3)], Metric::None, "e").unwrap();
        assert_eq!(ok.edges().len(), 2);
        assert!(!ok.is_adjacent(0, 2));
    }
}
