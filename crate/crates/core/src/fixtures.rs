//! Synthetic maps used by the simulation study and tests.
//!
//! The lattice fixtures are jittered, triangulated grids laid over rough
//! state bounding boxes. They are deterministic: the jitter stream is fixed.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::Result;
use crate::graph::SpatialGraph;
use crate::seed::{rng_for, tag};

/// A graph with one `(longitude, latitude)` pair per vertex (in vertex order).
#[derive(Debug, Clone)]
pub struct Fixture {
    pub graph: SpatialGraph,
    pub coords: Vec<(f64, f64)>,
}

impl Fixture {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

struct Lattice {
    prefix: &'static str,
    rows: usize,
    cols: usize,
    lon0: f64,
    lat0: f64,
    dlon: f64,
    dlat: f64,
    removed: &'static [(usize, usize)],
}

/// Cells of one lattice: `(label, row, col, lon, lat)`.
fn lattice_cells(spec: &Lattice, stream: u64) -> Vec<(String, usize, usize, f64, f64)> {
    let mut rng = rng_for(stream, &[tag::FIXTURE]);
    let mut out = Vec::new();
    let mut k = 0;
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            // Draw jitter for every cell so removals do not shift the stream.
            let jx: f64 = rng.random_range(-0.25..0.25);
            let jy: f64 = rng.random_range(-0.25..0.25);
            if spec.removed.contains(&(r, c)) {
                continue;
            }
            let lon = spec.lon0 + (c as f64 + jx) * spec.dlon;
            let lat = spec.lat0 + (r as f64 + jy) * spec.dlat;
            out.push((format!("{}{:04}", spec.prefix, k), r, c, lon, lat));
            k += 1;
        }
    }
    out
}

/// Right, up and up-right neighbors within one lattice.
fn lattice_edges(cells: &[(String, usize, usize, f64, f64)]) -> Vec<(String, String)> {
    let at: BTreeMap<(usize, usize), &str> = cells.iter().map(|(l, r, c, ..)| ((*r, *c), l.as_str())).collect();
    let mut edges = Vec::new();
    for (l, r, c, ..) in cells {
        for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
            if let Some(other) = at.get(&(r + dr, c + dc)) {
                edges.push((l.clone(), other.to_string()));
            }
        }
    }
    edges
}

const CT: Lattice = Lattice {
    prefix: "ct",
    rows: 12,
    cols: 24,
    lon0: -73.7,
    lat0: 41.0,
    dlon: 1.9 / 23.0,
    dlat: 1.05 / 11.0,
    removed: &[(0, 0), (0, 1), (0, 2), (1, 0), (0, 23), (11, 23)],
};

/// Connecticut-sized map with 282 vertices.
pub fn ct_like() -> Fixture {
    let cells = lattice_cells(&CT, 1);
    let edges = lattice_edges(&cells);
    finish(cells, edges, None)
}

/// Three adjoining state-sized lattices (282 + 537 + 77 vertices) with block
/// membership per state. Cross-state edges join vertices closer than 1.3
/// lattice spacings.
pub fn three_state() -> Fixture {
    const MA: Lattice = Lattice {
        prefix: "ma",
        rows: 12,
        cols: 45,
        lon0: -73.5,
        lat0: 42.15,
        dlon: 1.9 / 23.0,
        dlat: 1.05 / 11.0,
        removed: &[(11, 0), (11, 1), (11, 44)],
    };
    const RI: Lattice = Lattice {
        prefix: "ri",
        rows: 11,
        cols: 7,
        lon0: -71.72,
        lat0: 41.1,
        dlon: 1.9 / 23.0,
        dlat: 0.95 / 10.0,
        removed: &[],
    };
    let parts = [lattice_cells(&CT, 1), lattice_cells(&MA, 2), lattice_cells(&RI, 3)];
    let mut edges: Vec<(String, String)> = parts.iter().flat_map(|c| lattice_edges(c)).collect();
    let reach = 1.3 * (CT.dlon.powi(2) + CT.dlat.powi(2)).sqrt() / std::f64::consts::SQRT_2;
    for a in 0..parts.len() {
        for b in a + 1..parts.len() {
            for (la, _, _, xa, ya) in &parts[a] {
                for (lb, _, _, xb, yb) in &parts[b] {
                    if ((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt() < reach {
                        edges.push((la.clone(), lb.clone()));
                    }
                }
            }
        }
    }
    let blocks: Vec<(String, String)> = parts
        .iter()
        .flatten()
        .map(|(l, ..)| (l.clone(), l[..2].to_string()))
        .collect();
    let cells: Vec<_> = parts.into_iter().flatten().collect();
    finish(cells, edges, Some(blocks))
}

fn finish(
    cells: Vec<(String, usize, usize, f64, f64)>,
    edges: Vec<(String, String)>,
    blocks: Option<Vec<(String, String)>>,
) -> Fixture {
    let coord_of: BTreeMap<&str, (f64, f64)> = cells.iter().map(|(l, _, _, x, y)| (l.as_str(), (*x, *y))).collect();
    let graph = SpatialGraph::build(&edges, cells.iter().map(|c| c.0.clone())).expect("fixture labels are consistent");
    let graph = match blocks {
        Some(b) => graph.with_blocks(&b).expect("fixture blocks are consistent"),
        None => graph,
    };
    let coords = graph.labels().iter().map(|l| coord_of[l.as_str()]).collect();
    Fixture { graph, coords }
}

/// The eight Connecticut counties with approximate centroids and their
/// adjacency.
pub fn ct_counties() -> Result<Fixture> {
    let centroids = [
        ("Fairfield", -73.39, 41.27),
        ("Hartford", -72.73, 41.81),
        ("Litchfield", -73.24, 41.79),
        ("Middlesex", -72.53, 41.43),
        ("New Haven", -72.93, 41.41),
        ("New London", -72.10, 41.47),
        ("Tolland", -72.34, 41.86),
        ("Windham", -71.99, 41.83),
    ];
    let edges = [
        ("Fairfield", "Litchfield"),
        ("Fairfield", "New Haven"),
        ("Litchfield", "New Haven"),
        ("Litchfield", "Hartford"),
        ("New Haven", "Hartford"),
        ("New Haven", "Middlesex"),
        ("Hartford", "Middlesex"),
        ("Hartford", "Tolland"),
        ("Hartford", "New London"),
        ("Middlesex", "New London"),
        ("Tolland", "Windham"),
        ("Tolland", "New London"),
        ("New London", "Windham"),
    ];
    let graph = SpatialGraph::build(&edges, centroids.iter().map(|c| c.0))?;
    let coords = graph
        .labels()
        .iter()
        .map(|l| {
            let c = centroids.iter().find(|c| c.0 == l).expect("label from centroid list");
            (c.1, c.2)
        })
        .collect();
    Ok(Fixture { graph, coords })
}
