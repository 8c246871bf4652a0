#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tweedie_spatial::data::{Observation, ObservationTable};
use tweedie_spatial::graph::SpatialGraph;
use tweedie_spatial::tweedie::sample_cp;

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i:03}")).collect()
}

/// `rows x cols` grid with 4-neighbour edges.
pub fn grid(rows: usize, cols: usize) -> SpatialGraph {
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    SpatialGraph::from_indices(labels(rows * cols), &edges).unwrap()
}

/// Responses around `truth` with every location observed `per` times.
pub fn table_around(truth: &[f64], per: usize, phi: f64, p: f64, seed: u64) -> ObservationTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = ObservationTable::new(truth.len());
    for _ in 0..per {
        for (location, a) in truth.iter().enumerate() {
            let lp_mean: f64 = rng.random_range(0.0..1.5);
            let (y, _) = sample_cp((lp_mean + a).exp(), phi, p, &mut rng).unwrap();
            t.push(Observation { location, y, lp_mean, phi, weight: 1.0 }).unwrap();
        }
    }
    t
}

pub fn sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
