//! Symmetric positive definite solves for systems of the form
//! `diag(d) + s·offdiag(W)` where `W` is a (block-diagonal) graph Laplacian.
//!
//! Each block gets a reverse Cuthill-McKee ordering and an envelope (skyline)
//! Cholesky factorization; the symbolic part is computed once per Laplacian and
//! reused for every update. Conjugate gradients is available for blocks too
//! large to factor comfortably.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolverKind {
    /// Envelope Cholesky per block.
    #[default]
    Direct,
    /// Jacobi-preconditioned conjugate gradients with the given relative
    /// residual tolerance.
    ConjugateGradient { rtol: f64 },
}

/// Below this many unknowns, blocks are solved sequentially.
const PARALLEL_THRESHOLD: usize = 4096;

#[derive(Debug, Clone)]
pub(crate) struct Structure {
    n: usize,
    blocks: Vec<BlockStructure>,
}

#[derive(Debug, Clone)]
struct BlockStructure {
    /// Local position -> global vertex.
    order: Vec<usize>,
    /// Envelope start column per local row.
    first: Vec<usize>,
    /// Offset of row r's envelope in the packed storage.
    offset: Vec<usize>,
    /// Strictly-lower nonzeros `(row, col, w)` in local positions.
    lower: Vec<(usize, usize, f64)>,
    /// Neighbors per local position (for CG products).
    adj: Vec<Vec<(usize, f64)>>,
}

impl Structure {
    pub(crate) fn analyze(
        n: usize,
        row_ptr: &[usize],
        cols: &[usize],
        vals: &[f64],
        blocks: &[Vec<usize>],
    ) -> Self {
        let mut pos = vec![usize::MAX; n];
        let mut local = vec![usize::MAX; n];
        let blocks = blocks
            .iter()
            .map(|members| {
                for (k, &v) in members.iter().enumerate() {
                    local[v] = k;
                }
                let m = members.len();
                let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); m];
                for (k, &v) in members.iter().enumerate() {
                    for &c in &cols[row_ptr[v]..row_ptr[v + 1]] {
                        if c != v {
                            debug_assert_ne!(local[c], usize::MAX, "edge leaves its block");
                            nbrs[k].push(local[c]);
                        }
                    }
                }
                let perm = reverse_cuthill_mckee(&nbrs);
                let order: Vec<usize> = perm.iter().map(|&k| members[k]).collect();
                for (r, &v) in order.iter().enumerate() {
                    pos[v] = r;
                }
                let mut first = Vec::with_capacity(m);
                let mut offset = Vec::with_capacity(m + 1);
                let mut lower = Vec::new();
                let mut adj = vec![Vec::new(); m];
                let mut total = 0;
                for (r, &v) in order.iter().enumerate() {
                    let mut f = r;
                    let span = row_ptr[v]..row_ptr[v + 1];
                    for (&c, &w) in cols[span.clone()].iter().zip(&vals[span]) {
                        if c == v {
                            continue;
                        }
                        let q = pos[c];
                        adj[r].push((q, w));
                        if q < r {
                            f = f.min(q);
                            lower.push((r, q, w));
                        }
                    }
                    first.push(f);
                    offset.push(total);
                    total += r - f + 1;
                }
                offset.push(total);
                BlockStructure { order, first, offset, lower, adj }
            })
            .collect();
        Structure { n, blocks }
    }

    /// Solves `(diag(d) + s·offdiag(W)) x = b`.
    pub(crate) fn solve(&self, d: &[f64], s: f64, b: &[f64], kind: SolverKind) -> Result<Vec<f64>> {
        assert_eq!(d.len(), self.n);
        assert_eq!(b.len(), self.n);
        let solve_block = |(id, blk): (usize, &BlockStructure)| -> Result<Vec<f64>> {
            let dl: Vec<f64> = blk.order.iter().map(|&v| d[v]).collect();
            let bl: Vec<f64> = blk.order.iter().map(|&v| b[v]).collect();
            match kind {
                SolverKind::Direct => blk.cholesky_solve(&dl, s, &bl, id),
                SolverKind::ConjugateGradient { rtol } => blk.cg_solve(&dl, s, &bl, rtol, id),
            }
        };
        let parts: Vec<Result<Vec<f64>>> = if self.blocks.len() > 1 && self.n >= PARALLEL_THRESHOLD {
            self.blocks.par_iter().enumerate().map(solve_block).collect()
        } else {
            self.blocks.iter().enumerate().map(solve_block).collect()
        };
        let mut x = vec![0.0; self.n];
        for (blk, part) in self.blocks.iter().zip(parts) {
            for (&v, xv) in blk.order.iter().zip(part?) {
                x[v] = xv;
            }
        }
        Ok(x)
    }
}

impl BlockStructure {
    fn cholesky_solve(&self, d: &[f64], s: f64, b: &[f64], id: usize) -> Result<Vec<f64>> {
        let m = d.len();
        let mut env = vec![0.0; self.offset[m]];
        for r in 0..m {
            env[self.offset[r] + (r - self.first[r])] = d[r];
        }
        for &(r, c, w) in &self.lower {
            env[self.offset[r] + (c - self.first[r])] = s * w;
        }
        let at = |r: usize, c: usize| self.offset[r] + (c - self.first[r]);
        for r in 0..m {
            let fr = self.first[r];
            for c in fr..r {
                let fc = self.first[c];
                let k0 = fr.max(fc);
                let mut acc = env[at(r, c)];
                for k in k0..c {
                    acc -= env[at(r, k)] * env[at(c, k)];
                }
                env[at(r, c)] = acc / env[at(c, c)];
            }
            let mut acc = env[at(r, r)];
            for k in fr..r {
                let l = env[at(r, k)];
                acc -= l * l;
            }
            if !(acc > 0.0 && acc.is_finite()) {
                return Err(Error::Solver {
                    block: id,
                    reason: format!("non-positive pivot {acc:e} at local row {r}"),
                });
            }
            env[at(r, r)] = acc.sqrt();
        }
        let mut x = b.to_vec();
        for r in 0..m {
            let mut acc = x[r];
            for k in self.first[r]..r {
                acc -= env[at(r, k)] * x[k];
            }
            x[r] = acc / env[at(r, r)];
        }
        for r in (0..m).rev() {
            x[r] /= env[at(r, r)];
            let xr = x[r];
            for k in self.first[r]..r {
                x[k] -= env[at(r, k)] * xr;
            }
        }
        Ok(x)
    }

    fn apply(&self, d: &[f64], s: f64, x: &[f64], out: &mut [f64]) {
        for r in 0..d.len() {
            let mut acc = d[r] * x[r];
            for &(q, w) in &self.adj[r] {
                acc += s * w * x[q];
            }
            out[r] = acc;
        }
    }

    fn cg_solve(&self, d: &[f64], s: f64, b: &[f64], rtol: f64, id: usize) -> Result<Vec<f64>> {
        let m = d.len();
        let bnorm = norm(b);
        let mut x = vec![0.0; m];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(d).map(|(ri, di)| ri / di).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; m];
        let mut rz = dot(&r, &z);
        let max_iter = 10 * m + 100;
        for _ in 0..max_iter {
            self.apply(d, s, &p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Solver { block: id, reason: format!("CG breakdown, p'Ap = {pap:e}") });
            }
            let step = rz / pap;
            for i in 0..m {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            if norm(&r) <= rtol * bnorm {
                return Ok(x);
            }
            for i in 0..m {
                z[i] = r[i] / d[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::Solver {
            block: id,
            reason: format!("CG did not reach rtol {rtol:e} in {max_iter} iterations"),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Reverse Cuthill-McKee permutation (new position -> old index).
fn reverse_cuthill_mckee(nbrs: &[Vec<usize>]) -> Vec<usize> {
    let m = nbrs.len();
    let deg: Vec<usize> = nbrs.iter().map(Vec::len).collect();
    let mut visited = vec![false; m];
    let mut order = Vec::with_capacity(m);
    let mut by_degree: Vec<usize> = (0..m).collect();
    by_degree.sort_by_key(|&v| (deg[v], v));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(nbrs, &deg, seed);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = nbrs[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (deg[u], u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(nbrs: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; nbrs.len()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &u in &nbrs[v] {
            if level[u] == usize::MAX {
                level[u] = level[v] + 1;
                queue.push_back(u);
            }
        }
    }
    level
}

fn pseudo_peripheral(nbrs: &[Vec<usize>], deg: &[usize], seed: usize) -> usize {
    let mut current = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(nbrs, current);
        let far = level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
        if far <= ecc && ecc > 0 {
            break;
        }
        ecc = far;
        current = (0..nbrs.len())
            .filter(|&v| level[v] == far)
            .min_by_key(|&v| (deg[v], v))
            .unwrap_or(current);
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SpatialGraph;

    fn grid(rows: usize, cols: usize) -> SpatialGraph {
        let labels: Vec<String> = (0..rows * cols).map(|i| format!("v{i:05}")).collect();
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols));
                }
            }
        }
        SpatialGraph::from_indices(labels, &edges).unwrap()
    }

    fn residual(w: &crate::graph::LaplacianView, d: &[f64], s: f64, x: &[f64], b: &[f64]) -> f64 {
        let wx = w.mul_vec(x).unwrap();
        let deg = w.degree();
        let r: Vec<f64> = (0..x.len())
            .map(|i| d[i] * x[i] + s * (wx[i] - deg[i] * x[i]) - b[i])
            .collect();
        norm(&r) / norm(b)
    }

    #[test]
    fn direct_and_cg_agree_and_have_small_residuals() {
        let g = grid(9, 13);
        let w = g.laplacian(false).unwrap();
        let n = g.len();
        let s = 3.5;
        let d: Vec<f64> = (0..n).map(|i| 1.0 + s * w.degree()[i] + (i % 7) as f64 * 0.3).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let x1 = w.structure.solve(&d, s, &b, SolverKind::Direct).unwrap();
        let x2 = w
            .structure
            .solve(&d, s, &b, SolverKind::ConjugateGradient { rtol: 1e-13 })
            .unwrap();
        assert!(residual(&w, &d, s, &x1, &b) < 1e-12);
        assert!(residual(&w, &d, s, &x2, &b) < 1e-12);
        for (a, c) in x1.iter().zip(&x2) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_system_reports_block() {
        let g = grid(3, 3)
            .with_block_ids(&[0, 0, 0, 1, 1, 1, 1, 1, 1])
            .unwrap();
        let w = g.laplacian(true).unwrap();
        let d = vec![0.1; 9];
        let b = vec![1.0; 9];
        let err = w.structure.solve(&d, 5.0, &b, SolverKind::Direct).unwrap_err();
        assert!(matches!(err, Error::Solver { .. }));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let g = grid(5, 4);
        let nbrs: Vec<Vec<usize>> = (0..g.len()).map(|v| g.neighbors(v).to_vec()).collect();
        let mut p = reverse_cuthill_mckee(&nbrs);
        p.sort_unstable();
        assert_eq!(p, (0..g.len()).collect::<Vec<_>>());
    }
}
