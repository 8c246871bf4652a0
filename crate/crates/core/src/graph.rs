//! Areal adjacency graphs and their Laplacians.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::solver::Structure;

/// Undirected first-order adjacency between areal units.
///
/// Vertices are ordered by their external label, so matrices and output files
/// are independent of the order edges were supplied in.
#[derive(Debug, Clone)]
pub struct SpatialGraph {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    neighbors: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    block_of: Vec<Option<usize>>,
    block_names: Vec<String>,
}

impl SpatialGraph {
    /// Builds a graph over `labels` from label pairs. Duplicate pairs in either
    /// orientation collapse to one edge; vertices without edges are kept.
    pub fn build<S, L>(edge_list: &[(S, S)], labels: L) -> Result<Self>
    where
        S: AsRef<str>,
        L: IntoIterator,
        L::Item: Into<String>,
    {
        let universe: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        let labels: Vec<String> = universe.into_iter().collect();
        let index: HashMap<String, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        let lookup = |l: &str| {
            index
                .get(l)
                .copied()
                .ok_or_else(|| Error::UnknownLabel(l.to_string()))
        };
        let mut pairs = BTreeSet::new();
        for (a, b) in edge_list {
            let (a, b) = (a.as_ref(), b.as_ref());
            if a == b {
                return Err(Error::SelfLoop(a.to_string()));
            }
            let (i, j) = (lookup(a)?, lookup(b)?);
            pairs.insert((i.min(j), i.max(j)));
        }
        Ok(Self::assemble(labels, index, pairs))
    }

    /// Builds a graph directly from vertex indices; labels are the given
    /// strings in the given order, which must already be sorted.
    pub fn from_indices(labels: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        if labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("labels must be strictly increasing".into()));
        }
        let n = labels.len();
        let mut pairs = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Invalid(format!("edge ({i}, {j}) out of range for {n} vertices")));
            }
            if i == j {
                return Err(Error::SelfLoop(labels[i].clone()));
            }
            pairs.insert((i.min(j), i.max(j)));
        }
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Ok(Self::assemble(labels, index, pairs))
    }

    fn assemble(
        labels: Vec<String>,
        index: HashMap<String, usize>,
        pairs: BTreeSet<(usize, usize)>,
    ) -> Self {
        let n = labels.len();
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &pairs {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Self {
            labels,
            index,
            neighbors,
            edges: pairs.into_iter().collect(),
            block_of: vec![None; n],
            block_names: Vec::new(),
        }
    }

    /// Attaches a block (state) membership from `(label, block id)` pairs.
    /// Vertices not listed stay unassigned.
    pub fn with_blocks<S: AsRef<str>>(mut self, assignment: &[(S, S)]) -> Result<Self> {
        let names: BTreeSet<&str> = assignment.iter().map(|(_, b)| b.as_ref()).collect();
        let block_index: BTreeMap<&str, usize> =
            names.iter().enumerate().map(|(k, &b)| (b, k)).collect();
        let mut block_of = vec![None; self.len()];
        for (label, block) in assignment {
            let v = self.vertex(label.as_ref())?;
            block_of[v] = Some(block_index[block.as_ref()]);
        }
        self.block_names = names.into_iter().map(str::to_string).collect();
        self.block_of = block_of;
        Ok(self)
    }

    /// Same as [`with_blocks`](Self::with_blocks) with vertex-indexed block ids.
    pub fn with_block_ids(mut self, ids: &[usize]) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: ids.len() });
        }
        let distinct: BTreeSet<usize> = ids.iter().copied().collect();
        let remap: BTreeMap<usize, usize> =
            distinct.iter().enumerate().map(|(k, &b)| (b, k)).collect();
        self.block_of = ids.iter().map(|b| Some(remap[b])).collect();
        self.block_names = distinct.iter().map(|b| b.to_string()).collect();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> &str {
        &self.labels[v]
    }

    pub fn vertex(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn block_of(&self, v: usize) -> Option<usize> {
        self.block_of[v]
    }

    pub fn block_names(&self) -> &[String] {
        &self.block_names
    }

    pub fn has_blocks(&self) -> bool {
        !self.block_names.is_empty()
    }

    /// Whether an edge survives the block-diagonal approximation.
    fn within_block(&self, i: usize, j: usize) -> bool {
        self.block_of[i] == self.block_of[j]
    }

    /// Proportion of zero entries in the adjacency matrix.
    pub fn sparsity(&self) -> f64 {
        let l = self.len() as f64;
        if l == 0.0 {
            return 1.0;
        }
        1.0 - 2.0 * self.edges.len() as f64 / (l * l)
    }

    /// Connected components, each sorted, ordered by smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &u in &self.neighbors[v] {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Laplacian of the graph (`approximate = false`) or of the graph with
    /// every cross-block edge deleted (`approximate = true`).
    pub fn laplacian(&self, approximate: bool) -> Result<LaplacianView> {
        let n = self.len();
        let blocks: Vec<Vec<usize>> = if approximate {
            if let Some(v) = self.block_of.iter().position(Option::is_none) {
                return Err(Error::MissingBlock(self.labels[v].clone()));
            }
            let mut groups = vec![Vec::new(); self.block_names.len()];
            for v in 0..n {
                groups[self.block_of[v].unwrap()].push(v);
            }
            groups.retain(|g| !g.is_empty());
            groups
        } else if n == 0 {
            Vec::new()
        } else {
            vec![(0..n).collect()]
        };

        let keep = |i: usize, j: usize| !approximate || self.within_block(i, j);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut degree = Vec::with_capacity(n);
        row_ptr.push(0);
        for i in 0..n {
            let nb: Vec<usize> = self.neighbors[i].iter().copied().filter(|&j| keep(i, j)).collect();
            let d = nb.len();
            degree.push(d as f64);
            let mut diag_written = false;
            for &j in &nb {
                if !diag_written && j > i {
                    cols.push(i);
                    vals.push(d as f64);
                    diag_written = true;
                }
                cols.push(j);
                vals.push(-1.0);
            }
            if !diag_written {
                cols.push(i);
                vals.push(d as f64);
            }
            row_ptr.push(cols.len());
        }
        let structure = Structure::analyze(n, &row_ptr, &cols, &vals, &blocks);
        Ok(LaplacianView {
            n,
            row_ptr,
            cols,
            vals,
            degree,
            approximate,
            blocks,
            structure,
        })
    }
}

/// Sparse symmetric Laplacian in compressed-row form, together with the block
/// partition (one block in exact mode) and the symbolic factorization the
/// update solver reuses across iterations.
#[derive(Debug, Clone)]
pub struct LaplacianView {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    degree: Vec<f64>,
    approximate: bool,
    blocks: Vec<Vec<usize>>,
    pub(crate) structure: Structure,
}

impl LaplacianView {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Nonzeros of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x.len() });
        }
        Ok((0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect())
    }

    /// `α'Wα`.
    pub fn quad_form(&self, alpha: &[f64]) -> Result<f64> {
        let wa = self.mul_vec(alpha)?;
        Ok(alpha.iter().zip(&wa).map(|(a, b)| a * b).sum::<f64>().max(0.0))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        m
    }
}

/// Half the double sum of squared differences over neighbor pairs, i.e. the
/// sum over (surviving) edges of `(α_i - α_j)²`.
pub fn edge_sum_quad_form(g: &SpatialGraph, alpha: &[f64], approximate: bool) -> Result<f64> {
    if alpha.len() != g.len() {
        return Err(Error::Dimension { expected: g.len(), got: alpha.len() });
    }
    let mut total = 0.0;
    for i in 0..g.len() {
        for &j in g.neighbors(i) {
            if approximate && !g.within_block(i, j) {
                continue;
            }
            total += (alpha[i] - alpha[j]).powi(2);
        }
    }
    Ok(0.5 * total)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn paper_graph() -> SpatialGraph {
        let edges = [
            (1, 4), (1, 5), (2, 5), (2, 6), (3, 4), (3, 5), (3, 6),
            (3, 7), (4, 7), (5, 7), (5, 9), (6, 7), (6, 9), (8, 9),
        ];
        let pairs: Vec<(String, String)> = edges
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        SpatialGraph::build(&pairs, (1..=9).map(|i| i.to_string())).unwrap()
    }

    #[test]
    fn degrees_of_nine_vertex_example() {
        let g = paper_graph();
        assert_eq!(g.degrees(), vec![2, 2, 4, 3, 5, 4, 4, 1, 3]);
        assert_eq!(g.edges().len(), 14);
    }

    #[test]
    fn empty_and_duplicate_edges() {
        let none: Vec<(String, String)> = vec![];
        let g = SpatialGraph::build(&none, ["a", "b", "c"]).unwrap();
        assert_eq!(g.degrees(), vec![0, 0, 0]);
        assert_eq!(g.sparsity(), 1.0);

        let g = SpatialGraph::build(&[("1", "4"), ("4", "1")], ["1", "4"]).unwrap();
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            SpatialGraph::build(&[("a", "z")], ["a", "b"]),
            Err(Error::UnknownLabel(l)) if l == "z"
        ));
        assert!(matches!(
            SpatialGraph::build(&[("a", "a")], ["a", "b"]),
            Err(Error::SelfLoop(_))
        ));
    }

    #[test]
    fn exact_laplacian_entries() {
        let g = paper_graph();
        let w = g.laplacian(false).unwrap();
        let deg = [2.0, 2.0, 4.0, 3.0, 5.0, 4.0, 4.0, 1.0, 3.0];
        for i in 0..9 {
            assert_eq!(w.get(i, i), deg[i]);
            for j in 0..9 {
                if i != j {
                    let adjacent = g.neighbors(i).contains(&j);
                    assert_eq!(w.get(i, j), if adjacent { -1.0 } else { 0.0 });
                }
            }
        }
        assert!(w.row_sums().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn single_block_approximation_is_exact() {
        let g = paper_graph().with_block_ids(&[0; 9]).unwrap();
        let exact = g.laplacian(false).unwrap();
        let approx = g.laplacian(true).unwrap();
        assert_eq!(exact.to_dense(), approx.to_dense());
    }

    #[test]
    fn two_block_approximation_drops_boundary_edges() {
        let g = paper_graph()
            .with_block_ids(&[0, 0, 0, 0, 0, 1, 1, 1, 1])
            .unwrap();
        let w = g.laplacian(true).unwrap();
        // 1-based pairs (2,6),(3,6),(3,7),(4,7),(5,7),(5,9) are cross-block.
        for &(a, b) in &[(2, 6), (3, 6), (3, 7), (4, 7), (5, 7), (5, 9)] {
            assert_eq!(w.get(a - 1, b - 1), 0.0);
            assert_eq!(w.get(b - 1, a - 1), 0.0);
        }
        assert_eq!(w.degree()[4], 3.0);
        assert!(w.row_sums().iter().all(|&s| s == 0.0));
        assert_eq!(w.blocks().len(), 2);
    }

    #[test]
    fn approximation_requires_blocks() {
        let g = paper_graph();
        assert!(matches!(g.laplacian(true), Err(Error::MissingBlock(_))));
        let partial = paper_graph().with_blocks(&[("1", "A"), ("2", "A")]).unwrap();
        assert!(matches!(partial.laplacian(true), Err(Error::MissingBlock(_))));
    }

    #[test]
    fn quad_form_examples() {
        let g = paper_graph();
        let w = g.laplacian(false).unwrap();
        assert_eq!(w.quad_form(&[1.0; 9]).unwrap(), 0.0);
        let mut e8 = vec![0.0; 9];
        e8[7] = 1.0;
        assert_eq!(w.quad_form(&e8).unwrap(), 1.0);
        e8[8] = 1.0;
        assert_eq!(w.quad_form(&e8).unwrap(), 2.0);
        assert_eq!(edge_sum_quad_form(&g, &e8, false).unwrap(), 2.0);
        assert!(matches!(w.quad_form(&[0.0; 3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sparsity_examples() {
        assert!((paper_graph().sparsity() - (1.0 - 28.0 / 81.0)).abs() < 1e-15);
        let k3 = SpatialGraph::build(&[("a", "b"), ("b", "c"), ("a", "c")], ["a", "b", "c"]).unwrap();
        assert!((k3.sparsity() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn vertex_order_is_sorted_by_label() {
        let g = SpatialGraph::build(&[("z", "m")], ["z", "m", "a"]).unwrap();
        assert_eq!(g.labels(), &["a", "m", "z"]);
        assert_eq!(g.edges(), &[(1, 2)]);
    }
}
