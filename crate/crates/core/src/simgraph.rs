//! Label-consolidated similarity network over instance features.
//!
//! Edge rules, with `s_ij = (cos(v_i, v_j) + 1) / 2`:
//!
//! * both labeled with the same class: weight `max(s_i^max, s_j^max)`, where
//!   `s_i^max` is the largest similarity of `i` to any other instance;
//! * at least one side unlabeled and `s_ij > tau_f`: weight `s_ij`, restricted
//!   to pairs where one side is among the other's `knn_k` most similar
//!   instances;
//! * anything else (including labeled cross-class pairs): no edge.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub tau_f: f64,
    pub knn_k: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { tau_f: 0.7, knn_k: 50 }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_f) {
            return Err(Error::invalid(format!("tau_f must lie in [0, 1], got {}", self.tau_f)));
        }
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Undirected weighted graph stored as a sorted list of directed edges; every
/// `(i, j, w)` has its mirror `(j, i, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    num_nodes: usize,
    edges: Vec<Edge>,
}

impl SimilarityGraph {
    /// Builds a graph from undirected edges, keeping the larger weight when a
    /// pair appears twice. Self-loops and non-positive weights are dropped.
    pub fn from_undirected(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut directed = Vec::new();
        for (i, j, w) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    count: num_nodes,
                });
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("edge ({i}, {j}) has invalid weight {w}")));
            }
            if i == j || w == 0.0 {
                continue;
            }
            directed.push(Edge { i, j, weight: w });
            directed.push(Edge { i: j, j: i, weight: w });
        }
        Ok(Self::assemble(num_nodes, directed))
    }

    fn assemble(num_nodes: usize, mut directed: Vec<Edge>) -> Self {
        directed.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)).then(b.weight.total_cmp(&a.weight)));
        directed.dedup_by(|later, earlier| later.i == earlier.i && later.j == earlier.j);
        Self {
            num_nodes,
            edges: directed,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// All directed edges, sorted by `(i, j)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_undirected_edges(&self) -> usize {
        self.edges.len() / 2
    }

    /// Each undirected edge once, with `i < j`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.i < e.j)
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.edges
            .binary_search_by(|e| (e.i, e.j).cmp(&(i, j)))
            .ok()
            .map(|k| self.edges[k].weight)
    }

    /// Neighbor lists `(j, w)` per node.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for e in &self.edges {
            adj[e.i].push((e.j, e.weight));
        }
        adj
    }

    /// Text dump: one `i j w` line per undirected edge, weight with 9 significant digits.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for e in self.undirected_edges() {
            let _ = writeln!(out, "{} {} {:.8e}", e.i, e.j, e.weight);
        }
        out
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }
}

/// `(cos(a, b) + 1) / 2`, clamped to `[0, 1]`.
pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 {
        return Err(Error::ZeroVector(0));
    }
    if nb == 0.0 {
        return Err(Error::ZeroVector(1));
    }
    Ok(rescale(a.dot(&b) / (na * nb)))
}

fn rescale(cos: f64) -> f64 {
    ((cos + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Row-wise L2 normalization; errors on an all-zero row.
pub fn normalize_rows(features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = features.to_owned();
    for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 {
            return Err(Error::ZeroVector(r));
        }
        row.mapv_inplace(|x| x / n);
    }
    Ok(out)
}

/// Largest similarity of instance `i` to any other instance (self excluded).
pub fn max_neighbor_similarity(i: usize, features: ArrayView2<'_, f64>) -> Result<f64> {
    let m = features.nrows();
    if m < 2 {
        return Err(Error::invalid("max neighbor similarity needs at least 2 instances"));
    }
    if i >= m {
        return Err(Error::IndexOutOfRange { index: i, count: m });
    }
    let mut best = f64::NEG_INFINITY;
    for j in (0..m).filter(|&j| j != i) {
        best = best.max(cosine_similarity(features.row(i), features.row(j)).map_err(|e| match e {
            Error::ZeroVector(0) => Error::ZeroVector(i),
            Error::ZeroVector(_) => Error::ZeroVector(j),
            other => other,
        })?);
    }
    Ok(best)
}

struct RowScan {
    s_max: f64,
    /// `(j, s_ij)` for the top-k neighbors that pass the threshold and
    /// involve an unlabeled endpoint.
    links: Vec<(usize, f64)>,
}

/// Builds the consolidated graph. `labels` is row-aligned with `features`;
/// passing all-[`Label::Unlabeled`] turns consolidation off.
pub fn build_consolidated_graph(labels: &[Label], features: ArrayView2<'_, f64>, cfg: &GraphConfig) -> Result<SimilarityGraph> {
    cfg.validate()?;
    let m = features.nrows();
    if labels.len() != m {
        return Err(Error::ShapeMismatch(format!("{} labels for {m} feature rows", labels.len())));
    }
    if m < 2 {
        return Err(Error::invalid("graph construction needs at least 2 instances"));
    }
    let unit = normalize_rows(features)?;
    let k = cfg.knn_k.min(m - 1);

    let scans: Vec<RowScan> = (0..m)
        .into_par_iter()
        .map(|i| {
            let sims: Vec<f64> = unit.dot(&unit.row(i)).iter().map(|&c| rescale(c)).collect();
            let mut order: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            let s_max = order.iter().map(|&j| sims[j]).fold(f64::NEG_INFINITY, f64::max);
            let by_similarity = |a: &usize, b: &usize| sims[*b].total_cmp(&sims[*a]).then(a.cmp(b));
            if k < order.len() {
                order.select_nth_unstable_by(k - 1, by_similarity);
                order.truncate(k);
            }
            order.sort_unstable_by(by_similarity);
            let links = order
                .into_iter()
                .filter(|&j| {
                    let one_unlabeled = !labels[i].is_labeled() || !labels[j].is_labeled();
                    one_unlabeled && sims[j] > cfg.tau_f
                })
                .map(|j| (j, sims[j]))
                .collect();
            RowScan { s_max, links }
        })
        .collect();

    let mut directed = Vec::new();
    for (i, scan) in scans.iter().enumerate() {
        for &(j, s) in &scan.links {
            directed.push(Edge { i, j, weight: s });
            directed.push(Edge { i: j, j: i, weight: s });
        }
    }

    // Same-class labeled pairs are always linked, whatever the kNN lists say.
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, l) in labels.iter().enumerate() {
        if let Label::Known(c) = l {
            by_class.entry(*c).or_default().push(i);
        }
    }
    for members in by_class.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                let w = scans[i].s_max.max(scans[j].s_max);
                if w > 0.0 {
                    directed.push(Edge { i, j, weight: w });
                    directed.push(Edge { i: j, j: i, weight: w });
                }
            }
        }
    }
    Ok(SimilarityGraph::assemble(m, directed))
}
