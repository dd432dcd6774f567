//! Test-time evaluation: semi-supervised k-means and clustering accuracy
//! under the best one-to-one matching of clusters to classes.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{GcdDataset, Label};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    pub iterations: usize,
    /// Sum of squared distances after each assignment step.
    pub objective_trace: Vec<f64>,
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = squared_distance(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Rescales to unit length. The norm is a plain left-to-right sum so results
/// are reproducible by straightforward reference code.
fn renormalize(mut v: ndarray::ArrayViewMut1<'_, f64>) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v /= n;
    }
}

/// k-means where every labeled instance is pinned to the cluster of its class.
///
/// The first `N^L` centroids are the labeled class means (classes in
/// ascending order); the rest are seeded k-means++ style from unlabeled
/// points. Centroids are rescaled to unit length after each update.
pub fn ss_kmeans(features: ArrayView2<'_, f64>, labels: &[Label], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    ss_kmeans_traced(features, labels, k, seed, max_iter, &mut |_, _| {})
}

/// [`ss_kmeans`] that reports `(iteration, assignment)` after each assignment step.
pub fn ss_kmeans_traced(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    k: usize,
    seed: u64,
    max_iter: usize,
    hook: &mut dyn FnMut(usize, &[usize]),
) -> Result<KMeansResult> {
    let (m, d) = features.dim();
    if labels.len() != m {
        return Err(Error::ShapeMismatch(format!("{} labels for {m} rows", labels.len())));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let classes: BTreeSet<usize> = labels.iter().filter_map(|l| l.class()).collect();
    let slot: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(s, &c)| (c, s)).collect();
    let num_labeled_classes = classes.len();
    if k < num_labeled_classes {
        return Err(Error::invalid(format!("k = {k} is below the {num_labeled_classes} labeled classes")));
    }
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {m}]")));
    }
    let pinned: Vec<Option<usize>> = labels.iter().map(|l| l.class().map(|c| slot[&c])).collect();
    let unlabeled: Vec<usize> = (0..m).filter(|&i| pinned[i].is_none()).collect();

    let mut centroids = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; num_labeled_classes];
    for i in 0..m {
        if let Some(s) = pinned[i] {
            let mut c = centroids.row_mut(s);
            c += &features.row(i);
            counts[s] += 1;
        }
    }
    for s in 0..num_labeled_classes {
        let mut c = centroids.row_mut(s);
        c /= counts[s] as f64;
        renormalize(c);
    }

    // k-means++ seeding of the free centroids over unlabeled points.
    let mut rng = rng::seeded(seed);
    let pool: &[usize] = if unlabeled.is_empty() { &[] } else { &unlabeled };
    for c in num_labeled_classes..k {
        if pool.is_empty() {
            return Err(Error::invalid("no unlabeled points to seed extra centroids"));
        }
        let pick = if c == 0 {
            pool[rng.random_range(0..pool.len())]
        } else {
            let dist: Vec<f64> = pool
                .iter()
                .map(|&i| {
                    (0..c)
                        .map(|j| squared_distance(features.row(i), centroids.row(j)))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = dist.iter().sum();
            if total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut chosen = pool[pool.len() - 1];
                for (p, &w) in pool.iter().zip(&dist) {
                    acc += w;
                    if acc > target {
                        chosen = *p;
                        break;
                    }
                }
                chosen
            } else {
                pool[rng.random_range(0..pool.len())]
            }
        };
        centroids.row_mut(c).assign(&features.row(pick));
    }

    let mut assignment = vec![usize::MAX; m];
    let mut objective_trace = Vec::new();
    let mut iterations = 0;
    for iter in 1..=max_iter {
        iterations = iter;
        let mut next = vec![0usize; m];
        let mut dist = vec![0.0f64; m];
        for i in 0..m {
            let (c, dd) = match pinned[i] {
                Some(s) => (s, squared_distance(features.row(i), centroids.row(s))),
                None => nearest(features.row(i), &centroids),
            };
            next[i] = c;
            dist[i] = dd;
        }
        repair_empty_clusters(&mut next, &mut dist, &pinned, k);
        objective_trace.push(dist.iter().sum());
        hook(iter, &next);
        if next == assignment {
            break;
        }
        assignment = next;

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut sizes = vec![0usize; k];
        for i in 0..m {
            let mut s = sums.row_mut(assignment[i]);
            s += &features.row(i);
            sizes[assignment[i]] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                let mut row = sums.row_mut(c);
                row /= sizes[c] as f64;
                renormalize(row.view_mut());
                centroids.row_mut(c).assign(&row);
            }
        }
    }
    Ok(KMeansResult {
        assignment,
        centroids,
        iterations,
        objective_trace,
    })
}

/// Moves the unlabeled point farthest from its centroid (from a cluster with
/// more than one member) into each empty cluster.
fn repair_empty_clusters(assignment: &mut [usize], dist: &mut [f64], pinned: &[Option<usize>], k: usize) {
    let mut sizes = vec![0usize; k];
    for &c in assignment.iter() {
        sizes[c] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let candidate = (0..assignment.len())
            .filter(|&i| pinned[i].is_none() && sizes[assignment[i]] > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
        if let Some(i) = candidate {
            sizes[assignment[i]] -= 1;
            sizes[c] += 1;
            assignment[i] = c;
            dist[i] = 0.0;
        }
    }
}

/// Minimum-cost assignment of rows to columns for `rows <= cols`.
/// Returns the column chosen for each row.
fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    debug_assert!(n <= m);
    // Potentials formulation with 1-based sentinels.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

/// Maximum-weight matching between the rows and columns of a non-negative
/// count matrix. Returns `(row, col)` pairs.
pub fn max_agreement_matching(counts: &[Vec<u64>]) -> Vec<(usize, usize)> {
    let rows = counts.len();
    let cols = counts.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let max = counts.iter().flatten().copied().max().unwrap_or(0) as i64;
    if rows <= cols {
        let cost: Vec<Vec<i64>> = counts.iter().map(|r| r.iter().map(|&c| max - c as i64).collect()).collect();
        min_cost_assignment(&cost).into_iter().enumerate().collect()
    } else {
        let cost: Vec<Vec<i64>> = (0..cols).map(|c| (0..rows).map(|r| max - counts[r][c] as i64).collect()).collect();
        min_cost_assignment(&cost).into_iter().enumerate().map(|(c, r)| (r, c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub k_used: usize,
    /// Matched `(cluster id, class id)` pairs.
    pub matching: Vec<(usize, usize)>,
    pub num_old: usize,
    pub num_new: usize,
}

impl Metrics {
    pub fn record(&self) -> MetricsRecord {
        MetricsRecord {
            all: self.acc_all,
            old: self.acc_old,
            new: self.acc_new,
            k: self.k_used,
        }
    }
}

/// The serialized form `{all, old, new, k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub all: f64,
    pub old: f64,
    pub new: f64,
    pub k: usize,
}

/// Accuracy under the best one-to-one cluster-to-class matching, computed over
/// all instances. Old and New accuracies reuse that same matching on the
/// instances whose true class is (not) in `old_classes`; an empty subset
/// scores 0.
pub fn hungarian_accuracy(predicted: &[usize], truth: &[usize], old_classes: &BTreeSet<usize>) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} ground-truth labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let cluster_ids: Vec<usize> = predicted.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let class_ids: Vec<usize> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let cluster_slot: BTreeMap<usize, usize> = cluster_ids.iter().enumerate().map(|(s, &c)| (c, s)).collect();
    let class_slot: BTreeMap<usize, usize> = class_ids.iter().enumerate().map(|(s, &c)| (c, s)).collect();
    let mut counts = vec![vec![0u64; class_ids.len()]; cluster_ids.len()];
    for (p, t) in predicted.iter().zip(truth) {
        counts[cluster_slot[p]][class_slot[t]] += 1;
    }
    let pairs = max_agreement_matching(&counts);
    let mapped: BTreeMap<usize, usize> = pairs.iter().map(|&(r, c)| (cluster_ids[r], class_ids[c])).collect();

    let (mut hit_old, mut n_old, mut hit_new, mut n_new) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in predicted.iter().zip(truth) {
        let hit = mapped.get(p) == Some(t);
        if old_classes.contains(t) {
            n_old += 1;
            hit_old += hit as usize;
        } else {
            n_new += 1;
            hit_new += hit as usize;
        }
    }
    let ratio = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(Metrics {
        acc_all: ratio(hit_old + hit_new, n_old + n_new),
        acc_old: ratio(hit_old, n_old),
        acc_new: ratio(hit_new, n_new),
        k_used: cluster_ids.len(),
        matching: mapped.into_iter().collect(),
        num_old: n_old,
        num_new: n_new,
    })
}

/// Runs semi-supervised k-means over all instances (labeled ones as anchors)
/// and scores the unlabeled instances.
pub fn evaluate(features: ArrayView2<'_, f64>, dataset: &GcdDataset, k: usize, seed: u64, max_iter: usize) -> Result<Metrics> {
    if features.nrows() != dataset.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for a dataset of {}",
            features.nrows(),
            dataset.len()
        )));
    }
    let km = ss_kmeans(features, &dataset.labels, k, seed, max_iter)?;
    let unlabeled = dataset.unlabeled_indices();
    let predicted: Vec<usize> = unlabeled.iter().map(|&i| km.assignment[i]).collect();
    let truth: Vec<usize> = unlabeled.iter().map(|&i| dataset.eval_labels[i]).collect();
    let mut metrics = hungarian_accuracy(&predicted, &truth, &dataset.labeled_classes)?;
    metrics.k_used = k;
    Ok(metrics)
}
