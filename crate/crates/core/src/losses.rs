//! Training objectives with analytic gradients.
//!
//! * [`conception_loss`]: instances against all conception prototypes.
//! * [`dispersion_loss`]: hinge on cosine similarity between within-batch
//!   conception means.
//! * [`instance_loss`]: two-view InfoNCE blended with supervised contrastive
//!   loss over the labeled part of the batch.
//! * [`total_loss`]: weighted sum of the three.
//!
//! Gradients are taken with respect to the representations passed in; the
//! prototypes are constants.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau_c: f64,
    pub tau_s: f64,
    pub tau_l: f64,
    pub tau_m: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Keep the positive prototype in the conception-loss denominator
    /// (ordinary softmax cross-entropy) instead of excluding it.
    pub include_positive_in_denominator: bool,
    /// Count the constant `m == n` pairs in the dispersion average.
    pub dispersion_diagonal: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_c: 0.05,
            tau_s: 0.07,
            tau_l: 0.05,
            tau_m: 0.3,
            lambda: 0.35,
            alpha: 0.3,
            beta: 0.1,
            include_positive_in_denominator: false,
            dispersion_diagonal: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("tau_c", self.tau_c), ("tau_s", self.tau_s), ("tau_l", self.tau_l)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {t}")));
            }
        }
        for (name, v) in [("lambda", self.lambda), ("tau_m", self.tau_m)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// A scalar loss and its gradient with respect to the input representations.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub grad: Array2<f64>,
}

impl LossReport {
    fn zero(dim: (usize, usize)) -> Self {
        Self {
            value: 0.0,
            grad: Array2::zeros(dim),
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over the batch of `-log(exp(v.mu_c / t) / sum_{k != c} exp(v.mu_k / t))`.
///
/// With `include_positive = true` the sum runs over every `k`.
pub fn conception_loss(
    reps: ArrayView2<'_, f64>,
    conceptions: &[usize],
    prototypes: ArrayView2<'_, f64>,
    tau_c: f64,
    include_positive: bool,
) -> Result<LossReport> {
    let (n, d) = reps.dim();
    let k = prototypes.nrows();
    if k < 2 {
        return Err(Error::SingleConception);
    }
    if conceptions.len() != n || prototypes.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "{n}x{d} batch, {} conception ids, {k}x{} prototypes",
            conceptions.len(),
            prototypes.ncols()
        )));
    }
    if n == 0 {
        return Ok(LossReport::zero((0, d)));
    }
    let logits = reps.dot(&prototypes.t()) / tau_c;
    let mut coeff = Array2::<f64>::zeros((n, k));
    let mut value = 0.0;
    for (i, &c) in conceptions.iter().enumerate() {
        if c >= k {
            return Err(Error::ConceptionOutOfRange { id: c, k });
        }
        let row = logits.row(i);
        let in_denominator = |j: &usize| include_positive || *j != c;
        let lse = log_sum_exp((0..k).filter(in_denominator).map(|j| row[j]));
        value += lse - row[c];
        for j in (0..k).filter(in_denominator) {
            coeff[[i, j]] += (row[j] - lse).exp();
        }
        coeff[[i, c]] -= 1.0;
    }
    let scale = 1.0 / (n as f64);
    let grad = coeff.dot(&prototypes) * (scale / tau_c);
    Ok(LossReport {
        value: value * scale,
        grad,
    })
}

/// Average over ordered pairs of sampled conceptions of
/// `max(0, cos(mean_m, mean_n) - tau_m)`, where `mean_m` is the mean of the
/// batch rows belonging to conception `m`.
///
/// Diagonal pairs contribute the constant `max(0, 1 - tau_m)` when
/// `include_diagonal` is set (and are skipped otherwise); they carry no
/// gradient.
pub fn dispersion_loss(
    reps: ArrayView2<'_, f64>,
    conceptions: &[usize],
    sampled: &[usize],
    tau_m: f64,
    include_diagonal: bool,
) -> Result<LossReport> {
    let (n, d) = reps.dim();
    if conceptions.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} rows for {} conception ids", conceptions.len())));
    }
    let nc = sampled.len();
    if nc == 0 {
        return Ok(LossReport::zero((n, d)));
    }
    let slot: HashMap<usize, usize> = sampled.iter().enumerate().map(|(s, &c)| (c, s)).collect();
    let mut sums = Array2::<f64>::zeros((nc, d));
    let mut counts = vec![0usize; nc];
    let mut row_slot = Vec::with_capacity(n);
    for (i, c) in conceptions.iter().enumerate() {
        let s = *slot
            .get(c)
            .ok_or_else(|| Error::invalid(format!("row {i} belongs to conception {c}, which was not sampled")))?;
        let mut target = sums.row_mut(s);
        target += &reps.row(i);
        counts[s] += 1;
        row_slot.push(s);
    }
    let mut unit = Array2::<f64>::zeros((nc, d));
    let mut norms = Array1::<f64>::zeros(nc);
    for s in 0..nc {
        if counts[s] == 0 {
            return Err(Error::EmptyConception(sampled[s]));
        }
        let mean = sums.row(s).mapv(|x| x / counts[s] as f64);
        let norm = mean.dot(&mean).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector(s));
        }
        norms[s] = norm;
        unit.row_mut(s).assign(&(mean / norm));
    }

    let cos = unit.dot(&unit.t());
    let pairs = (nc * nc) as f64;
    let mut value = 0.0;
    let mut grad_unit = Array2::<f64>::zeros((nc, d));
    for a in 0..nc {
        for b in 0..nc {
            if a == b {
                if include_diagonal {
                    value += (1.0 - tau_m).max(0.0);
                }
                continue;
            }
            let margin = cos[[a, b]] - tau_m;
            if margin > 0.0 {
                value += margin;
                // d(u_a . u_b) reaches both endpoints.
                grad_unit.row_mut(a).scaled_add(1.0 / pairs, &unit.row(b));
                grad_unit.row_mut(b).scaled_add(1.0 / pairs, &unit.row(a));
            }
        }
    }

    let mut grad_mean = Array2::<f64>::zeros((nc, d));
    for s in 0..nc {
        let g = grad_unit.row(s);
        let u = unit.row(s);
        let radial = g.dot(&u);
        let projected = (&g - &(&u * radial)) / norms[s];
        grad_mean.row_mut(s).assign(&projected);
    }
    let mut grad = Array2::<f64>::zeros((n, d));
    for (i, &s) in row_slot.iter().enumerate() {
        grad.row_mut(i).assign(&(&grad_mean.row(s) / counts[s] as f64));
    }
    Ok(LossReport {
        value: value / pairs,
        grad,
    })
}

/// Supervised-contrastive style term over the rows in `members`.
///
/// For each anchor `a` with a non-empty positive set, the loss is
/// `-(1/|P|) sum_p s_ap / t + log sum_{j in members, j != a} exp(s_aj / t)`,
/// averaged over such anchors. Returns the value and the gradient with respect
/// to `x` (zero outside `members`).
fn contrastive_term(
    x: ArrayView2<'_, f64>,
    members: &[usize],
    positives: impl Fn(usize, usize) -> bool,
    temperature: f64,
) -> (f64, Array2<f64>) {
    let (n, d) = x.dim();
    let sub = x.select(Axis(0), members);
    let logits = sub.dot(&sub.t()) / temperature;
    let m = members.len();
    let mut coeff = Array2::<f64>::zeros((m, m));
    let mut value = 0.0;
    let mut anchors = 0usize;
    for a in 0..m {
        let pos: Vec<usize> = (0..m).filter(|&b| b != a && positives(members[a], members[b])).collect();
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        let row = logits.row(a);
        let lse = log_sum_exp((0..m).filter(|&j| j != a).map(|j| row[j]));
        let inv = 1.0 / pos.len() as f64;
        value += lse - inv * pos.iter().map(|&p| row[p]).sum::<f64>();
        for j in (0..m).filter(|&j| j != a) {
            coeff[[a, j]] += (row[j] - lse).exp();
        }
        for &p in &pos {
            coeff[[a, p]] -= inv;
        }
    }
    let mut grad = Array2::<f64>::zeros((n, d));
    if anchors == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / anchors as f64;
    let sym = &coeff + &coeff.t();
    let sub_grad = sym.dot(&sub) * (scale / temperature);
    for (r, &i) in members.iter().enumerate() {
        grad.row_mut(i).assign(&sub_grad.row(r));
    }
    (value * scale, grad)
}

/// Instance-level objective on `2N` projections: rows `i` and `i + N` are the
/// two views of instance `i`, whose training label is `labels[i]`.
///
/// `(1 - lambda) * InfoNCE(tau_s) + lambda * SupCon(tau_l)`. The supervised
/// part runs over the views of labeled instances, with positives sharing the
/// label; it contributes 0 when no labeled anchor has a positive.
pub fn instance_loss(projections: ArrayView2<'_, f64>, labels: &[Label], lambda: f64, tau_s: f64, tau_l: f64) -> Result<LossReport> {
    let (rows, d) = projections.dim();
    let n = labels.len();
    if rows != 2 * n {
        return Err(Error::ShapeMismatch(format!("{rows} projections for {n} instances (expected two views each)")));
    }
    if n < 2 {
        return Err(Error::invalid("instance loss needs at least 2 instances"));
    }
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros((rows, d));
    if lambda < 1.0 {
        let all: Vec<usize> = (0..rows).collect();
        let (v, g) = contrastive_term(projections, &all, |a, b| a % n == b % n, tau_s);
        value += (1.0 - lambda) * v;
        grad.scaled_add(1.0 - lambda, &g);
    }
    if lambda > 0.0 {
        let labeled: Vec<usize> = (0..rows).filter(|&r| labels[r % n].is_labeled()).collect();
        if !labeled.is_empty() {
            let (v, g) = contrastive_term(projections, &labeled, |a, b| labels[a % n] == labels[b % n], tau_l);
            value += lambda * v;
            grad.scaled_add(lambda, &g);
        }
    }
    Ok(LossReport { value, grad })
}

/// Loss values per component; disabled components are reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub instance: f64,
    pub conception: f64,
    pub dispersion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub components: LossComponents,
    /// Gradient for the instance batch projections, if the instance loss is active.
    pub grad_projections: Option<Array2<f64>>,
    /// Gradient for the conception batch features, if either conception-level loss is active.
    pub grad_features: Option<Array2<f64>>,
}

/// `L_I + alpha * L_C + beta * L_D` with the matching gradient blocks.
pub fn total_loss(
    instance: Option<&LossReport>,
    conception: Option<&LossReport>,
    dispersion: Option<&LossReport>,
    alpha: f64,
    beta: f64,
) -> Result<TotalLoss> {
    let components = LossComponents {
        instance: instance.map_or(0.0, |r| r.value),
        conception: conception.map_or(0.0, |r| r.value),
        dispersion: dispersion.map_or(0.0, |r| r.value),
    };
    let value = components.instance + alpha * components.conception + beta * components.dispersion;
    let grad_features = match (conception, dispersion) {
        (Some(c), Some(d)) => {
            if c.grad.dim() != d.grad.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "conception gradient {:?} vs dispersion gradient {:?}",
                    c.grad.dim(),
                    d.grad.dim()
                )));
            }
            Some(&c.grad * alpha + &d.grad * beta)
        }
        (Some(c), None) => Some(&c.grad * alpha),
        (None, Some(d)) => Some(&d.grad * beta),
        (None, None) => None,
    };
    Ok(TotalLoss {
        value,
        components,
        grad_projections: instance.map(|r| r.grad.clone()),
        grad_features,
    })
}
