//! The training loop: periodic conception generation on the current features,
//! interleaved with instance-level and conception-level contrastive updates.
//!
//! Conception generation runs once before the first epoch and then after every
//! epoch `n` with `n % tau_i == 0` (1-based), as long as more epochs follow.
//! Every iteration draws a fresh instance batch and a fresh conception batch,
//! each from its own random stream, so switching off the conception losses
//! leaves the instance-level updates untouched.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{GcdDataset, Label};
use crate::encoder::{self, EncoderConfig, EncoderGrads, EncoderParams, OptimState};
use crate::error::{Error, Result};
use crate::infomap::{self, ConceptionAssignment};
use crate::losses::{self, LossComponents, LossConfig};
use crate::memory::ConceptionMemory;
use crate::rng::{self, Stream};
use crate::simgraph::{self, GraphConfig};

/// Hidden widths and output sizes of the encoder; the input width comes from
/// the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderLayout {
    pub extractor_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden: Vec<usize>,
    pub projection_dim: usize,
}

impl Default for EncoderLayout {
    fn default() -> Self {
        let c = EncoderConfig::with_input(0);
        Self {
            extractor_hidden: c.extractor_hidden,
            feature_dim: c.feature_dim,
            head_hidden: c.head_hidden,
            projection_dim: c.projection_dim,
        }
    }
}

impl EncoderLayout {
    pub fn config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            extractor_hidden: self.extractor_hidden.clone(),
            feature_dim: self.feature_dim,
            head_hidden: self.head_hidden.clone(),
            projection_dim: self.projection_dim,
        }
    }
}

/// Switches for component studies. Everything is enabled by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub no_instance_loss: bool,
    pub no_conception_loss: bool,
    pub no_dispersion_loss: bool,
    pub no_momentum_update: bool,
    pub no_consolidation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epoch: usize,
    pub tau_i: usize,
    pub n_c: usize,
    pub n_i: usize,
    pub instance_batch: usize,
    pub lr_extractor: f64,
    pub lr_head: f64,
    pub momentum: f64,
    pub eta: f64,
    /// Project memory prototypes back onto the unit sphere after each update.
    pub renorm_memory: bool,
    /// Gaussian noise scale of the two-view augmentation (dropout is half of it).
    pub augment_strength: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub graph: GraphConfig,
    pub encoder: EncoderLayout,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epoch: 50,
            tau_i: 5,
            n_c: 8,
            n_i: 16,
            instance_batch: 128,
            lr_extractor: 0.01,
            lr_head: 0.1,
            momentum: 0.9,
            eta: 0.9,
            renorm_memory: true,
            augment_strength: 0.1,
            seed: 0,
            loss: LossConfig::default(),
            graph: GraphConfig::default(),
            encoder: EncoderLayout::default(),
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::invalid(msg)) };
        check(self.max_epoch >= 1, "max_epoch must be at least 1")?;
        check(self.tau_i >= 1, "tau_i must be at least 1")?;
        check(self.n_c >= 2, "n_c must be at least 2")?;
        check(self.n_i >= 1, "n_i must be at least 1")?;
        check(self.instance_batch >= 2, "instance batch must hold at least 2 instances")?;
        check(
            self.lr_extractor >= 0.0 && self.lr_extractor.is_finite() && self.lr_head >= 0.0 && self.lr_head.is_finite(),
            "learning rates must be finite and non-negative",
        )?;
        check((0.0..1.0).contains(&self.momentum), "momentum must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.eta), "eta must lie in [0, 1)")?;
        check(
            self.augment_strength >= 0.0 && self.augment_strength <= 2.0,
            "augment_strength must lie in [0, 2]",
        )?;
        check(self.encoder.feature_dim >= 1 && self.encoder.projection_dim >= 1, "encoder widths must be positive")?;
        self.loss.validate()?;
        self.graph.validate()
    }

    fn instance_loss_active(&self) -> bool {
        !self.ablation.no_instance_loss
    }

    fn conception_loss_active(&self) -> bool {
        !self.ablation.no_conception_loss && self.loss.alpha != 0.0
    }

    fn dispersion_loss_active(&self) -> bool {
        !self.ablation.no_dispersion_loss && self.loss.beta != 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptionBatch {
    /// Instance indices, `n_i` per sampled conception, grouped by conception.
    pub indices: Vec<usize>,
    /// Conception id of each entry of `indices`.
    pub conceptions: Vec<usize>,
    /// The distinct conceptions drawn, in draw order.
    pub sampled: Vec<usize>,
}

/// Draws `n_c` distinct conceptions uniformly, then `n_i` members of each.
/// Members are drawn without replacement when a conception has at least `n_i`
/// of them and with replacement otherwise.
pub fn sample_conception_batch(assignment: &ConceptionAssignment, n_c: usize, n_i: usize, seed: u64) -> Result<ConceptionBatch> {
    let k = assignment.num_conceptions();
    if n_c > k {
        return Err(Error::TooFewConceptions {
            requested: n_c,
            available: k,
        });
    }
    if n_i == 0 {
        return Err(Error::invalid("n_i must be at least 1"));
    }
    let members = assignment.members();
    let mut rng = rng::seeded(seed);
    let sampled: Vec<usize> = index::sample(&mut rng, k, n_c).into_vec();
    let mut indices = Vec::with_capacity(n_c * n_i);
    let mut conceptions = Vec::with_capacity(n_c * n_i);
    for &c in &sampled {
        let pool = &members[c];
        if pool.is_empty() {
            return Err(Error::EmptyConception(c));
        }
        if pool.len() >= n_i {
            indices.extend(index::sample(&mut rng, pool.len(), n_i).into_iter().map(|p| pool[p]));
        } else {
            indices.extend((0..n_i).map(|_| pool[rng.random_range(0..pool.len())]));
        }
        conceptions.extend(std::iter::repeat_n(c, n_i));
    }
    Ok(ConceptionBatch {
        indices,
        conceptions,
        sampled,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBatch {
    pub indices: Vec<usize>,
    /// `labeled[j]` marks whether `indices[j]` carries a training label.
    pub labeled: Vec<bool>,
}

/// Uniform sample of `size` instances without replacement.
pub fn sample_instance_batch(dataset: &GcdDataset, size: usize, seed: u64) -> Result<InstanceBatch> {
    let m = dataset.len();
    if size > m {
        return Err(Error::invalid(format!("batch of {size} requested from {m} instances")));
    }
    let mut rng = rng::seeded(seed);
    let indices = index::sample(&mut rng, m, size).into_vec();
    let labeled = indices.iter().map(|&i| dataset.labels[i].is_labeled()).collect();
    Ok(InstanceBatch { indices, labeled })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub k: usize,
    pub losses: LossComponents,
    pub total: f64,
    pub lr: f64,
}

impl IterationRecord {
    pub const HEADER: &'static str = "epoch,iter,K,L_I,L_C,L_D,L_total,lr";

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.iteration,
            self.k,
            self.losses.instance,
            self.losses.conception,
            self.losses.dispersion,
            self.total,
            self.lr
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Conception count in effect during this epoch.
    pub k: usize,
    /// Batch means of the loss components.
    pub losses: LossComponents,
    pub total: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

/// One conception generation round.
#[derive(Debug, Clone, PartialEq)]
pub struct DcgRound {
    /// Generation ran after this epoch (0 means before training).
    pub after_epoch: usize,
    pub k: usize,
    pub codelength: f64,
    pub num_edges: usize,
}

/// What the observer sees after each parameter update.
pub struct StepEvent<'a> {
    pub epoch: usize,
    pub iteration: usize,
    pub params: &'a EncoderParams,
    pub instance_batch: &'a InstanceBatch,
    pub conception_batch: Option<&'a ConceptionBatch>,
    pub memory_before: Option<&'a Array2<f64>>,
    pub memory_after: Option<&'a Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub assignment: ConceptionAssignment,
    pub epochs: Vec<EpochLog>,
    pub iterations: Vec<IterationRecord>,
    pub dcg_rounds: Vec<DcgRound>,
    pub sgd_steps: u64,
}

impl TrainOutcome {
    /// The line-delimited training log, header included.
    pub fn log_text(&self) -> String {
        let mut s = String::from(IterationRecord::HEADER);
        s.push('\n');
        for r in &self.iterations {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }
}

pub fn iterations_per_epoch(num_instances: usize, batch: usize) -> usize {
    num_instances.div_ceil(batch)
}

/// Seeds used at global step `step` (0-based).
pub fn step_seeds(root: u64, step: u64) -> (u64, u64, u64, u64) {
    (
        rng::derive_seed(root, Stream::InstanceBatch, step),
        rng::derive_seed(root, Stream::Augment, 2 * step),
        rng::derive_seed(root, Stream::ConceptionBatch, step),
        rng::derive_seed(root, Stream::Augment, 2 * step + 1),
    )
}

pub fn run(dataset: &GcdDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run_observed(dataset, cfg, &mut |_| {})
}

struct Generation {
    assignment: ConceptionAssignment,
    memory: Option<ConceptionMemory>,
}

fn generate_conceptions(
    dataset: &GcdDataset,
    params: &EncoderParams,
    cfg: &TrainConfig,
    round: u64,
) -> Result<(Generation, DcgRound, usize)> {
    let features = encoder::extract_features(params, dataset.embeddings.data().view())?;
    let unlabeled;
    let labels: &[Label] = if cfg.ablation.no_consolidation {
        unlabeled = vec![Label::Unlabeled; dataset.len()];
        &unlabeled
    } else {
        &dataset.labels
    };
    let graph = simgraph::build_consolidated_graph(labels, features.view(), &cfg.graph)?;
    let assignment = infomap::cluster(&graph, rng::derive_seed(cfg.seed, Stream::Cluster, round));
    let codelength = infomap::codelength(&graph, &assignment)?;
    let k = assignment.num_conceptions();
    let memory = if k >= 2 {
        Some(ConceptionMemory::initialize_with(features.view(), &assignment, cfg.eta, cfg.renorm_memory)?)
    } else {
        None
    };
    let record = DcgRound {
        after_epoch: 0,
        k,
        codelength,
        num_edges: graph.num_undirected_edges(),
    };
    Ok((Generation { assignment, memory }, record, k))
}

fn gather(data: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    data.select(Axis(0), rows)
}

/// [`run`] with a callback after every parameter update.
pub fn run_observed(dataset: &GcdDataset, cfg: &TrainConfig, observer: &mut dyn FnMut(&StepEvent<'_>)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let m = dataset.len();
    let data = dataset.embeddings.data();
    let enc_cfg = cfg.encoder.config(dataset.embeddings.dim());
    let mut params = EncoderParams::init(&enc_cfg, rng::derive_seed(cfg.seed, Stream::Init, 0))?;
    let mut opt = OptimState::new(&params, cfg.lr_extractor, cfg.lr_head, cfg.momentum, cfg.max_epoch);
    let batch = cfg.instance_batch.min(m);
    if batch < 2 {
        return Err(Error::invalid("need at least 2 instances to train"));
    }
    let iters = iterations_per_epoch(m, batch);
    let use_instance = cfg.instance_loss_active();
    let use_conception = cfg.conception_loss_active();
    let use_dispersion = cfg.dispersion_loss_active();

    let mut dcg_rounds = Vec::new();
    let (mut gen, round, _) = generate_conceptions(dataset, &params, cfg, 0)?;
    dcg_rounds.push(round);

    let mut epochs = Vec::with_capacity(cfg.max_epoch);
    let mut records = Vec::with_capacity(cfg.max_epoch * iters);
    let mut step: u64 = 0;
    for epoch in 1..=cfg.max_epoch {
        let started = Instant::now();
        opt.epoch = epoch - 1;
        let (lr, _) = opt.learning_rates()?;
        let k = gen.assignment.num_conceptions();
        let mut sums = LossComponents::default();
        let mut total_sum = 0.0;
        for iteration in 1..=iters {
            let (inst_seed, inst_aug_seed, conc_seed, conc_aug_seed) = step_seeds(cfg.seed, step);
            let inst_batch = sample_instance_batch(dataset, batch, inst_seed)?;
            let mut grads = EncoderGrads::zeros_like(&params);

            let instance_report = if use_instance {
                let x = gather(data, &inst_batch.indices);
                let (a, b) = encoder::augment(x.view(), cfg.augment_strength, inst_aug_seed)?;
                let views = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                let out = encoder::forward(&params, views.view())?;
                let labels: Vec<Label> = inst_batch.indices.iter().map(|&i| dataset.labels[i]).collect();
                let report = losses::instance_loss(out.projections.view(), &labels, cfg.loss.lambda, cfg.loss.tau_s, cfg.loss.tau_l)?;
                let g = encoder::backward(&params, &out, None, Some(report.grad.view()))?;
                grads.accumulate(&g);
                Some(report)
            } else {
                None
            };

            let mut conception_batch = None;
            let mut conception_report = None;
            let mut dispersion_report = None;
            let mut batch_features = None;
            if (use_conception || use_dispersion) && gen.memory.is_some() {
                let memory = gen.memory.as_ref().expect("checked above");
                let n_c = cfg.n_c.min(memory.num_conceptions());
                let cb = sample_conception_batch(&gen.assignment, n_c, cfg.n_i, conc_seed)?;
                let x = gather(data, &cb.indices);
                let (view, _) = encoder::augment(x.view(), cfg.augment_strength, conc_aug_seed)?;
                let out = encoder::forward(&params, view.view())?;
                let mut g_features = Array2::<f64>::zeros(out.features.dim());
                if use_conception {
                    let r = losses::conception_loss(
                        out.features.view(),
                        &cb.conceptions,
                        memory.reps().view(),
                        cfg.loss.tau_c,
                        cfg.loss.include_positive_in_denominator,
                    )?;
                    g_features.scaled_add(cfg.loss.alpha, &r.grad);
                    conception_report = Some(r);
                }
                if use_dispersion {
                    let r = losses::dispersion_loss(
                        out.features.view(),
                        &cb.conceptions,
                        &cb.sampled,
                        cfg.loss.tau_m,
                        cfg.loss.dispersion_diagonal,
                    )?;
                    g_features.scaled_add(cfg.loss.beta, &r.grad);
                    dispersion_report = Some(r);
                }
                let g = encoder::backward(&params, &out, Some(g_features.view()), None)?;
                grads.accumulate(&g);
                batch_features = Some(out.features);
                conception_batch = Some(cb);
            }

            let total = losses::total_loss(
                instance_report.as_ref(),
                conception_report.as_ref(),
                dispersion_report.as_ref(),
                cfg.loss.alpha,
                cfg.loss.beta,
            )?;
            if !total.value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, iteration });
            }
            encoder::sgd_step(&mut params, &grads, &mut opt)?;

            let memory_before = gen.memory.as_ref().map(|mem| mem.reps().clone());
            if !cfg.ablation.no_momentum_update {
                if let (Some(mem), Some(cb), Some(f)) = (gen.memory.as_mut(), conception_batch.as_ref(), batch_features.as_ref()) {
                    mem.update_batch(f.view(), &cb.conceptions)?;
                }
            }
            observer(&StepEvent {
                epoch,
                iteration,
                params: &params,
                instance_batch: &inst_batch,
                conception_batch: conception_batch.as_ref(),
                memory_before: memory_before.as_ref(),
                memory_after: gen.memory.as_ref().map(|mem| mem.reps()),
            });

            sums.instance += total.components.instance;
            sums.conception += total.components.conception;
            sums.dispersion += total.components.dispersion;
            total_sum += total.value;
            records.push(IterationRecord {
                epoch,
                iteration,
                k,
                losses: total.components,
                total: total.value,
                lr,
            });
            step += 1;
        }
        let n = iters as f64;
        epochs.push(EpochLog {
            epoch,
            k,
            losses: LossComponents {
                instance: sums.instance / n,
                conception: sums.conception / n,
                dispersion: sums.dispersion / n,
            },
            total: total_sum / n,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if epoch % cfg.tau_i == 0 && epoch < cfg.max_epoch {
            let (next, mut round, _) = generate_conceptions(dataset, &params, cfg, dcg_rounds.len() as u64)?;
            round.after_epoch = epoch;
            dcg_rounds.push(round);
            gen = next;
        }
    }
    Ok(TrainOutcome {
        params,
        assignment: gen.assignment,
        epochs,
        iterations: records,
        dcg_rounds,
        sgd_steps: step,
    })
}
