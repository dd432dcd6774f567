use std::collections::BTreeSet;

use dccl::dataset::{generate_synthetic, make_gcd_split, GcdDataset, Label, SplitSpec, SyntheticSpec};
use dccl::encoder::{self, EncoderParams, OptimState};
use dccl::rng::{derive_seed, Stream};
use dccl::simgraph::GraphConfig;
use dccl::trainer::{self, iterations_per_epoch, step_seeds, TrainConfig};
use ndarray::{concatenate, Axis};

fn dataset(seed: u64) -> GcdDataset {
    let spec = SyntheticSpec {
        num_superclasses: 2,
        classes_per_super: 3,
        instances_per_class: 20,
        dim: 12,
        seed,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    make_gcd_split(data.embeddings, &data.class_labels, &SplitSpec { seed, ..SplitSpec::default() }).unwrap()
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epoch: 6,
        tau_i: 2,
        n_c: 4,
        n_i: 4,
        instance_batch: 32,
        graph: GraphConfig { tau_f: 0.7, knn_k: 10 },
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn instance_only_matches_reference_loop() {
    let ds = dataset(1);
    let mut cfg = config(5);
    cfg.loss.alpha = 0.0;
    cfg.loss.beta = 0.0;
    cfg.ablation.no_consolidation = true;
    cfg.ablation.no_momentum_update = true;

    let mut observed = Vec::new();
    let out = trainer::run_observed(&ds, &cfg, &mut |e| {
        assert!(e.conception_batch.is_none());
        observed.push(e.params.clone());
    })
    .unwrap();

    let enc = cfg.encoder.config(ds.embeddings.dim());
    let mut params = EncoderParams::init(&enc, derive_seed(cfg.seed, Stream::Init, 0)).unwrap();
    let mut opt = OptimState::new(&params, cfg.lr_extractor, cfg.lr_head, cfg.momentum, cfg.max_epoch);
    let iters = iterations_per_epoch(ds.len(), cfg.instance_batch);
    let mut step = 0u64;
    for epoch in 1..=cfg.max_epoch {
        opt.epoch = epoch - 1;
        for _ in 0..iters {
            let (inst, aug, _, _) = step_seeds(cfg.seed, step);
            let batch = trainer::sample_instance_batch(&ds, cfg.instance_batch, inst).unwrap();
            let x = ds.embeddings.data().select(Axis(0), &batch.indices);
            let (a, b) = encoder::augment(x.view(), cfg.augment_strength, aug).unwrap();
            let views = concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
            let fwd = encoder::forward(&params, views.view()).unwrap();
            let labels: Vec<Label> = batch.indices.iter().map(|&i| ds.labels[i]).collect();
            let l = dccl::losses::instance_loss(fwd.projections.view(), &labels, cfg.loss.lambda, cfg.loss.tau_s, cfg.loss.tau_l).unwrap();
            let g = encoder::backward(&params, &fwd, None, Some(l.grad.view())).unwrap();
            encoder::sgd_step(&mut params, &g, &mut opt).unwrap();
            let seen = &observed[step as usize];
            assert_eq!(seen.extractor, params.extractor, "step {step}");
            assert_eq!(seen.head, params.head, "step {step}");
            step += 1;
        }
    }
    assert_eq!(out.sgd_steps, step);
    assert!(out.iterations.iter().all(|r| r.losses.conception == 0.0 && r.losses.dispersion == 0.0));
}

#[test]
fn memory_updates_stay_inside_the_conception_batch() {
    let ds = dataset(2);
    let mut steps = 0;
    trainer::run_observed(&ds, &config(2), &mut |e| {
        let (Some(before), Some(after), Some(cb)) = (e.memory_before, e.memory_after, e.conception_batch) else {
            return;
        };
        let sampled: BTreeSet<usize> = cb.sampled.iter().copied().collect();
        for (c, (b, a)) in before.rows().into_iter().zip(after.rows()).enumerate() {
            if b != a {
                assert!(sampled.contains(&c), "row {c} changed without being sampled");
            }
        }
        assert_eq!(cb.indices.len(), cb.sampled.len() * 4);
        steps += 1;
    })
    .unwrap();
    assert!(steps > 0);
}

#[test]
fn no_momentum_update_freezes_memory() {
    let ds = dataset(3);
    let mut cfg = config(3);
    cfg.ablation.no_momentum_update = true;
    trainer::run_observed(&ds, &cfg, &mut |e| {
        if let (Some(b), Some(a)) = (e.memory_before, e.memory_after) {
            assert_eq!(b, a);
        }
    })
    .unwrap();
}

#[test]
fn conception_count_changes_only_at_generation_epochs() {
    let ds = dataset(4);
    let cfg = TrainConfig {
        tau_i: 3,
        max_epoch: 9,
        ..config(4)
    };
    let out = trainer::run(&ds, &cfg).unwrap();
    for pair in out.iterations.windows(2) {
        if pair[0].k != pair[1].k {
            assert_eq!(pair[0].epoch + 1, pair[1].epoch);
            assert_eq!(pair[0].epoch % cfg.tau_i, 0);
        }
    }
    assert_eq!(out.dcg_rounds.len(), 1 + (cfg.max_epoch - 1) / cfg.tau_i);
    let after: Vec<usize> = out.dcg_rounds.iter().map(|r| r.after_epoch).collect();
    assert_eq!(after, vec![0, 3, 6]);
    assert_eq!(out.sgd_steps as usize, cfg.max_epoch * iterations_per_epoch(ds.len(), cfg.instance_batch));
}

#[test]
fn epoch_log_is_ordered_and_learning_rate_anneals() {
    let ds = dataset(5);
    let out = trainer::run(&ds, &config(5)).unwrap();
    let epochs: Vec<usize> = out.epochs.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, (1..=6).collect::<Vec<_>>());
    assert!(out.epochs.windows(2).all(|w| w[1].lr < w[0].lr));
    assert_eq!(out.epochs[0].lr, 0.01);
}

#[test]
fn ablations_change_the_loss_columns() {
    let ds = dataset(6);
    let mut cfg = config(6);
    cfg.ablation.no_dispersion_loss = true;
    let out = trainer::run(&ds, &cfg).unwrap();
    assert!(out.iterations.iter().all(|r| r.losses.dispersion == 0.0));
    assert!(out.iterations.iter().any(|r| r.losses.conception != 0.0));

    let mut cfg = config(6);
    cfg.ablation.no_instance_loss = true;
    let out = trainer::run(&ds, &cfg).unwrap();
    assert!(out.iterations.iter().all(|r| r.losses.instance == 0.0));
}

#[test]
fn oversized_batch_is_clamped_to_the_dataset() {
    let ds = dataset(7);
    let cfg = TrainConfig {
        instance_batch: 10_000,
        max_epoch: 1,
        ..config(7)
    };
    let out = trainer::run(&ds, &cfg).unwrap();
    assert_eq!(out.sgd_steps, 1);
}
