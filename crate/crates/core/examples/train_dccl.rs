//! Trains the full method and the instance-only baseline on the same synthetic
//! split, then compares their clustering accuracy on the unlabeled instances.
//!
//! cargo run --release --example train_dccl -- [seed] [epochs]

use std::time::Instant;

use anyhow::Result;
use dccl::dataset::{generate_synthetic, make_gcd_split, SplitSpec, SyntheticSpec};
use dccl::encoder::extract_features;
use dccl::eval::{evaluate, DEFAULT_MAX_ITER};
use dccl::trainer::{self, TrainConfig};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);

    let data = generate_synthetic(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
    let dataset = make_gcd_split(data.embeddings, &data.class_labels, &SplitSpec { seed, ..SplitSpec::default() })?;
    let k = dataset.true_num_classes.unwrap_or(10);
    println!(
        "{} instances, {} labeled from {} known classes, {} classes in total",
        dataset.len(),
        dataset.num_labeled(),
        dataset.num_labeled_classes(),
        k
    );

    let raw = dccl::simgraph::normalize_rows(dataset.embeddings.data().view())?;
    let m = evaluate(raw.view(), &dataset, k, seed, DEFAULT_MAX_ITER)?;
    println!("raw embeddings     all {:.4} old {:.4} new {:.4}", m.acc_all, m.acc_old, m.acc_new);

    let full = TrainConfig {
        max_epoch: epochs,
        seed,
        ..TrainConfig::default()
    };
    let mut baseline = full.clone();
    baseline.loss.alpha = 0.0;
    baseline.loss.beta = 0.0;
    baseline.ablation.no_consolidation = true;
    baseline.ablation.no_momentum_update = true;

    for (name, cfg) in [("instance-only", &baseline), ("full", &full)] {
        let started = Instant::now();
        let out = trainer::run(&dataset, cfg)?;
        let features = extract_features(&out.params, dataset.embeddings.data().view())?;
        let m = evaluate(features.view(), &dataset, k, seed, DEFAULT_MAX_ITER)?;
        let ks: Vec<usize> = out.dcg_rounds.iter().map(|r| r.k).collect();
        println!(
            "{name:<18} all {:.4} old {:.4} new {:.4}  K per round {ks:?}  ({:.1}s)",
            m.acc_all,
            m.acc_old,
            m.acc_new,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
