//! Semi-supervised k-means on raw embeddings and accuracy under the best
//! cluster-to-class matching, for a range of cluster counts.

use anyhow::Result;
use dccl::dataset::{generate_synthetic, make_gcd_split, SplitSpec, SyntheticSpec};
use dccl::eval::{evaluate, ss_kmeans, DEFAULT_MAX_ITER};
use dccl::simgraph::normalize_rows;

fn main() -> Result<()> {
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let ds = make_gcd_split(data.embeddings, &data.class_labels, &SplitSpec::default())?;
    let features = normalize_rows(ds.embeddings.data().view())?;

    let km = ss_kmeans(features.view(), &ds.labels, 10, 0, DEFAULT_MAX_ITER)?;
    println!("k = 10 converged after {} iterations", km.iterations);
    let trace: Vec<String> = km.objective_trace.iter().map(|o| format!("{o:.3}")).collect();
    println!("objective trace {}", trace.join(" "));

    for k in [5, 8, 10, 12, 15] {
        let m = evaluate(features.view(), &ds, k, 0, DEFAULT_MAX_ITER)?;
        println!("k = {k:>2}: all {:.4}  old {:.4}  new {:.4}", m.acc_all, m.acc_old, m.acc_new);
    }
    let m = evaluate(features.view(), &ds, 10, 0, DEFAULT_MAX_ITER)?;
    println!("{}", serde_json::to_string(&m.record())?);
    Ok(())
}
