//! One round of conception generation: similarity graph on the raw embeddings,
//! map-equation clustering, and the resulting conception sizes.

use anyhow::Result;
use dccl::dataset::{generate_synthetic, make_gcd_split, Label, SplitSpec, SyntheticSpec};
use dccl::infomap::{cluster_traced, codelength, ConceptionAssignment};
use dccl::simgraph::{build_consolidated_graph, normalize_rows, GraphConfig};

fn main() -> Result<()> {
    let data = generate_synthetic(&SyntheticSpec::default())?;
    let ds = make_gcd_split(data.embeddings, &data.class_labels, &SplitSpec::default())?;
    let features = normalize_rows(ds.embeddings.data().view())?;
    let cfg = GraphConfig::default();

    for (name, labels) in [("unsupervised", vec![Label::Unlabeled; ds.len()]), ("consolidated", ds.labels.clone())] {
        let graph = build_consolidated_graph(&labels, features.view(), &cfg)?;
        let mut rounds = Vec::new();
        let parts = cluster_traced(&graph, 0, &mut |l| rounds.push(l));
        let one = ConceptionAssignment::from_modules(&vec![0; ds.len()]);
        let mut sizes: Vec<usize> = parts.members().iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        println!(
            "{name}: {} edges, K = {}, codelength {:.4} bits (one module: {:.4}), {} accepted moves",
            graph.num_undirected_edges(),
            parts.num_conceptions(),
            codelength(&graph, &parts)?,
            codelength(&graph, &one)?,
            rounds.len()
        );
        println!("  sizes {sizes:?}");
    }
    Ok(())
}
