//! Builds the similarity graph on a handful of points and shows how labels
//! add, keep or remove edges.

use anyhow::Result;
use dccl::dataset::Label;
use dccl::simgraph::{build_consolidated_graph, GraphConfig};
use ndarray::array;

fn main() -> Result<()> {
    let features = array![
        [1.0, 0.0, 0.0],
        [0.95, 0.31, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.95, 0.31],
        [0.7, 0.7, 0.0],
    ];
    let cfg = GraphConfig { tau_f: 0.8, knn_k: 2 };

    let unlabeled = vec![Label::Unlabeled; 5];
    let plain = build_consolidated_graph(&unlabeled, features.view(), &cfg)?;
    println!("without labels:\n{}", plain.to_edge_list());

    // 0 and 2 share a class although they are orthogonal; 1 and 3 are labeled
    // with different classes.
    let labels = vec![Label::Known(0), Label::Known(0), Label::Known(0), Label::Known(1), Label::Unlabeled];
    let consolidated = build_consolidated_graph(&labels, features.view(), &cfg)?;
    println!("with labels:\n{}", consolidated.to_edge_list());
    Ok(())
}
