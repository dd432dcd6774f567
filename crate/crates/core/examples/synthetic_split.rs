//! Generates a synthetic embedding dataset, splits it into labeled and
//! unlabeled parts, and round-trips it through the binary and CSV formats.

use anyhow::Result;
use dccl::dataset::{self, EmbeddingFormat, SplitSpec, SyntheticSpec};

fn main() -> Result<()> {
    let spec = SyntheticSpec::default();
    let data = dataset::generate_synthetic(&spec)?;
    let split = SplitSpec::default();
    let ds = dataset::make_gcd_split(data.embeddings, &data.class_labels, &split)?;

    println!("{} instances of dimension {}", ds.len(), ds.embeddings.dim());
    println!("labeled classes {:?}", ds.labeled_classes);
    println!("{} labeled, {} unlabeled", ds.num_labeled(), ds.len() - ds.num_labeled());

    let dir = std::env::temp_dir().join("dccl-synthetic-split");
    std::fs::create_dir_all(&dir)?;
    for (name, format) in [("emb.bin", EmbeddingFormat::Binary), ("emb.csv", EmbeddingFormat::Csv)] {
        let path = dir.join(name);
        dataset::save_embeddings(&path, &ds.embeddings, format)?;
        let back = dataset::load_embeddings(&path, format)?;
        let max_err = (back.data() - ds.embeddings.data()).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        println!("{name}: {} bytes, max round-trip error {max_err:.2e}", std::fs::metadata(&path)?.len());
    }
    dataset::save_labels(&dir.join("labels.csv"), &ds.labels)?;
    let reloaded = dataset::load_labels(&dir.join("labels.csv"), ds.len())?;
    assert_eq!(reloaded, ds.labels);
    println!("files in {}", dir.display());
    Ok(())
}
