//! Command-line front end: `gen-data`, `cluster`, `train` and `eval`.
//!
//! Training options come from built-in defaults, then an optional TOML file
//! (`--config`), then flags. A `--preset` fixes `tau_f` unless the file or a
//! flag sets it explicitly. Every `train` run writes the resolved options to
//! `manifest.toml`, which can be fed back through `--config`.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, EmbeddingFormat, GcdDataset, Label, SplitManifest, SplitSpec, SyntheticSpec};
use crate::encoder;
use crate::error::Error;
use crate::eval::{self, DEFAULT_MAX_ITER};
use crate::infomap;
use crate::rng::{self, Stream};
use crate::simgraph::{self, GraphConfig};
use crate::trainer::{self, TrainConfig};

pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const LABELS_FILE: &str = "labels.csv";
pub const SPLIT_FILE: &str = "split.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EPOCH_LOG_FILE: &str = "epochs.csv";
pub const CONCEPTIONS_FILE: &str = "conceptions.csv";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    FineGrained,
    Generic,
}

impl Preset {
    pub fn tau_f(self) -> f64 {
        match self {
            Preset::FineGrained => 0.6,
            Preset::Generic => 0.7,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dccl", version, about = "Conception-aware contrastive training and evaluation for category discovery")]
pub struct Cli {
    /// Worker threads for graph construction (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic embedding dataset with a labeled/unlabeled split.
    GenData(GenDataArgs),
    /// Run one round of conception generation on an embedding file.
    Cluster(ClusterArgs),
    /// Train the encoder, then evaluate its features.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub superclasses: usize,
    #[arg(long, default_value_t = 5)]
    pub classes_per_superclass: usize,
    #[arg(long, default_value_t = 100)]
    pub instances_per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.15)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 0.5)]
    pub labeled_class_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub labeled_instance_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: EmbeddingFormat,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Training labels; enables edge consolidation.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the similarity graph as an edge list.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub tau_f: Option<f64>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub tau_i: Option<usize>,
    #[arg(long)]
    pub n_c: Option<usize>,
    #[arg(long)]
    pub n_i: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_extractor: Option<f64>,
    #[arg(long)]
    pub lr_head: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub augment_strength: Option<f64>,
    #[arg(long)]
    pub tau_f: Option<f64>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub tau_c: Option<f64>,
    #[arg(long)]
    pub tau_s: Option<f64>,
    #[arg(long)]
    pub tau_l: Option<f64>,
    #[arg(long)]
    pub tau_m: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub include_positive: bool,
    #[arg(long)]
    pub no_instance_loss: bool,
    #[arg(long)]
    pub no_conception_loss: bool,
    #[arg(long)]
    pub no_dispersion_loss: bool,
    #[arg(long)]
    pub no_momentum_update: bool,
    #[arg(long)]
    pub no_consolidation: bool,
    #[arg(long)]
    pub no_renorm_memory: bool,
    /// Cluster count for evaluation (default: final conception count).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Suppress the per-epoch summary on stderr.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Cluster count (default: conception count found on the checkpoint's features).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau_f: Option<f64>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Write the metrics record here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub embeddings: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub max_iter: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: None,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Everything a training run needs; serialized as the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub data: DataPaths,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn table_has(value: &toml::Value, path: &[&str]) -> bool {
    let mut v = value;
    for key in path {
        match v.get(key) {
            Some(next) => v = next,
            None => return false,
        }
    }
    true
}

/// Merges defaults, the optional config file and flag overrides.
pub fn resolve_run_config(file_text: Option<&str>, o: &TrainOverrides) -> CliResult<RunConfig> {
    let (mut cfg, tau_f_in_file) = match file_text {
        Some(text) => {
            let raw: toml::Value = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
            let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
            (cfg, table_has(&raw, &["train", "graph", "tau_f"]))
        }
        None => (RunConfig::default(), false),
    };
    if o.preset.is_some() {
        cfg.preset = o.preset;
    }
    if let Some(p) = cfg.preset {
        if !tau_f_in_file || o.preset.is_some() {
            cfg.train.graph.tau_f = p.tau_f();
        }
    }
    fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
        if let Some(v) = v {
            *slot = v.clone();
        }
    }
    let d = &mut cfg.data;
    if o.embeddings.is_some() {
        d.embeddings = o.embeddings.clone();
    }
    if o.labels.is_some() {
        d.labels = o.labels.clone();
    }
    if o.split.is_some() {
        d.split = o.split.clone();
    }
    let t = &mut cfg.train;
    set(&mut t.seed, &o.seed);
    set(&mut t.max_epoch, &o.epochs);
    set(&mut t.tau_i, &o.tau_i);
    set(&mut t.n_c, &o.n_c);
    set(&mut t.n_i, &o.n_i);
    set(&mut t.instance_batch, &o.batch_size);
    set(&mut t.lr_extractor, &o.lr_extractor);
    set(&mut t.lr_head, &o.lr_head);
    set(&mut t.momentum, &o.momentum);
    set(&mut t.eta, &o.eta);
    set(&mut t.augment_strength, &o.augment_strength);
    set(&mut t.graph.tau_f, &o.tau_f);
    set(&mut t.graph.knn_k, &o.knn_k);
    set(&mut t.loss.tau_c, &o.tau_c);
    set(&mut t.loss.tau_s, &o.tau_s);
    set(&mut t.loss.tau_l, &o.tau_l);
    set(&mut t.loss.tau_m, &o.tau_m);
    set(&mut t.loss.lambda, &o.lambda);
    set(&mut t.loss.alpha, &o.alpha);
    set(&mut t.loss.beta, &o.beta);
    t.loss.include_positive_in_denominator |= o.include_positive;
    t.ablation.no_instance_loss |= o.no_instance_loss;
    t.ablation.no_conception_loss |= o.no_conception_loss;
    t.ablation.no_dispersion_loss |= o.no_dispersion_loss;
    t.ablation.no_momentum_update |= o.no_momentum_update;
    t.ablation.no_consolidation |= o.no_consolidation;
    if o.no_renorm_memory {
        t.renorm_memory = false;
    }
    if o.k.is_some() {
        cfg.eval.k = o.k;
    }
    set(&mut cfg.eval.max_iter, &o.max_iter);
    cfg.train.validate()?;
    if cfg.eval.max_iter == 0 {
        return Err(CliError::Usage("eval.max_iter must be at least 1".into()));
    }
    if cfg.eval.k == Some(0) {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing --{flag} (or data.{flag} in the config file)")))
}

/// Loads embeddings, training labels and the split manifest with the ground truth.
pub fn load_dataset(embeddings: &Path, labels: &Path, split: &Path) -> crate::Result<GcdDataset> {
    let set = dataset::load_embeddings(embeddings, EmbeddingFormat::from_path(embeddings))?;
    let labels = dataset::load_labels(labels, set.count())?;
    let manifest = SplitManifest::load(split)?;
    if manifest.eval_labels.len() != set.count() {
        return Err(Error::ShapeMismatch(format!(
            "split manifest has {} ground-truth labels for {} embeddings",
            manifest.eval_labels.len(),
            set.count()
        )));
    }
    GcdDataset::new(set, labels, manifest.eval_labels)
}

fn write_text(path: &Path, text: &str) -> crate::Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> crate::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub fn cmd_gen_data(a: &GenDataArgs) -> CliResult<Vec<PathBuf>> {
    let spec = SyntheticSpec {
        num_superclasses: a.superclasses,
        classes_per_super: a.classes_per_superclass,
        instances_per_class: a.instances_per_class,
        dim: a.dim,
        intra_class_sigma: a.sigma,
        superclass_spread: a.spread,
        seed: a.seed,
    };
    let split = SplitSpec {
        labeled_class_fraction: a.labeled_class_fraction,
        labeled_instance_fraction: a.labeled_instance_fraction,
        seed: a.seed,
    };
    split.validate()?;
    let data = dataset::generate_synthetic(&spec)?;
    let ds = dataset::make_gcd_split(data.embeddings, &data.class_labels, &split)?;
    create_dir(&a.out_dir)?;
    let emb_name = match a.format {
        EmbeddingFormat::Binary => EMBEDDINGS_FILE,
        EmbeddingFormat::Csv => "embeddings.csv",
    };
    let paths = vec![a.out_dir.join(emb_name), a.out_dir.join(LABELS_FILE), a.out_dir.join(SPLIT_FILE)];
    dataset::save_embeddings(&paths[0], &ds.embeddings, a.format)?;
    dataset::save_labels(&paths[1], &ds.labels)?;
    SplitManifest::for_dataset(&ds, split, Some(spec)).save(&paths[2])?;
    Ok(paths)
}

/// Returns the number of conceptions found.
pub fn cmd_cluster(a: &ClusterArgs) -> CliResult<usize> {
    let mut graph_cfg = GraphConfig::default();
    if let Some(p) = a.preset {
        graph_cfg.tau_f = p.tau_f();
    }
    if let Some(t) = a.tau_f {
        graph_cfg.tau_f = t;
    }
    if let Some(k) = a.knn_k {
        graph_cfg.knn_k = k;
    }
    graph_cfg.validate()?;
    let set = dataset::load_embeddings(&a.embeddings, EmbeddingFormat::from_path(&a.embeddings))?;
    let labels = match &a.labels {
        Some(p) => dataset::load_labels(p, set.count())?,
        None => vec![Label::Unlabeled; set.count()],
    };
    let graph = simgraph::build_consolidated_graph(&labels, set.data().view(), &graph_cfg)?;
    let assignment = infomap::cluster(&graph, rng::derive_seed(a.seed, Stream::Cluster, 0));
    assignment.write_csv(&a.out)?;
    if let Some(p) = &a.edges {
        graph.write_edge_list(p)?;
    }
    Ok(assignment.num_conceptions())
}

/// Evaluation cluster count: the override if given, otherwise the conception
/// count, raised to the number of labeled classes when it falls short.
fn eval_k(requested: Option<usize>, conceptions: usize, ds: &GcdDataset) -> usize {
    requested.unwrap_or_else(|| conceptions.max(ds.num_labeled_classes()))
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<eval::MetricsRecord> {
    let text = match &a.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let cfg = resolve_run_config(text.as_deref(), &a.overrides)?;
    let ds = load_dataset(
        required(&cfg.data.embeddings, "embeddings")?,
        required(&cfg.data.labels, "labels")?,
        required(&cfg.data.split, "split")?,
    )?;
    create_dir(&a.out_dir)?;
    let manifest = toml::to_string(&cfg).map_err(|e| CliError::Runtime(Error::Config(e.to_string())))?;
    write_text(&a.out_dir.join(MANIFEST_FILE), &manifest)?;

    let quiet = a.quiet;
    let outcome = trainer::run(&ds, &cfg.train)?;
    let mut epochs = String::from("epoch,K,L_I,L_C,L_D,L_total,lr\n");
    for e in &outcome.epochs {
        epochs.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, e.k, e.losses.instance, e.losses.conception, e.losses.dispersion, e.total, e.lr
        ));
        if !quiet {
            eprintln!(
                "epoch {:>3}  K {:>3}  L_I {:.4}  L_C {:.4}  L_D {:.4}  total {:.4}  lr {:.5}  {:.2}s",
                e.epoch, e.k, e.losses.instance, e.losses.conception, e.losses.dispersion, e.total, e.lr, e.wall_seconds
            );
        }
    }
    write_text(&a.out_dir.join(TRAIN_LOG_FILE), &outcome.log_text())?;
    write_text(&a.out_dir.join(EPOCH_LOG_FILE), &epochs)?;
    outcome.assignment.write_csv(&a.out_dir.join(CONCEPTIONS_FILE))?;
    encoder::save_checkpoint(&a.out_dir.join(CHECKPOINT_FILE), &outcome.params)?;

    let features = encoder::extract_features(&outcome.params, ds.embeddings.data().view())?;
    let k = eval_k(cfg.eval.k, outcome.assignment.num_conceptions(), &ds);
    let eval_seed = rng::derive_seed(cfg.train.seed, Stream::Eval, 0);
    let metrics = eval::evaluate(features.view(), &ds, k, eval_seed, cfg.eval.max_iter)?.record();
    write_metrics(&a.out_dir.join(METRICS_FILE), &metrics)?;
    Ok(metrics)
}

fn write_metrics(path: &Path, m: &eval::MetricsRecord) -> crate::Result<()> {
    let json = serde_json::to_string(m).map_err(|e| Error::Config(e.to_string()))?;
    write_text(path, &(json + "\n"))
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<eval::MetricsRecord> {
    let params = encoder::load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.embeddings, &a.labels, &a.split)?;
    if params.input_dim() != ds.embeddings.dim() {
        return Err(CliError::Runtime(Error::DimensionMismatch(format!(
            "checkpoint expects {}-dimensional input, embeddings are {}-dimensional",
            params.input_dim(),
            ds.embeddings.dim()
        ))));
    }
    if a.max_iter == 0 {
        return Err(CliError::Usage("--max-iter must be at least 1".into()));
    }
    let features = encoder::extract_features(&params, ds.embeddings.data().view())?;
    let k = match a.k {
        Some(0) => return Err(CliError::Usage("--k must be at least 1".into())),
        Some(k) => k,
        None => {
            let mut graph_cfg = GraphConfig::default();
            set_opt(&mut graph_cfg.tau_f, a.tau_f);
            set_opt(&mut graph_cfg.knn_k, a.knn_k);
            graph_cfg.validate()?;
            let graph = simgraph::build_consolidated_graph(&ds.labels, features.view(), &graph_cfg)?;
            let conceptions = infomap::cluster(&graph, rng::derive_seed(a.seed, Stream::Cluster, 0)).num_conceptions();
            eval_k(None, conceptions, &ds)
        }
    };
    let eval_seed = rng::derive_seed(a.seed, Stream::Eval, 0);
    let metrics = eval::evaluate(features.view(), &ds, k, eval_seed, a.max_iter)?.record();
    if let Some(p) = &a.out {
        write_metrics(p, &metrics)?;
    }
    Ok(metrics)
}

fn set_opt<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // A global pool can only be installed once per process; a second call is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::GenData(a) => {
            for p in cmd_gen_data(a)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Cluster(a) => {
            let k = cmd_cluster(a)?;
            println!("K = {k}");
        }
        Command::Train(a) => {
            let m = cmd_train(a)?;
            println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
        }
        Command::Eval(a) => {
            let m = cmd_eval(a)?;
            println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_resolve_to_reference_hyperparameters() {
        let cfg = resolve_run_config(None, &TrainOverrides::default()).unwrap();
        let l = cfg.train.loss;
        assert_eq!((l.lambda, l.tau_s, l.tau_l, l.tau_c), (0.35, 0.07, 0.05, 0.05));
        assert_eq!((l.alpha, l.beta, l.tau_m), (0.3, 0.1, 0.3));
        assert_eq!((cfg.train.eta, cfg.train.tau_i), (0.9, 5));
        assert_eq!((cfg.train.n_c, cfg.train.n_i, cfg.train.instance_batch), (8, 16, 128));
        assert_eq!(cfg.train.graph.tau_f, 0.7);
    }

    #[test]
    fn preset_and_precedence() {
        let o = TrainOverrides {
            preset: Some(Preset::FineGrained),
            ..TrainOverrides::default()
        };
        assert_eq!(resolve_run_config(None, &o).unwrap().train.graph.tau_f, 0.6);

        let file = "preset = \"fine-grained\"\n[train.graph]\ntau_f = 0.65\n";
        let cfg = resolve_run_config(Some(file), &TrainOverrides::default()).unwrap();
        assert_eq!(cfg.train.graph.tau_f, 0.65);

        let o = TrainOverrides {
            tau_f: Some(0.8),
            alpha: Some(0.0),
            ..TrainOverrides::default()
        };
        let cfg = resolve_run_config(Some("[train.loss]\nalpha = 0.5\n"), &o).unwrap();
        assert_eq!(cfg.train.graph.tau_f, 0.8);
        assert_eq!(cfg.train.loss.alpha, 0.0);
    }

    #[test]
    fn manifest_round_trip() {
        let o = TrainOverrides {
            epochs: Some(3),
            k: Some(7),
            no_consolidation: true,
            embeddings: Some("a.bin".into()),
            ..TrainOverrides::default()
        };
        let cfg = resolve_run_config(None, &o).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = resolve_run_config(Some(&text), &TrainOverrides::default()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            resolve_run_config(Some("[train]\nlearning_rate = 1.0\n"), &TrainOverrides::default()),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let o = TrainOverrides {
            n_c: Some(1),
            ..TrainOverrides::default()
        };
        assert_eq!(resolve_run_config(None, &o).unwrap_err().exit_code(), 1);
    }
}
