//! Data model for generalized category discovery splits, embedding file IO
//! and a hierarchical Gaussian-mixture generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Magic bytes opening a binary embedding file.
pub const MAGIC: &[u8; 4] = b"DCCL";
pub const FORMAT_VERSION: u32 = 1;

/// A dense `count x dim` matrix of finite feature coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    data: Array2<f64>,
}

impl EmbeddingSet {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (m, d) = data.dim();
        if m == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "embedding set must be non-empty, got {m}x{d}"
            )));
        }
        if let Some(((row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self { data })
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// Per-instance training label. Unlabeled instances are stored as `-1` in files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Known(usize),
    Unlabeled,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Known(c) => Some(c),
            Label::Unlabeled => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        matches!(self, Label::Known(_))
    }
}

/// A partially labeled dataset. `eval_labels` holds the ground truth for every
/// instance and must only be read by evaluation code.
#[derive(Debug, Clone)]
pub struct GcdDataset {
    pub embeddings: EmbeddingSet,
    pub labels: Vec<Label>,
    pub eval_labels: Vec<usize>,
    pub labeled_classes: BTreeSet<usize>,
    pub true_num_classes: Option<usize>,
}

impl GcdDataset {
    pub fn new(embeddings: EmbeddingSet, labels: Vec<Label>, eval_labels: Vec<usize>) -> Result<Self> {
        let m = embeddings.count();
        if labels.len() != m || eval_labels.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "{m} embeddings, {} labels, {} eval labels",
                labels.len(),
                eval_labels.len()
            )));
        }
        let labeled_classes: BTreeSet<usize> = labels.iter().filter_map(|l| l.class()).collect();
        let all_classes: BTreeSet<usize> = eval_labels.iter().copied().collect();
        if !labeled_classes.is_subset(&all_classes) {
            return Err(Error::invalid("labeled classes must be a subset of ground-truth classes"));
        }
        let num_labeled = labels.iter().filter(|l| l.is_labeled()).count();
        if num_labeled == 0 || num_labeled == m {
            return Err(Error::DegenerateSplit(format!(
                "{num_labeled} of {m} instances labeled; need at least one labeled and one unlabeled"
            )));
        }
        Ok(Self {
            embeddings,
            labels,
            eval_labels,
            labeled_classes,
            true_num_classes: Some(all_classes.len()),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_labeled_classes(&self) -> usize {
        self.labeled_classes.len()
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_labeled()).count()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labels[i].is_labeled()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub labeled_class_fraction: f64,
    pub labeled_instance_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            labeled_class_fraction: 0.5,
            labeled_instance_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("labeled_class_fraction", self.labeled_class_fraction),
            ("labeled_instance_fraction", self.labeled_instance_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

/// Parameters of the hierarchical Gaussian mixture.
///
/// Superclass centers are drawn from `N(0, I/dim)` (norm close to 1). Each
/// class mean is its superclass center plus `N(0, superclass_spread^2 I/dim)`,
/// so `superclass_spread` is the typical distance of a class mean from its
/// superclass center. Instances are `N(class mean, intra_class_sigma^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_superclasses: usize,
    pub classes_per_super: usize,
    pub instances_per_class: usize,
    pub dim: usize,
    pub intra_class_sigma: f64,
    pub superclass_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_superclasses: 2,
            classes_per_super: 5,
            instances_per_class: 100,
            dim: 32,
            intra_class_sigma: 0.15,
            superclass_spread: 1.0,
            seed: 0,
        }
    }
}

/// Output of [`generate_synthetic`]: the points, their class ids (grouped so
/// that class `c` belongs to superclass `c / classes_per_super`) and the drawn
/// class means.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub embeddings: EmbeddingSet,
    pub class_labels: Vec<usize>,
    pub class_means: Array2<f64>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let SyntheticSpec {
        num_superclasses,
        classes_per_super,
        instances_per_class,
        dim,
        intra_class_sigma,
        superclass_spread,
        seed,
    } = *spec;
    if num_superclasses == 0 || classes_per_super == 0 || instances_per_class == 0 || dim == 0 {
        return Err(Error::invalid("synthetic generator counts must all be at least 1"));
    }
    if !(intra_class_sigma >= 0.0 && intra_class_sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "intra_class_sigma must be non-negative, got {intra_class_sigma}"
        )));
    }
    if !(superclass_spread > 0.0 && superclass_spread.is_finite()) {
        return Err(Error::invalid(format!(
            "superclass_spread must be positive, got {superclass_spread}"
        )));
    }

    let mut rng = rng::stream_rng(seed, Stream::Generate, 0);
    let unit_scale = 1.0 / (dim as f64).sqrt();
    let num_classes = num_superclasses * classes_per_super;
    let mut class_means = Array2::<f64>::zeros((num_classes, dim));
    for s in 0..num_superclasses {
        let center: Vec<f64> = (0..dim)
            .map(|_| unit_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>();
        for c in 0..classes_per_super {
            let mut row = class_means.row_mut(s * classes_per_super + c);
            for (d, x) in row.iter_mut().enumerate() {
                let offset: f64 = StandardNormal.sample(&mut rng);
                *x = center[d] + superclass_spread * unit_scale * offset;
            }
        }
    }

    let m = num_classes * instances_per_class;
    let mut data = Array2::<f64>::zeros((m, dim));
    let mut class_labels = Vec::with_capacity(m);
    let noise = Normal::new(0.0, intra_class_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    for c in 0..num_classes {
        for k in 0..instances_per_class {
            let i = c * instances_per_class + k;
            for d in 0..dim {
                data[[i, d]] = class_means[[c, d]] + noise.sample(&mut rng);
            }
            class_labels.push(c);
        }
    }
    Ok(SyntheticData {
        embeddings: EmbeddingSet::new(data)?,
        class_labels,
        class_means,
    })
}

/// Splits a fully labeled set into labeled ("Old") and unlabeled parts.
///
/// Classes are shuffled under `spec.seed`; the first
/// `ceil(labeled_class_fraction * #classes)` become labeled classes, and
/// `ceil(labeled_instance_fraction * size)` instances of each of them keep
/// their label.
pub fn make_gcd_split(embeddings: EmbeddingSet, class_labels: &[usize], spec: &SplitSpec) -> Result<GcdDataset> {
    spec.validate()?;
    if class_labels.len() != embeddings.count() {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings but {} class labels",
            embeddings.count(),
            class_labels.len()
        )));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in class_labels.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    if members.len() < 2 {
        return Err(Error::DegenerateSplit(format!(
            "need at least 2 distinct classes, found {}",
            members.len()
        )));
    }

    let mut rng = rng::stream_rng(spec.seed, Stream::Split, 0);
    let mut classes: Vec<usize> = members.keys().copied().collect();
    classes.shuffle(&mut rng);
    let num_old = ceil_fraction(spec.labeled_class_fraction, classes.len());

    let mut labels = vec![Label::Unlabeled; class_labels.len()];
    for &c in &classes[..num_old] {
        let mut idx = members[&c].clone();
        idx.shuffle(&mut rng);
        let take = ceil_fraction(spec.labeled_instance_fraction, idx.len());
        for &i in &idx[..take] {
            labels[i] = Label::Known(c);
        }
    }
    GcdDataset::new(embeddings, labels, class_labels.to_vec())
}

fn ceil_fraction(fraction: f64, n: usize) -> usize {
    // Guard against 0.5 * 10 landing on 5.000000000000001.
    let raw = fraction * n as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (k as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

impl EmbeddingFormat {
    /// Guess from the extension: `.csv` is CSV, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EmbeddingFormat::Csv,
            _ => EmbeddingFormat::Binary,
        }
    }
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSet> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    match format {
        EmbeddingFormat::Binary => read_binary(&mut reader),
        EmbeddingFormat::Csv => read_csv(reader),
    }
}

pub fn save_embeddings(path: &Path, set: &EmbeddingSet, format: EmbeddingFormat) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        EmbeddingFormat::Binary => write_binary(&mut w, set),
        EmbeddingFormat::Csv => write_csv(&mut w, set),
    }
    .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `DCCL`, version, `M`, `D` (little-endian `u32`) followed by the
/// row-major matrix as little-endian `f32`.
pub fn write_binary<W: Write>(w: &mut W, set: &EmbeddingSet) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(set.count() as u32).to_le_bytes())?;
    w.write_all(&(set.dim() as u32).to_le_bytes())?;
    for &x in set.data().iter() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(r: &mut R) -> Result<EmbeddingSet> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::MalformedHeader("file shorter than 16-byte header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::MalformedHeader("bad magic bytes".into()));
    }
    let word = |k: usize| u32::from_le_bytes(header[4 * k..4 * k + 4].try_into().unwrap());
    let (version, m, d) = (word(1), word(2) as usize, word(3) as usize);
    if version != FORMAT_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    if m == 0 || d == 0 {
        return Err(Error::MalformedHeader(format!("empty embedding set ({m}x{d})")));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io("<binary embeddings>", e))?;
    let expected = m * d * 4;
    if body.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "header declares {m}x{d} ({expected} bytes) but body has {} bytes",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let data = Array2::from_shape_vec((m, d), values).expect("length checked above");
    EmbeddingSet::new(data)
}

pub fn write_csv<W: Write>(w: &mut W, set: &EmbeddingSet) -> std::io::Result<()> {
    for row in set.data().rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<EmbeddingSet> {
    let mut values = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<csv embeddings>", e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let start = values.len();
        for field in line.split(',') {
            let x: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            values.push(x);
        }
        let width = values.len() - start;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::DimensionMismatch(format!(
                    "line {} has {width} columns, expected {d}",
                    n + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let dim = dim.ok_or_else(|| Error::MalformedHeader("empty CSV".into()))?;
    let data = Array2::from_shape_vec((rows, dim), values).expect("rows checked above");
    EmbeddingSet::new(data)
}

/// Reads `index,label` rows; `-1` is unlabeled and unlisted rows stay unlabeled.
pub fn load_labels(path: &Path, count: usize) -> Result<Vec<Label>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, count)
}

pub fn parse_labels(text: &str, count: usize) -> Result<Vec<Label>> {
    let mut labels = vec![Label::Unlabeled; count];
    let mut seen = vec![false; count];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: n + 1, msg };
        let (idx, lab) = line
            .split_once(',')
            .ok_or_else(|| parse_err(format!("expected `index,label`, got {line:?}")))?;
        let index: usize = idx
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad index {idx:?}")))?;
        let label: i64 = lab
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad label {lab:?}")))?;
        if index >= count {
            return Err(Error::IndexOutOfRange { index, count });
        }
        if std::mem::replace(&mut seen[index], true) {
            return Err(Error::DuplicateIndex(index));
        }
        labels[index] = match label {
            -1 => Label::Unlabeled,
            l if l >= 0 => Label::Known(l as usize),
            l => return Err(parse_err(format!("negative label {l} (only -1 allowed)"))),
        };
    }
    Ok(labels)
}

pub fn format_labels(labels: &[Label]) -> String {
    let mut out = String::new();
    for (i, l) in labels.iter().enumerate() {
        let v = match l {
            Label::Known(c) => *c as i64,
            Label::Unlabeled => -1,
        };
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

pub fn save_labels(path: &Path, labels: &[Label]) -> Result<()> {
    fs::write(path, format_labels(labels)).map_err(|e| Error::io(path, e))
}

/// Split manifest written next to generated data. Carries the ground truth
/// needed for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub split: SplitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticSpec>,
    pub num_classes: usize,
    pub labeled_classes: Vec<usize>,
    pub eval_labels: Vec<usize>,
}

impl SplitManifest {
    pub fn for_dataset(ds: &GcdDataset, split: SplitSpec, generator: Option<SyntheticSpec>) -> Self {
        Self {
            split,
            generator,
            num_classes: ds.true_num_classes.unwrap_or(0),
            labeled_classes: ds.labeled_classes.iter().copied().collect(),
            eval_labels: ds.eval_labels.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
