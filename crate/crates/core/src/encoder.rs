//! Small trainable encoder: a feature extractor and a projection head, both
//! tanh MLPs with L2-normalized outputs, plus SGD with momentum, a cosine
//! learning-rate schedule, feature-space augmentation and checkpoints.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMutD, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub extractor_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden: Vec<usize>,
    pub projection_dim: usize,
}

impl EncoderConfig {
    /// `input -> 64 -> 32` extractor and `32 -> 32 -> 128` head.
    pub fn with_input(input_dim: usize) -> Self {
        Self {
            input_dim,
            extractor_hidden: vec![64],
            feature_dim: 32,
            head_hidden: vec![32],
            projection_dim: 128,
        }
    }
}

/// Affine layer `y = x W^T + b`, with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Dense layers with tanh between consecutive layers (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
struct MlpCache {
    /// Input to every layer; for layers after the first this is a tanh output.
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    fn glorot(sizes: &[usize], rng: &mut rng::Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(h);
            h = if l + 1 < self.layers.len() { z.mapv(f64::tanh) } else { z };
        }
        (h, MlpCache { inputs })
    }

    /// Returns per-layer gradients and the gradient with respect to the input.
    fn backward(&self, cache: &MlpCache, upstream: Array2<f64>) -> (Vec<Dense>, Array2<f64>) {
        let mut grads = vec![];
        let mut g = upstream;
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            grads.push(Dense {
                weight: g.t().dot(input),
                bias: g.sum_axis(Axis(0)),
            });
            let mut g_in = g.dot(&self.layers[l].weight);
            if l > 0 {
                g_in.zip_mut_with(input, |gi, &a| *gi *= 1.0 - a * a);
            }
            g = g_in;
        }
        grads.reverse();
        (grads, g)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub extractor: Mlp,
    pub head: Mlp,
    version: u64,
}

impl EncoderParams {
    pub fn new(extractor: Mlp, head: Mlp) -> Result<Self> {
        let chain_ok = |m: &Mlp| !m.layers.is_empty() && m.layers.windows(2).all(|w| w[0].output_dim() == w[1].input_dim());
        if !chain_ok(&extractor) || !chain_ok(&head) || extractor.output_dim() != head.input_dim() {
            return Err(Error::ShapeMismatch("encoder layer shapes do not chain".into()));
        }
        Ok(Self {
            extractor,
            head,
            version: 0,
        })
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.feature_dim == 0 || cfg.projection_dim == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        let mut rng = rng::stream_rng(seed, rng::Stream::Init, 0);
        let ext: Vec<usize> = std::iter::once(cfg.input_dim)
            .chain(cfg.extractor_hidden.iter().copied())
            .chain(std::iter::once(cfg.feature_dim))
            .collect();
        let head: Vec<usize> = std::iter::once(cfg.feature_dim)
            .chain(cfg.head_hidden.iter().copied())
            .chain(std::iter::once(cfg.projection_dim))
            .collect();
        Self::new(Mlp::glorot(&ext, &mut rng), Mlp::glorot(&head, &mut rng))
    }

    /// Single identity layer for both networks.
    pub fn identity(dim: usize) -> Self {
        let eye = || Dense {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        };
        Self {
            extractor: Mlp { layers: vec![eye()] },
            head: Mlp { layers: vec![eye()] },
            version: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn projection_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// Bumped by every in-place update; forward caches remember it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_parameters(&self) -> usize {
        self.extractor
            .layers
            .iter()
            .chain(&self.head.layers)
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Mutable views of every tensor, extractor first, weight before bias.
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        self.version += 1;
        tensors_mut(&mut self.extractor, &mut self.head)
    }

    pub fn all_finite(&self) -> bool {
        self.extractor
            .layers
            .iter()
            .chain(&self.head.layers)
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }
}

fn tensors_mut<'a>(extractor: &'a mut Mlp, head: &'a mut Mlp) -> Vec<ArrayViewMutD<'a, f64>> {
    let mut out = Vec::new();
    for layer in extractor.layers.iter_mut().chain(head.layers.iter_mut()) {
        out.push(layer.weight.view_mut().into_dyn());
        out.push(layer.bias.view_mut().into_dyn());
    }
    out
}

/// Gradients shaped like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub extractor: Mlp,
    pub head: Mlp,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        let zero = |m: &Mlp| Mlp {
            layers: m.layers.iter().map(|l| Dense::zeros(l.input_dim(), l.output_dim())).collect(),
        };
        Self {
            extractor: zero(&params.extractor),
            head: zero(&params.head),
        }
    }

    pub fn accumulate(&mut self, other: &EncoderGrads) {
        for (a, b) in self
            .extractor
            .layers
            .iter_mut()
            .chain(self.head.layers.iter_mut())
            .zip(other.extractor.layers.iter().chain(&other.head.layers))
        {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        tensors_mut(&mut self.extractor, &mut self.head)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.extractor
            .layers
            .iter()
            .chain(&self.head.layers)
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    extractor: MlpCache,
    feature_norms: Array1<f64>,
    head: MlpCache,
    projection_norms: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Unit-norm extractor outputs.
    pub features: Array2<f64>,
    /// Unit-norm head outputs.
    pub projections: Array2<f64>,
    pub cache: ForwardCache,
}

fn normalize(raw: Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut out = raw;
    let mut norms = Array1::zeros(out.nrows());
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector(r));
        }
        row /= n;
        norms[r] = n;
    }
    Ok((out, norms))
}

/// Backpropagates through `u = x / |x|`: `(g - u (u . g)) / |x|` per row.
fn normalize_backward(unit: &Array2<f64>, norms: &Array1<f64>, upstream: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut g = upstream.to_owned();
    for ((mut row, u), &n) in g.rows_mut().into_iter().zip(unit.rows()).zip(norms) {
        let radial = row.dot(&u);
        row.zip_mut_with(&u, |gi, &ui| *gi = (*gi - ui * radial) / n);
    }
    g
}

pub fn forward(params: &EncoderParams, inputs: ArrayView2<'_, f64>) -> Result<ForwardOutput> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input width {} but encoder expects {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    let (raw_features, extractor) = params.extractor.forward(inputs);
    let (features, feature_norms) = normalize(raw_features)?;
    let (raw_proj, head) = params.head.forward(features.view());
    let (projections, projection_norms) = normalize(raw_proj)?;
    Ok(ForwardOutput {
        features,
        projections,
        cache: ForwardCache {
            version: params.version,
            extractor,
            feature_norms,
            head,
            projection_norms,
        },
    })
}

/// Unit-norm features only (no head), e.g. for clustering and evaluation.
pub fn extract_features(params: &EncoderParams, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input width {} but encoder expects {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    let (raw, _) = params.extractor.forward(inputs);
    Ok(normalize(raw)?.0)
}

/// Parameter gradients given upstream gradients with respect to the
/// normalized features and/or projections of `out`.
pub fn backward(
    params: &EncoderParams,
    out: &ForwardOutput,
    grad_features: Option<ArrayView2<'_, f64>>,
    grad_projections: Option<ArrayView2<'_, f64>>,
) -> Result<EncoderGrads> {
    let cache = &out.cache;
    if cache.version != params.version {
        return Err(Error::StaleCache {
            cache: cache.version,
            params: params.version,
        });
    }
    let n = out.features.nrows();
    let mut head_grads = EncoderGrads::zeros_like(params).head;
    let mut g_features = match grad_features {
        Some(g) if g.dim() != out.features.dim() => {
            return Err(Error::ShapeMismatch(format!(
                "feature gradient {:?} vs features {:?}",
                g.dim(),
                out.features.dim()
            )))
        }
        Some(g) => g.to_owned(),
        None => Array2::zeros((n, params.feature_dim())),
    };
    if let Some(gp) = grad_projections {
        if gp.dim() != out.projections.dim() {
            return Err(Error::ShapeMismatch(format!(
                "projection gradient {:?} vs projections {:?}",
                gp.dim(),
                out.projections.dim()
            )));
        }
        let g_raw = normalize_backward(&out.projections, &cache.projection_norms, gp);
        let (layers, g_in) = params.head.backward(&cache.head, g_raw);
        head_grads = Mlp { layers };
        g_features += &g_in;
    }
    let g_raw = normalize_backward(&out.features, &cache.feature_norms, g_features.view());
    let (layers, _) = params.extractor.backward(&cache.extractor, g_raw);
    Ok(EncoderGrads {
        extractor: Mlp { layers },
        head: head_grads,
    })
}

/// `base * (1 + cos(pi * epoch / max_epoch)) / 2`.
pub fn cosine_lr(base: f64, epoch: usize, max_epoch: usize) -> Result<f64> {
    if max_epoch == 0 {
        return Err(Error::invalid("max_epoch must be positive"));
    }
    if epoch > max_epoch {
        return Err(Error::invalid(format!("epoch {epoch} beyond max_epoch {max_epoch}")));
    }
    let phase = std::f64::consts::PI * epoch as f64 / max_epoch as f64;
    Ok(base * (1.0 + phase.cos()) / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    velocity: EncoderGrads,
    pub lr_extractor: f64,
    pub lr_head: f64,
    pub momentum: f64,
    pub epoch: usize,
    pub max_epoch: usize,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &EncoderParams, lr_extractor: f64, lr_head: f64, momentum: f64, max_epoch: usize) -> Self {
        Self {
            velocity: EncoderGrads::zeros_like(params),
            lr_extractor,
            lr_head,
            momentum,
            epoch: 0,
            max_epoch,
            step: 0,
        }
    }

    /// Current `(extractor, head)` rates under the cosine schedule.
    pub fn learning_rates(&self) -> Result<(f64, f64)> {
        Ok((
            cosine_lr(self.lr_extractor, self.epoch, self.max_epoch)?,
            cosine_lr(self.lr_head, self.epoch, self.max_epoch)?,
        ))
    }
}

/// `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_step(params: &mut EncoderParams, grads: &EncoderGrads, opt: &mut OptimState) -> Result<()> {
    let (lr_e, lr_h) = opt.learning_rates()?;
    let momentum = opt.momentum;
    let n_ext = params.extractor.layers.len();
    let update = |p: &mut Dense, v: &mut Dense, g: &Dense, lr: f64| {
        v.weight.zip_mut_with(&g.weight, |vi, &gi| *vi = momentum * *vi + gi);
        v.bias.zip_mut_with(&g.bias, |vi, &gi| *vi = momentum * *vi + gi);
        p.weight.scaled_add(-lr, &v.weight);
        p.bias.scaled_add(-lr, &v.bias);
    };
    let velocity = &mut opt.velocity;
    for (l, ((p, v), g)) in params
        .extractor
        .layers
        .iter_mut()
        .chain(params.head.layers.iter_mut())
        .zip(velocity.extractor.layers.iter_mut().chain(velocity.head.layers.iter_mut()))
        .zip(grads.extractor.layers.iter().chain(&grads.head.layers))
        .enumerate()
    {
        if p.weight.dim() != g.weight.dim() || p.bias.dim() != g.bias.dim() {
            return Err(Error::ShapeMismatch(format!("gradient shape mismatch in layer {l}")));
        }
        update(p, v, g, if l < n_ext { lr_e } else { lr_h });
    }
    params.version += 1;
    opt.step += 1;
    Ok(())
}

/// Two independently perturbed copies of `inputs`: Gaussian noise with
/// standard deviation `strength`, then each coordinate zeroed with
/// probability `strength / 2`.
pub fn augment(inputs: ArrayView2<'_, f64>, strength: f64, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    augment_with(inputs, strength, (strength / 2.0).min(1.0), seed)
}

pub fn augment_with(inputs: ArrayView2<'_, f64>, noise_sigma: f64, dropout: f64, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("augmentation strength must be non-negative, got {noise_sigma}")));
    }
    if !(0.0..=1.0).contains(&dropout) {
        return Err(Error::invalid(format!("dropout probability must lie in [0, 1], got {dropout}")));
    }
    let mut rng = rng::seeded(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut view = || {
        let mut v = inputs.to_owned();
        if noise_sigma == 0.0 && dropout == 0.0 {
            return v;
        }
        v.mapv_inplace(|x| {
            let y = x + noise.sample(&mut rng);
            if dropout > 0.0 && rng.random::<f64>() < dropout {
                0.0
            } else {
                y
            }
        });
        v
    };
    let a = view();
    let b = view();
    Ok((a, b))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"DCCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Layout: magic `DCCK`, `u32` version, `u32` extractor layer count, `u32`
/// head layer count, then per layer `u32` out, `u32` in, the weight matrix
/// (row-major) and the bias, all values little-endian `f64`.
pub fn write_checkpoint<W: Write>(w: &mut W, params: &EncoderParams) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.extractor.layers.len() as u32).to_le_bytes())?;
    w.write_all(&(params.head.layers.len() as u32).to_le_bytes())?;
    for layer in params.extractor.layers.iter().chain(&params.head.layers) {
        w.write_all(&(layer.output_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.input_dim() as u32).to_le_bytes())?;
        for x in layer.weight.iter().chain(layer.bias.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<EncoderParams> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let u32_at = |r: &mut R| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
        Ok(u32::from_le_bytes(b))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    if u32_at(r)? != CHECKPOINT_VERSION {
        return Err(bad("unsupported version"));
    }
    let n_ext = u32_at(r)? as usize;
    let n_head = u32_at(r)? as usize;
    let mut layers = Vec::with_capacity(n_ext + n_head);
    for _ in 0..n_ext + n_head {
        let out = u32_at(r)? as usize;
        let inp = u32_at(r)? as usize;
        let mut buf = vec![0u8; 8 * (out * inp + out)];
        r.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
        let vals: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let weight = Array2::from_shape_vec((out, inp), vals[..out * inp].to_vec()).expect("sized above");
        let bias = Array1::from(vals[out * inp..].to_vec());
        layers.push(Dense { weight, bias });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io("<checkpoint>", e))? != 0 {
        return Err(bad("trailing bytes after last tensor"));
    }
    let head = layers.split_off(n_ext);
    let params = EncoderParams::new(Mlp { layers }, Mlp { layers: head })?;
    if !params.all_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &EncoderParams) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, params).map_err(|e| Error::io(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error, DEFAULT_STEP};
    use ndarray::array;

    fn small() -> EncoderParams {
        let cfg = EncoderConfig {
            input_dim: 8,
            extractor_hidden: vec![7],
            feature_dim: 5,
            head_hidden: vec![6],
            projection_dim: 4,
        };
        EncoderParams::init(&cfg, 3).unwrap()
    }

    #[test]
    fn identity_forward() {
        let p = EncoderParams::identity(3);
        let x = array![[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]];
        let out = forward(&p, x.view()).unwrap();
        assert_eq!(out.features, x);
        assert_eq!(out.projections, x);
    }

    #[test]
    fn outputs_are_unit_norm() {
        let p = small();
        let x = Array2::from_shape_fn((5, 8), |(i, j)| ((i * 3 + j) as f64).sin() * 3.0);
        let out = forward(&p, x.view()).unwrap();
        for row in out.features.rows().into_iter().chain(out.projections.rows()) {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_network_errors() {
        let mut p = small();
        for mut t in p.tensors_mut() {
            t.fill(0.0);
        }
        assert!(matches!(forward(&p, Array2::ones((2, 8)).view()), Err(Error::ZeroVector(0))));
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(forward(&small(), Array2::ones((2, 3)).view()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = small();
        let x = Array2::from_shape_fn((4, 8), |(i, j)| (i as f64 - j as f64) * 0.1 + 0.05);
        let out = forward(&p, x.view()).unwrap();
        let g = backward(&p, &out, Some(Array2::zeros((4, 5)).view()), Some(Array2::zeros((4, 4)).view())).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut p = small();
        let x = Array2::ones((2, 8));
        let out = forward(&p, x.view()).unwrap();
        let g = EncoderGrads::zeros_like(&p);
        let mut opt = OptimState::new(&p, 0.1, 0.1, 0.9, 10);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        assert!(matches!(backward(&p, &out, None, None), Err(Error::StaleCache { .. })));
    }

    /// For one linear layer with normalized output, the weight gradient is
    /// `G^T X` with `G` the projected upstream gradient.
    #[test]
    fn single_layer_closed_form() {
        let w = array![[1.0, 0.5], [-0.3, 2.0]];
        let extractor = Mlp {
            layers: vec![Dense {
                weight: w.clone(),
                bias: array![0.1, -0.2],
            }],
        };
        let head = Mlp {
            layers: vec![Dense {
                weight: Array2::eye(2),
                bias: Array1::zeros(2),
            }],
        };
        let p = EncoderParams::new(extractor, head).unwrap();
        let x = array![[1.0, 2.0], [-0.5, 0.7], [0.3, 0.3]];
        let up = array![[0.2, -1.0], [0.5, 0.5], [1.0, 0.0]];
        let out = forward(&p, x.view()).unwrap();
        let g = backward(&p, &out, Some(up.view()), None).unwrap();

        let z = x.dot(&w.t()) + &array![0.1, -0.2];
        let mut gz = Array2::<f64>::zeros((3, 2));
        for r in 0..3 {
            let n = z.row(r).dot(&z.row(r)).sqrt();
            let u = z.row(r).mapv(|v| v / n);
            let radial = u.dot(&up.row(r));
            for c in 0..2 {
                gz[[r, c]] = (up[[r, c]] - u[c] * radial) / n;
            }
        }
        let expected_w = gz.t().dot(&x);
        let expected_b = gz.sum_axis(Axis(0));
        assert!((&g.extractor.layers[0].weight - &expected_w).iter().all(|d| d.abs() < 1e-14));
        assert!((&g.extractor.layers[0].bias - &expected_b).iter().all(|d| d.abs() < 1e-14));
        assert!(g.head.layers[0].weight.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let mut p = small();
        let mut rng = rng::seeded(11);
        let x = Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0..1.0));
        let gf = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
        let gp = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        // Linear functional of the outputs, so its gradient is exactly (gf, gp).
        let objective = |p: &EncoderParams| {
            let out = forward(p, x.view()).unwrap();
            (&out.features * &gf).sum() + (&out.projections * &gp).sum()
        };
        let out = forward(&p, x.view()).unwrap();
        let analytic = backward(&p, &out, Some(gf.view()), Some(gp.view())).unwrap();
        let analytic_flat = analytic.flat();

        let mut offset = 0;
        let n_tensors = p.tensors_mut().len();
        for t in 0..n_tensors {
            let shape = p.tensors_mut()[t].shape().to_vec();
            let len: usize = shape.iter().product();
            let values: Vec<f64> = p.tensors_mut()[t].iter().copied().collect();
            let x0 = Array2::from_shape_vec((1, len), values).unwrap();
            let fd = central_difference(&x0, DEFAULT_STEP, |probe| {
                let mut q = p.clone();
                for (dst, src) in q.tensors_mut()[t].iter_mut().zip(probe.iter()) {
                    *dst = *src;
                }
                objective(&q)
            });
            let an = Array2::from_shape_vec((1, len), analytic_flat[offset..offset + len].to_vec()).unwrap();
            let err = max_relative_error(&an, &fd, 1e-6);
            assert!(err < 1e-6, "tensor {t}: relative error {err}");
            offset += len;
        }
    }

    #[test]
    fn sgd_vanilla_step() {
        let mut p = EncoderParams::identity(2);
        let mut g = EncoderGrads::zeros_like(&p);
        g.extractor.layers[0].weight = array![[0.5, -1.0], [0.25, 2.0]];
        let before = p.extractor.layers[0].weight.clone();
        let mut opt = OptimState::new(&p, 1.0, 1.0, 0.0, 10);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        assert_eq!(p.extractor.layers[0].weight, &before - &g.extractor.layers[0].weight);
        assert_eq!(p.head, EncoderParams::identity(2).head);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = small();
        let before = p.clone();
        let g = EncoderGrads::zeros_like(&p);
        let mut opt = OptimState::new(&p, 0.01, 0.1, 0.9, 10);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        assert_eq!(p.extractor, before.extractor);
        assert_eq!(p.head, before.head);
    }

    #[test]
    fn momentum_two_steps() {
        let mut p = EncoderParams::identity(1);
        let mut g = EncoderGrads::zeros_like(&p);
        let mut opt = OptimState::new(&p, 0.1, 0.1, 0.9, 10);
        g.extractor.layers[0].bias[0] = 1.0;
        sgd_step(&mut p, &g, &mut opt).unwrap();
        g.extractor.layers[0].bias[0] = 2.0;
        sgd_step(&mut p, &g, &mut opt).unwrap();
        // v1 = 1, p1 = -0.1; v2 = 0.9 + 2 = 2.9, p2 = -0.1 - 0.29 = -0.39.
        assert!((p.extractor.layers[0].bias[0] + 0.39).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(0.1, 0, 200).unwrap(), 0.1);
        assert!(cosine_lr(0.1, 200, 200).unwrap().abs() < 1e-17);
        assert!((cosine_lr(0.1, 100, 200).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0.1, 0, 0).is_err());
    }

    #[test]
    fn augmentation() {
        let x = Array2::from_shape_fn((10, 4), |(i, j)| (i + j) as f64);
        let (a, b) = augment(x.view(), 0.0, 1).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, x);
        assert_eq!(augment(x.view(), 0.3, 5).unwrap(), augment(x.view(), 0.3, 5).unwrap());
        assert_ne!(augment(x.view(), 0.3, 5).unwrap().0, augment(x.view(), 0.3, 6).unwrap().0);
    }

    #[test]
    fn augmentation_noise_statistics() {
        let mut rng = rng::seeded(17);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = Array2::from_shape_fn((10_000, 1), |_| normal.sample(&mut rng));
        let (a, b) = augment_with(x.view(), 0.1, 0.0, 9).unwrap();
        let diff = &a - &b;
        let mean = diff.mean().unwrap();
        let sd = (diff.mapv(|d| (d - mean).powi(2)).sum() / (diff.len() - 1) as f64).sqrt();
        let target = 2f64.sqrt() * 0.1;
        assert!((sd - target).abs() / target < 0.2, "sd {sd}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = small();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &p).unwrap();
        let q = read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(p.extractor, q.extractor);
        assert_eq!(p.head, q.head);
        assert!(read_checkpoint(&mut &bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
    }
}
