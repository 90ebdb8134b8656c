//! A small multilayer network with hand-written backpropagation.
//!
//! Layout: a rectified encoder, a two-layer projection head followed by L2
//! normalization, and a linear classifier head on the encoder output. All
//! tensors live in one flat list so optimizers, moving averages and
//! checkpoints can treat them uniformly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Floor used inside logarithms and normalizations.
pub const NUMERIC_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub projection_hidden: usize,
    pub embedding_dim: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, classes: usize) -> Self {
        Architecture {
            input_dim,
            encoder_widths: vec![64, 64],
            projection_hidden: 64,
            embedding_dim: 128,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.projection_hidden, self.embedding_dim, self.classes];
        if dims.contains(&0) || self.encoder_widths.contains(&0) {
            return Err(Error::Architecture(format!("zero-sized layer in {self:?}")));
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        self.encoder_widths.last().copied().unwrap_or(self.input_dim)
    }

    /// `(name, rows, cols)` of every tensor, in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &w) in self.encoder_widths.iter().enumerate() {
            shapes.push((format!("enc{i}.weight"), w, fan_in));
            shapes.push((format!("enc{i}.bias"), 1, w));
            fan_in = w;
        }
        let feat = self.feature_dim();
        shapes.push(("proj0.weight".into(), self.projection_hidden, feat));
        shapes.push(("proj0.bias".into(), 1, self.projection_hidden));
        shapes.push(("proj1.weight".into(), self.embedding_dim, self.projection_hidden));
        shapes.push(("proj1.bias".into(), 1, self.embedding_dim));
        shapes.push(("cls.weight".into(), self.classes, feat));
        shapes.push(("cls.bias".into(), 1, self.classes));
        shapes
    }

    /// Inverse of the `arch …` header line.
    pub fn from_description(line: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Architecture(format!("`{line}`: {reason}"));
        let mut fields = line.split_whitespace();
        if fields.next() != Some("arch") {
            return Err(bad("expected an `arch` line"));
        }
        let mut values = std::collections::HashMap::new();
        for field in fields {
            let (k, v) = field.split_once('=').ok_or_else(|| bad("field without `=`"))?;
            values.insert(k, v);
        }
        let get = |k: &str| values.get(k).copied().ok_or_else(|| bad(&format!("missing `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(&format!("bad `{k}`"))) };
        let encoder = get("encoder")?;
        let encoder_widths = if encoder.is_empty() {
            Vec::new()
        } else {
            encoder
                .split(',')
                .map(|w| w.parse().map_err(|_| bad("bad `encoder`")))
                .collect::<Result<Vec<usize>>>()?
        };
        let arch = Architecture {
            input_dim: num("input")?,
            encoder_widths,
            projection_hidden: num("projection_hidden")?,
            embedding_dim: num("embedding")?,
            classes: num("classes")?,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn describe(&self) -> String {
        let widths: Vec<String> = self.encoder_widths.iter().map(ToString::to_string).collect();
        format!(
            "arch input={} encoder={} projection_hidden={} embedding={} classes={}",
            self.input_dim,
            widths.join(","),
            self.projection_hidden,
            self.embedding_dim,
            self.classes
        )
    }
}

/// Network weights, or gradients with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    tensors: Vec<Array2<f64>>,
}

impl NetworkParams {
    /// Fan-in uniform initialization `U(−1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let tensors = arch
            .tensor_shapes()
            .into_iter()
            .enumerate()
            .map(|(t, (name, rows, cols))| {
                if name.ends_with("bias") {
                    Array2::zeros((rows, cols))
                } else {
                    let bound = 1.0 / (cols as f64).sqrt();
                    let mut rng = rng::stream(seed, Domain::Init, t as u64, 0);
                    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
                }
            })
            .collect();
        Ok(NetworkParams {
            arch: arch.clone(),
            tensors,
        })
    }

    pub fn zeros_like(other: &NetworkParams) -> Self {
        NetworkParams {
            arch: other.arch.clone(),
            tensors: other.tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn depth(&self) -> usize {
        self.arch.encoder_widths.len()
    }

    fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.tensors[2 * layer]
    }

    fn bias(&self, layer: usize) -> &Array2<f64> {
        &self.tensors[2 * layer + 1]
    }

    /// Zeroes the classifier head so every input maps to the uniform distribution.
    pub fn zero_classifier(&mut self) {
        let cls = self.depth() + 2;
        self.tensors[2 * cls].fill(0.0);
        self.tensors[2 * cls + 1].fill(0.0);
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.scaled_add(scale, b);
        }
    }

    /// Forward pass over a batch (one instance per row).
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{} input features", self.arch.input_dim),
                actual: x.ncols().to_string(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut activations = vec![x.to_owned()];
        for layer in 0..self.depth() {
            let pre = dense(activations[layer].view(), self.weight(layer), self.bias(layer));
            activations.push(pre.mapv(relu));
        }
        let features = activations.last().expect("input present").view();
        let p = self.depth();
        let hidden = dense(features, self.weight(p), self.bias(p)).mapv(relu);
        let embedding = dense(hidden.view(), self.weight(p + 1), self.bias(p + 1));
        let norms: Array1<f64> = embedding
            .outer_iter()
            .map(|r| r.dot(&r).sqrt().max(NUMERIC_FLOOR))
            .collect();
        let unit = &embedding / &norms.view().insert_axis(Axis(1));
        let logits = dense(features, self.weight(p + 2), self.bias(p + 2));
        let probs = softmax_rows(logits.view());
        Ok(ForwardCache {
            activations,
            hidden,
            norms,
            unit,
            logits,
            probs,
        })
    }

    /// Single-instance forward: `(logits, softmax, unit embedding)`.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
        let cache = self.forward_batch(x.insert_axis(Axis(0)))?;
        Ok((
            cache.logits.row(0).to_owned(),
            cache.probs.row(0).to_owned(),
            cache.unit.row(0).to_owned(),
        ))
    }

    /// Gradients of a loss given its derivatives with respect to the logits
    /// and to the unit embeddings of a cached batch.
    pub fn backward(&self, cache: &ForwardCache, d_logits: ArrayView2<'_, f64>, d_unit: ArrayView2<'_, f64>) -> Result<NetworkParams> {
        let b = cache.batch_size();
        if d_logits.dim() != (b, self.arch.classes) || d_unit.dim() != (b, self.arch.embedding_dim) {
            return Err(Error::DimensionMismatch {
                expected: format!("({b}, {}) and ({b}, {})", self.arch.classes, self.arch.embedding_dim),
                actual: format!("{:?} and {:?}", d_logits.dim(), d_unit.dim()),
            });
        }
        let mut grads = NetworkParams::zeros_like(self);
        let p = self.depth();
        let features = cache.activations[p].view();

        // d(e/‖e‖) = (I − u uᵀ)/‖e‖
        let radial: Array1<f64> = cache
            .unit
            .outer_iter()
            .zip(d_unit.outer_iter())
            .map(|(u, g)| u.dot(&g))
            .collect();
        let mut d_embedding = (&d_unit - &cache.unit * &radial.view().insert_axis(Axis(1)))
            / cache.norms.view().insert_axis(Axis(1));
        // a zero embedding has no direction to differentiate
        for (mut row, &norm) in d_embedding.outer_iter_mut().zip(cache.norms.iter()) {
            if norm <= NUMERIC_FLOOR {
                row.fill(0.0);
            }
        }

        accumulate_dense(&mut grads, p + 1, d_embedding.view(), cache.hidden.view());
        let mut d_hidden = d_embedding.dot(self.weight(p + 1));
        d_hidden.zip_mut_with(&cache.hidden, |g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
        accumulate_dense(&mut grads, p, d_hidden.view(), features);
        let mut d_features = d_hidden.dot(self.weight(p));

        accumulate_dense(&mut grads, p + 2, d_logits, features);
        d_features += &d_logits.dot(self.weight(p + 2));

        let mut upstream = d_features;
        for layer in (0..p).rev() {
            upstream.zip_mut_with(&cache.activations[layer + 1], |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            accumulate_dense(&mut grads, layer, upstream.view(), cache.activations[layer].view());
            if layer > 0 {
                upstream = upstream.dot(self.weight(layer));
            }
        }
        Ok(grads)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// `arch …` line, then per tensor a `name,rows,cols` header and its rows.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.arch.describe());
        for ((name, _, _), t) in self.arch.tensor_shapes().iter().zip(&self.tensors) {
            write_tensor(&mut out, name, t.view());
        }
        out
    }

    /// Parses [`NetworkParams::to_text`] and checks it against `expected`.
    pub fn from_text(text: &str, expected: &Architecture, path: &Path) -> Result<Self> {
        let mut reader = TensorReader::new(text, path);
        let params = Self::read(&mut reader, path)?;
        if params.arch != *expected {
            return Err(Error::Architecture(format!(
                "{}: checkpoint has `{}`, expected `{}`",
                path.display(),
                params.arch.describe(),
                expected.describe()
            )));
        }
        Ok(params)
    }

    /// Reads the `arch …` line and the tensors it announces.
    pub(crate) fn read(reader: &mut TensorReader<'_>, path: &Path) -> Result<Self> {
        let (line, header) = reader.next_line().ok_or_else(|| Error::parse(path, 1, "empty checkpoint"))?;
        let arch = Architecture::from_description(header).map_err(|e| Error::parse(path, line, e.to_string()))?;
        let mut tensors = Vec::new();
        for (name, rows, cols) in arch.tensor_shapes() {
            tensors.push(reader.tensor(&name, rows, cols)?);
        }
        Ok(NetworkParams { arch, tensors })
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn dense(x: ArrayView2<'_, f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

fn accumulate_dense(grads: &mut NetworkParams, layer: usize, upstream: ArrayView2<'_, f64>, input: ArrayView2<'_, f64>) {
    grads.tensors[2 * layer] += &upstream.t().dot(&input);
    grads.tensors[2 * layer + 1] += &upstream.sum_axis(Axis(0)).insert_axis(Axis(0));
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    softmax_rows(logits.insert_axis(Axis(0))).row(0).to_owned()
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by the output of every encoder layer.
    activations: Vec<Array2<f64>>,
    hidden: Array2<f64>,
    norms: Array1<f64>,
    pub unit: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.logits.nrows()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("input present").view()
    }
}

/// SGD with heavy-ball momentum, coupled weight decay and a cosine schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Array2<f64>>,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_epochs: usize,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams, base_lr: f64, momentum: f64, weight_decay: f64, total_epochs: usize) -> Self {
        OptimizerState {
            velocity: params.tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
            base_lr,
            momentum,
            weight_decay,
            total_epochs: total_epochs.max(1),
        }
    }

    /// `base · ½ (1 + cos(π t / T))`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let t = epoch.min(self.total_epochs) as f64 / self.total_epochs as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }

    /// `v ← μ v + g + λ_wd p`, `p ← p − lr(epoch) v`.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, epoch: usize) -> Result<()> {
        if params.tensors.len() != self.velocity.len() || grads.tensors.len() != self.velocity.len() {
            return Err(Error::Architecture("optimizer state does not match parameters".into()));
        }
        let lr = self.learning_rate(epoch);
        for ((p, g), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(self.velocity.iter_mut()) {
            if p.dim() != g.dim() || p.dim() != v.dim() {
                return Err(Error::Architecture("gradient shape mismatch".into()));
            }
            v.zip_mut_with(g, |v, &g| *v = self.momentum * *v + g);
            v.scaled_add(self.weight_decay, p);
            p.scaled_add(-lr, v);
        }
        Ok(())
    }
}

/// Momentum copy of the query network producing key embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyEncoder {
    pub params: NetworkParams,
}

impl KeyEncoder {
    pub fn from_query(query: &NetworkParams) -> Self {
        KeyEncoder { params: query.clone() }
    }

    /// `key ← m · key + (1 − m) · query`.
    pub fn ema_update(&mut self, query: &NetworkParams, m: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::arg("ema momentum", format!("{m} is outside [0, 1]")));
        }
        for (k, q) in self.params.tensors.iter_mut().zip(&query.tensors) {
            k.zip_mut_with(q, |k, &q| *k = m * *k + (1.0 - m) * q);
        }
        Ok(())
    }
}

/// The two stochastic views of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Query,
    Key,
}

/// Additive Gaussian noise followed by independent coordinate masking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub noise_std: f64,
    pub mask_prob: f64,
}

impl AugmentationSpec {
    pub const IDENTITY: AugmentationSpec = AugmentationSpec {
        noise_std: 0.0,
        mask_prob: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::arg("noise_std", format!("{} is negative", self.noise_std)));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::arg("mask_prob", format!("{} is outside [0, 1)", self.mask_prob)));
        }
        Ok(())
    }
}

/// One augmented view of `x`, keyed by `(seed, view, step, instance)`.
pub fn augment(x: ArrayView1<'_, f64>, spec: &AugmentationSpec, seed: u64, view: View, step: u64, instance: u64) -> Array1<f64> {
    if spec.noise_std == 0.0 && spec.mask_prob == 0.0 {
        return x.to_owned();
    }
    let domain = match view {
        View::Query => Domain::AugmentQuery,
        View::Key => Domain::AugmentKey,
    };
    let mut rng = rng::stream(seed, domain, step, instance);
    x.iter()
        .map(|&v| {
            let noise: f64 = rng.sample(StandardNormal);
            let keep: f64 = rng.gen();
            if keep < spec.mask_prob {
                0.0
            } else {
                v + spec.noise_std * noise
            }
        })
        .collect()
}

pub(crate) fn write_tensor(out: &mut String, name: &str, t: ArrayView2<'_, f64>) {
    let _ = writeln!(out, "{name},{},{}", t.nrows(), t.ncols());
    for row in t.outer_iter() {
        let values: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
}

/// Line-oriented reader for the `name,rows,cols` tensor format.
pub(crate) struct TensorReader<'a> {
    lines: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    path: &'a Path,
}

impl<'a> TensorReader<'a> {
    pub(crate) fn new(text: &'a str, path: &'a Path) -> Self {
        let lines: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        TensorReader {
            lines: lines.peekable(),
            path,
        }
    }

    pub(crate) fn next_line(&mut self) -> Option<(usize, &'a str)> {
        self.lines.next()
    }

    /// Row count announced by the next `name,rows,cols` header, without consuming it.
    pub(crate) fn peek_rows(&mut self, name: &str) -> Result<usize> {
        let path = self.path;
        let &(line, header) = self
            .lines
            .peek()
            .ok_or_else(|| Error::parse(path, 0, format!("missing tensor `{name}`")))?;
        let mut fields = header.split(',').map(str::trim);
        match (fields.next(), fields.next().map(str::parse::<usize>)) {
            (Some(n), Some(Ok(rows))) if n == name => Ok(rows),
            _ => Err(Error::parse(path, line, format!("expected tensor `{name}`, found `{header}`"))),
        }
    }

    pub(crate) fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let path = self.path;
        let (line, header) = self
            .next_line()
            .ok_or_else(|| Error::parse(path, 0, format!("missing tensor `{name}`")))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        if fields.len() != 3 || fields[0] != name {
            return Err(Error::parse(path, line, format!("expected header `{name},{rows},{cols}`, found `{header}`")));
        }
        let shape: (usize, usize) = (
            fields[1].parse().map_err(|_| Error::parse(path, line, "bad row count"))?,
            fields[2].parse().map_err(|_| Error::parse(path, line, "bad column count"))?,
        );
        if shape != (rows, cols) {
            return Err(Error::Architecture(format!(
                "{}:{line}: tensor `{name}` is {}x{}, expected {rows}x{cols}",
                path.display(),
                shape.0,
                shape.1
            )));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line, row) = self
                .next_line()
                .ok_or_else(|| Error::parse(path, line, format!("tensor `{name}` is truncated")))?;
            let before = values.len();
            for v in row.split_whitespace() {
                values.push(v.parse::<f64>().map_err(|e| Error::parse(path, line, format!("`{v}`: {e}")))?);
            }
            if values.len() - before != cols {
                return Err(Error::parse(path, line, format!("expected {cols} values")));
            }
        }
        Ok(Array2::from_shape_vec((rows, cols), values).expect("shape checked"))
    }
}
