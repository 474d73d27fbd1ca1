//! A small MLP classifier: rectified dense feature layers followed by a linear
//! softmax classifier. The two parameter groups can be frozen independently.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "GPMD"               4 bytes
//! version      u32     = 1
//! layer count  u32     feature layers + 1 (the classifier is last)
//! per layer    u32 in, u32 out
//! parameters   f64     per layer: out x in weights row-major, then out biases
//! ```

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GPMD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Fully connected layer `y = W x + b` with `W` stored `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    inputs: usize,
    outputs: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::ShapeMismatch("layer with zero width".into()));
        }
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::ShapeMismatch(format!(
                "{} weights and {} biases for a {inputs}->{outputs} layer",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters"));
        }
        Ok(Dense { inputs, outputs, weights, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    /// Uniform in `±√(6 / fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
        Dense { inputs, outputs, weights, bias: vec![T::zero(); outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn params(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    /// `x` is `n x inputs` row-major; returns `n x outputs`.
    fn apply(&self, x: &[T], n: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(n * self.outputs);
        for row in x.chunks_exact(self.inputs).take(n) {
            for o in 0..self.outputs {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                out.push(self.bias[o] + w.iter().zip(row).map(|(&a, &b)| a * b).sum::<T>());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrozenGroups {
    /// Feature sub-network parameters.
    pub features: bool,
    pub classifier: bool,
}

impl FrozenGroups {
    pub const NONE: FrozenGroups = FrozenGroups { features: false, classifier: false };
    pub const FEATURES: FrozenGroups = FrozenGroups { features: true, classifier: false };
    pub const CLASSIFIER: FrozenGroups = FrozenGroups { features: false, classifier: true };
    pub const ALL: FrozenGroups = FrozenGroups { features: true, classifier: true };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Widths of the hidden feature layers, excluding the final feature layer.
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::config("model layer widths must be positive"));
        }
        Ok(())
    }
}

/// Outputs of one forward pass; all matrices have one row per input row.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    pub features: Matrix<T>,
    pub logits: Matrix<T>,
    pub scores: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    layers: Vec<Dense<T>>,
    classifier: Dense<T>,
    frozen: FrozenGroups,
}

impl<T: Scalar> Model<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut widths = vec![cfg.input_dim];
        widths.extend(&cfg.hidden);
        widths.push(cfg.feature_dim);
        let layers = widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        let classifier = Dense::init(cfg.feature_dim, cfg.classes, rng);
        Ok(Model { layers, classifier, frozen: FrozenGroups::NONE })
    }

    pub fn from_layers(layers: Vec<Dense<T>>, classifier: Dense<T>) -> Result<Self> {
        let mut width = layers.first().map_or(classifier.inputs, |l| l.inputs);
        for l in layers.iter().chain(std::iter::once(&classifier)) {
            if l.inputs != width {
                return Err(Error::DimensionMismatch { expected: width, found: l.inputs });
            }
            width = l.outputs;
        }
        Ok(Model { layers, classifier, frozen: FrozenGroups::NONE })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(self.classifier.inputs, |l| l.inputs)
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.inputs
    }

    pub fn classes(&self) -> usize {
        self.classifier.outputs
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn classifier(&self) -> &Dense<T> {
        &self.classifier
    }

    pub fn frozen(&self) -> FrozenGroups {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: FrozenGroups) {
        self.frozen = frozen;
    }

    pub fn feature_params(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    pub fn classifier_params(&self) -> Vec<T> {
        self.classifier.params().copied().collect()
    }

    /// Feature parameters followed by classifier parameters.
    pub fn params(&self) -> Vec<T> {
        let mut p = self.feature_params();
        p.extend(self.classifier_params());
        p
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum::<usize>() + self.classifier.param_count()
    }

    /// Overwrites all parameters in [`Model::params`] order.
    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::DimensionMismatch { expected: self.param_count(), found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        let slots = self.layers.iter_mut().chain(std::iter::once(&mut self.classifier)).flat_map(Dense::params_mut);
        for (p, &v) in slots.zip(values) {
            *p = v;
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Per-layer activations, starting with the input itself.
    fn activations(&self, x: &Matrix<T>) -> Vec<Vec<T>> {
        let n = x.rows();
        let mut acts = vec![x.as_slice().to_vec()];
        for l in &self.layers {
            let mut a = l.apply(acts.last().expect("non-empty"), n);
            for v in &mut a {
                *v = v.max(T::zero());
            }
            acts.push(a);
        }
        acts
    }

    /// Feature embeddings `f(x)`.
    pub fn embed(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let z = self.activations(x).pop().expect("non-empty");
        Matrix::new(x.rows(), self.feature_dim(), z)
    }

    pub fn logits_from_features(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        if z.cols() != self.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "features have {} columns, classifier expects {}",
                z.cols(),
                self.feature_dim()
            )));
        }
        Matrix::new(z.rows(), self.classes(), self.classifier.apply(z.as_slice(), z.rows()))
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Forward<T>> {
        let features = self.embed(x)?;
        let logits = self.logits_from_features(&features)?;
        let scores = softmax(&logits);
        Ok(Forward { features, logits, scores })
    }

    /// Arg-max class per row (lowest index on ties).
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<u32>> {
        Ok(argmax_rows(&self.logits_from_features(&self.embed(x)?)?))
    }

    pub fn predict_features(&self, z: &Matrix<T>) -> Result<Vec<u32>> {
        Ok(argmax_rows(&self.logits_from_features(z)?))
    }

    /// Mean cross-entropy and its gradient for the groups in `which`.
    ///
    /// Gradients of groups outside `which` are left empty.
    pub fn loss_and_gradients(&self, x: &Matrix<T>, labels: &[u32], which: FrozenGroups) -> Result<(T, Gradients<T>)> {
        self.check_input(x)?;
        let acts = self.activations(x);
        self.backprop(acts, labels, which)
    }

    /// Same as [`Model::loss_and_gradients`] starting from precomputed features;
    /// only the classifier gradient is produced.
    pub fn classifier_loss_and_gradients(&self, z: &Matrix<T>, labels: &[u32]) -> Result<(T, Gradients<T>)> {
        if z.cols() != self.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "features have {} columns, classifier expects {}",
                z.cols(),
                self.feature_dim()
            )));
        }
        let mut acts = vec![Vec::new(); self.layers.len()];
        acts.push(z.as_slice().to_vec());
        self.backprop(acts, labels, FrozenGroups::FEATURES)
    }

    /// `acts[0..=L]`; `which` marks groups whose gradient is NOT wanted.
    fn backprop(&self, acts: Vec<Vec<T>>, labels: &[u32], skip: FrozenGroups) -> Result<(T, Gradients<T>)> {
        let z = acts.last().expect("non-empty");
        let fdim = self.feature_dim();
        let n = z.len() / fdim;
        if n == 0 {
            return Err(Error::EmptyInput("training batch"));
        }
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!("{n} rows for {} labels", labels.len())));
        }
        let c = self.classes();
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Error::UnknownClass(bad));
        }
        let logits = self.classifier.apply(z, n);
        let inv_n = T::one() / T::from_usize(n).expect("batch size fits the scalar type");
        let mut loss = T::zero();
        // g = (softmax - onehot) / n
        let mut g = vec![T::zero(); n * c];
        for i in 0..n {
            let row = &logits[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + total.ln();
            let y = labels[i] as usize;
            loss += lse - row[y];
            for k in 0..c {
                let p = (row[k] - lse).exp();
                g[i * c + k] = (p - if k == y { T::one() } else { T::zero() }) * inv_n;
            }
        }
        let loss = loss * inv_n;

        let mut grads = Gradients { layers: Vec::new(), classifier: None };
        if !skip.classifier {
            let mut gw = vec![T::zero(); c * fdim];
            let mut gb = vec![T::zero(); c];
            for i in 0..n {
                let zi = &z[i * fdim..(i + 1) * fdim];
                for k in 0..c {
                    let gk = g[i * c + k];
                    gb[k] += gk;
                    for (w, &zj) in gw[k * fdim..(k + 1) * fdim].iter_mut().zip(zi) {
                        *w += gk * zj;
                    }
                }
            }
            grads.classifier = Some((gw, gb));
        }
        if !skip.features && !self.layers.is_empty() {
            // d = g Wc, then back through each rectified layer.
            let mut d = vec![T::zero(); n * fdim];
            for i in 0..n {
                for k in 0..c {
                    let gk = g[i * c + k];
                    let w = &self.classifier.weights[k * fdim..(k + 1) * fdim];
                    for (dj, &wj) in d[i * fdim..(i + 1) * fdim].iter_mut().zip(w) {
                        *dj += gk * wj;
                    }
                }
            }
            let mut layer_grads = Vec::with_capacity(self.layers.len());
            for (l, layer) in self.layers.iter().enumerate().rev() {
                let (fin, fout) = (layer.inputs, layer.outputs);
                let out = &acts[l + 1];
                for (dv, &a) in d.iter_mut().zip(out) {
                    if a <= T::zero() {
                        *dv = T::zero();
                    }
                }
                let input = &acts[l];
                let mut gw = vec![T::zero(); fout * fin];
                let mut gb = vec![T::zero(); fout];
                for i in 0..n {
                    let xi = &input[i * fin..(i + 1) * fin];
                    for o in 0..fout {
                        let dv = d[i * fout + o];
                        if dv == T::zero() {
                            continue;
                        }
                        gb[o] += dv;
                        for (w, &xv) in gw[o * fin..(o + 1) * fin].iter_mut().zip(xi) {
                            *w += dv * xv;
                        }
                    }
                }
                if l > 0 {
                    let mut next = vec![T::zero(); n * fin];
                    for i in 0..n {
                        for o in 0..fout {
                            let dv = d[i * fout + o];
                            if dv == T::zero() {
                                continue;
                            }
                            let w = &layer.weights[o * fin..(o + 1) * fin];
                            for (nx, &wv) in next[i * fin..(i + 1) * fin].iter_mut().zip(w) {
                                *nx += dv * wv;
                            }
                        }
                    }
                    d = next;
                }
                layer_grads.push((gw, gb));
            }
            layer_grads.reverse();
            grads.layers = layer_grads;
        }
        Ok((loss, grads))
    }

    pub fn save_checkpoint<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        let all: Vec<&Dense<T>> = self.layers.iter().chain(std::iter::once(&self.classifier)).collect();
        w.write_u32::<LittleEndian>(all.len() as u32)?;
        for l in &all {
            w.write_u32::<LittleEndian>(l.inputs as u32)?;
            w.write_u32::<LittleEndian>(l.outputs as u32)?;
        }
        for l in &all {
            for v in l.params() {
                w.write_f64::<LittleEndian>(v.to_f64_lossless())?;
            }
        }
        Ok(())
    }

    pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |m: &str| Error::parse("checkpoint", m);
        let eof = |e: io::Error| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::parse("checkpoint", "truncated file")
            } else {
                Error::Io(e)
            }
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic, expected GPMD"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(eof)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
        if count == 0 || count > 1024 {
            return Err(bad(&format!("implausible layer count {count}")));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            let i = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            let o = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            dims.push((i, o));
        }
        let mut layers = Vec::with_capacity(count);
        for (i, o) in dims {
            let mut read = |k: usize| -> Result<Vec<T>> {
                (0..k).map(|_| r.read_f64::<LittleEndian>().map(T::lit).map_err(eof)).collect()
            };
            let weights = read(i * o)?;
            let bias = read(o)?;
            layers.push(Dense::new(i, o, weights, bias)?);
        }
        let classifier = layers.pop().expect("count >= 1");
        Model::from_layers(layers, classifier)
    }
}

/// Parameter gradients in the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// `(weights, bias)` per feature layer; empty when not computed.
    pub layers: Vec<(Vec<T>, Vec<T>)>,
    pub classifier: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Flattened in [`Model::params`] order, zeros where a group was skipped.
    pub fn flatten(&self, model: &Model<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(model.param_count());
        for (l, layer) in model.layers.iter().enumerate() {
            match self.layers.get(l) {
                Some((w, b)) => out.extend(w.iter().chain(b)),
                None => out.extend(std::iter::repeat_n(T::zero(), layer.param_count())),
            }
        }
        match &self.classifier {
            Some((w, b)) => out.extend(w.iter().chain(b)),
            None => out.extend(std::iter::repeat_n(T::zero(), model.classifier.param_count())),
        }
        out
    }

    pub fn norm(&self) -> T {
        let sq = |v: &Vec<T>| v.iter().map(|&x| x * x).sum::<T>();
        let mut s: T = self.layers.iter().map(|(w, b)| sq(w) + sq(b)).sum();
        if let Some((w, b)) = &self.classifier {
            s += sq(w) + sq(b);
        }
        s.sqrt()
    }
}

/// SGD with heavy-ball momentum: `v ← μ v + g`, `θ ← θ − lr v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    momentum: T,
    velocity: Option<Vec<T>>,
    steps: usize,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Sgd { momentum: T::lit(momentum), velocity: None, steps: 0 })
    }

    /// Drops accumulated velocity.
    pub fn reset(&mut self) {
        self.velocity = None;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn apply(&mut self, model: &mut Model<T>, grads: &Gradients<T>, lr: T) {
        let n = model.param_count();
        let velocity = self.velocity.get_or_insert_with(|| vec![T::zero(); n]);
        let mut offset = 0;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let count = layer.param_count();
            if !model.frozen.features {
                if let Some((gw, gb)) = grads.layers.get(l) {
                    let v = &mut velocity[offset..offset + count];
                    for ((p, vel), &g) in layer.params_mut().zip(v).zip(gw.iter().chain(gb)) {
                        *vel = self.momentum * *vel + g;
                        *p -= lr * *vel;
                    }
                }
            }
            offset += count;
        }
        if !model.frozen.classifier {
            if let Some((gw, gb)) = &grads.classifier {
                let v = &mut velocity[offset..];
                for ((p, vel), &g) in model.classifier.params_mut().zip(v).zip(gw.iter().chain(gb)) {
                    *vel = self.momentum * *vel + g;
                    *p -= lr * *vel;
                }
            }
        }
    }

    fn check(&mut self, loss: T) -> Result<()> {
        self.steps += 1;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { loss: loss.to_f64_lossless(), step: self.steps });
        }
        Ok(())
    }

    /// One step on raw inputs, updating only the groups not frozen in `model`.
    pub fn train_step(&mut self, model: &mut Model<T>, x: &Matrix<T>, labels: &[u32], lr: T) -> Result<T> {
        let (loss, grads) = model.loss_and_gradients(x, labels, model.frozen)?;
        self.check(loss)?;
        self.apply(model, &grads, lr);
        if model.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { loss: loss.to_f64_lossless(), step: self.steps });
        }
        Ok(loss)
    }

    /// One classifier step on precomputed features.
    pub fn train_classifier_step(&mut self, model: &mut Model<T>, z: &Matrix<T>, labels: &[u32], lr: T) -> Result<T> {
        let (loss, grads) = model.classifier_loss_and_gradients(z, labels)?;
        self.check(loss)?;
        self.apply(model, &grads, lr);
        if model.classifier_params().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { loss: loss.to_f64_lossless(), step: self.steps });
        }
        Ok(loss)
    }
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    crate::geometry::softmax_rows(logits)
}

fn argmax_rows<T: Scalar>(m: &Matrix<T>) -> Vec<u32> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Compares every parameter's analytic gradient with `(L(θ+h) − L(θ−h)) / 2h`.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`, so parameters whose
/// gradient is numerically zero are judged on absolute error against `floor`.
pub fn gradient_check(model: &Model<f64>, x: &Matrix<f64>, labels: &[u32], h: f64, floor: f64) -> Result<GradientCheck> {
    let (_, grads) = model.loss_and_gradients(x, labels, FrozenGroups::NONE)?;
    let analytic = grads.flatten(model);
    let base = model.params();
    let mut probe = model.clone();
    let mut report = GradientCheck { max_relative_error: 0.0, max_abs_error: 0.0, checked: 0 };
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p)?;
        let up = probe.loss_and_gradients(x, labels, FrozenGroups::ALL)?.0;
        p[i] = base[i] - h;
        probe.set_params(&p)?;
        let down = probe.loss_and_gradients(x, labels, FrozenGroups::ALL)?.0;
        let numeric = (up - down) / (2.0 * h);
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(floor);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// Report buckets by training-set class size: head has more than
/// `100 · factor` samples, tail fewer than `20 · factor`, middle the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyGroups {
    pub head: Vec<u32>,
    pub middle: Vec<u32>,
    pub tail: Vec<u32>,
}

impl AccuracyGroups {
    pub fn from_counts(class_counts: &[usize], factor: f64) -> Self {
        let (hi, lo) = (100.0 * factor, 20.0 * factor);
        let mut g = AccuracyGroups { head: vec![], middle: vec![], tail: vec![] };
        for (c, &n) in class_counts.iter().enumerate() {
            let n = n as f64;
            let bucket = if n > hi {
                &mut g.head
            } else if n >= lo {
                &mut g.middle
            } else {
                &mut g.tail
            };
            bucket.push(c as u32);
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub middle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<f64>,
    /// Recall per class; `None` for classes absent from the evaluation set.
    pub per_class: Vec<Option<f64>>,
}

/// Accuracy over the samples whose label is in `classes`; `None` if there are none.
pub fn subset_accuracy(predictions: &[u32], labels: &[u32], classes: &[u32]) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, l) in predictions.iter().zip(labels) {
        if classes.contains(l) {
            n += 1;
            hit += (p == l) as usize;
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

pub fn evaluate_predictions(
    predictions: &[u32],
    labels: &[u32],
    num_classes: usize,
    groups: &AccuracyGroups,
) -> Result<AccuracyReport> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let per_class = (0..num_classes as u32).map(|c| subset_accuracy(predictions, labels, &[c])).collect();
    Ok(AccuracyReport {
        overall: hits as f64 / labels.len() as f64,
        head: subset_accuracy(predictions, labels, &groups.head),
        middle: subset_accuracy(predictions, labels, &groups.middle),
        tail: subset_accuracy(predictions, labels, &groups.tail),
        per_class,
    })
}

pub fn evaluate<T: Scalar>(model: &Model<T>, x: &Matrix<T>, labels: &[u32], groups: &AccuracyGroups) -> Result<AccuracyReport> {
    let pred = model.predict(x)?;
    evaluate_predictions(&pred, labels, model.classes(), groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64, input: usize, hidden: Vec<usize>, feat: usize, classes: usize) -> Model<f64> {
        let cfg = ModelConfig { input_dim: input, hidden, feature_dim: feat, classes };
        Model::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    /// All parameters uniform in (-1, 1). Zero biases put whole rows exactly on
    /// the ReLU kink, where finite differences are meaningless.
    fn randomized(mut m: Model<f64>, seed: u64) -> Model<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..m.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.set_params(&p).unwrap();
        m
    }

    fn random_batch(n: usize, p: usize, classes: usize, seed: u64) -> (Matrix<f64>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| rng.random_range(0..classes as u32)).collect();
        (x, y)
    }

    #[test]
    fn zero_classifier_gives_uniform_scores() {
        let m = tiny(1, 3, vec![], 4, 5);
        let m = Model::from_layers(m.layers.clone(), Dense::zeros(4, 5)).unwrap();
        let (x, _) = random_batch(6, 3, 5, 2);
        let f = m.forward(&x).unwrap();
        for i in 0..6 {
            for k in 0..5 {
                assert_abs_diff_eq!(f.scores.get(i, k), 0.2, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn hand_computed_forward_pass() {
        // Feature layer: W = [[1, 0], [0, -1]], b = [0, 0.5]; classifier W = [[1, 1], [2, 0]], b = [0, -1].
        let l = Dense::new(2, 2, vec![1.0, 0.0, 0.0, -1.0], vec![0.0, 0.5]).unwrap();
        let c = Dense::new(2, 2, vec![1.0, 1.0, 2.0, 0.0], vec![0.0, -1.0]).unwrap();
        let m = Model::from_layers(vec![l], c).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]]).unwrap();
        let f = m.forward(&x).unwrap();
        // Features: relu([1, 0.5]), relu([0, -0.5]), relu([2, 1.5]).
        assert_eq!(f.features.as_slice(), &[1.0, 0.5, 0.0, 0.0, 2.0, 1.5]);
        assert_eq!(f.logits.as_slice(), &[1.5, 1.0, 0.0, -1.0, 3.5, 3.0]);
        let e = (0.5f64).exp();
        assert_abs_diff_eq!(f.scores.get(0, 0), e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(f.scores.get(1, 1), 1.0 / (1.0 + 1f64.exp()), epsilon = 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = Matrix::from_rows(&[[0.3, -1.2, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[100.3, 98.8, 102.0]]).unwrap();
        let (sa, sb) = (softmax(&a), softmax(&b));
        for k in 0..3 {
            assert_abs_diff_eq!(sa.get(0, k), sb.get(0, k), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sa.row(0).iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let m = tiny(1, 3, vec![], 4, 2);
        let x = Matrix::<f64>::zeros(1, 2);
        assert!(matches!(m.forward(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn saturated_sample_has_no_gradient() {
        let l = Dense::new(1, 1, vec![1.0], vec![0.0]).unwrap();
        let c = Dense::new(1, 2, vec![50.0, -50.0], vec![0.0, 0.0]).unwrap();
        let m = Model::from_layers(vec![l], c).unwrap();
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let (loss, g) = m.loss_and_gradients(&x, &[0], FrozenGroups::NONE).unwrap();
        assert!(loss < 1e-40);
        assert!(g.norm() < 1e-40);
    }

    #[test]
    fn tiny_net_gradient_matches_finite_differences() {
        let m = randomized(tiny(3, 2, vec![], 4, 3), 30);
        let (x, y) = random_batch(5, 2, 3, 4);
        let r = gradient_check(&m, &x, &y, 1e-5, 1e-6).unwrap();
        assert_eq!(r.checked, m.param_count());
        assert!(r.max_relative_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn deeper_net_gradient_matches_finite_differences() {
        let m = randomized(tiny(5, 4, vec![6, 5], 3, 4), 50);
        let (x, y) = random_batch(7, 4, 4, 6);
        let r = gradient_check(&m, &x, &y, 1e-5, 1e-6).unwrap();
        assert!(r.max_relative_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn freezing_features_keeps_them_bit_identical() {
        let mut m = tiny(7, 3, vec![5], 4, 3);
        let (x, y) = random_batch(16, 3, 3, 8);
        m.set_frozen(FrozenGroups::FEATURES);
        let (f0, c0) = (m.feature_params(), m.classifier_params());
        let mut opt = Sgd::new(0.9).unwrap();
        for _ in 0..100 {
            opt.train_step(&mut m, &x, &y, 0.05).unwrap();
        }
        assert_eq!(m.feature_params(), f0);
        assert_ne!(m.classifier_params(), c0);
    }

    #[test]
    fn all_frozen_still_reports_loss() {
        let mut m = tiny(7, 3, vec![], 4, 3);
        let (x, y) = random_batch(4, 3, 3, 9);
        m.set_frozen(FrozenGroups::ALL);
        let before = m.params();
        let loss = Sgd::new(0.0).unwrap().train_step(&mut m, &x, &y, 0.1).unwrap();
        assert!(loss > 0.0);
        assert_eq!(m.params(), before);
    }

    #[test]
    fn separable_problem_loss_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 64;
        let x = Matrix::from_fn(n, 2, |i, j| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 { side * rng.random_range(0.5..1.5) } else { rng.random_range(-1.0..1.0) }
        });
        let y: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let mut m = tiny(11, 2, vec![], 8, 2);
        let mut opt = Sgd::new(0.9).unwrap();
        let (first, _) = m.loss_and_gradients(&x, &y, FrozenGroups::ALL).unwrap();
        for _ in 0..200 {
            opt.train_step(&mut m, &x, &y, 0.05).unwrap();
        }
        let (last, _) = m.loss_and_gradients(&x, &y, FrozenGroups::ALL).unwrap();
        assert!(last <= 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn diverging_training_reports_step() {
        // Bare linear classifier, so nothing can go dead and stop the blow-up.
        let mut m = Model::from_layers(vec![], Dense::init(2, 2, &mut ChaCha8Rng::seed_from_u64(12))).unwrap();
        let x = Matrix::from_rows(&[[1e3, 1e3], [-1e3, 1e3]]).unwrap();
        let mut opt = Sgd::new(0.9).unwrap();
        let mut err = None;
        for _ in 0..200 {
            if let Err(e) = opt.train_step(&mut m, &x, &[0, 1], 1e306) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny(13, 3, vec![4], 2, 3);
        let mut buf = Vec::new();
        m.save_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GPMD");
        assert_eq!(buf.len(), 4 + 4 + 4 + 3 * 8 + 8 * m.param_count());
        let back: Model<f64> = Model::load_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        buf.truncate(buf.len() - 1);
        assert!(Model::<f64>::load_checkpoint(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 2];
        let g = AccuracyGroups::from_counts(&[500, 50, 5], 1.0);
        let r = evaluate_predictions(&labels, &labels, 3, &g).unwrap();
        assert_eq!((r.overall, r.head, r.middle, r.tail), (1.0, Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn empty_middle_is_omitted() {
        let g = AccuracyGroups::from_counts(&[500, 5], 1.0);
        assert!(g.middle.is_empty());
        let r = evaluate_predictions(&[0, 0], &[0, 1], 2, &g).unwrap();
        assert_eq!(r.middle, None);
        assert_eq!(r.tail, Some(0.0));
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("middle"));
    }

    #[test]
    fn random_predictor_is_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c = 10;
        let n = 20_000;
        let labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
        let preds: Vec<u32> = (0..n).map(|_| rng.random_range(0..c as u32)).collect();
        let r = evaluate_predictions(&preds, &labels, c, &AccuracyGroups::from_counts(&[200; 10], 1.0)).unwrap();
        let sigma = (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((r.overall - 0.1).abs() < 3.0 * sigma, "{}", r.overall);
    }
}
