//! Feed-forward ReLU classifiers: training, fine-tuning, FTAL extraction and
//! the binary model file format.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Graph, Tensor, Var};

/// 32-byte SHA-256 digest.
pub type Hash = [u8; 32];

const MODEL_MAGIC: &[u8; 4] = b"MLPC";
const MODEL_VERSION: u32 = 1;

/// Mini-batch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fixes initialization and shuffling.
    pub seed: u64,
    /// Weight decay coefficient on weight matrices.
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.1,
            seed: 0,
            l2_penalty: 1e-4,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning defaults used for FTAL extraction.
    pub fn extraction(seed: u64) -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.01,
            seed,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::invalid("l2_penalty must be >= 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be >= 1"));
        }
        Ok(())
    }
}

/// A dense ReLU network ending in class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    dims: Vec<usize>,
    /// `weights[l]` has shape `[dims[l], dims[l + 1]]`.
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    train_seed: u64,
    train_lr: f64,
}

impl MlpClassifier {
    /// He-initialized network with zero biases.
    pub fn init(dims: &[usize], seed: u64, train_lr: f64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("invalid layer dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt())
                .map_err(|e| Error::invalid(e.to_string()))?;
            let data = (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect();
            weights.push(Tensor::new(vec![w[0], w[1]], data)?);
            biases.push(Tensor::zeros(vec![w[1]]));
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            train_seed: seed,
            train_lr,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.dims.last().expect("dims has at least two entries")
    }

    /// Hidden widths, excluding input and output.
    pub fn hidden(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    /// Learning rate the model was originally trained with.
    pub fn train_lr(&self) -> f64 {
        self.train_lr
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "predict",
                left: x.shape().to_vec(),
                right: vec![self.input_dim()],
            });
        }
        Ok(())
    }

    /// Logits for a batch `[n, d]`, computed without a tape.
    pub fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let n = x.rows();
        let mut h = x.data().to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (k, m) = (w.shape()[0], w.shape()[1]);
            let mut z = matmul_raw(&h, w.data(), n, k, m);
            for (i, v) in z.iter_mut().enumerate() {
                *v += b.data()[i % m];
                if l < last && *v < 0.0 {
                    *v = 0.0;
                }
            }
            h = z;
        }
        Tensor::new(vec![n, self.class_count()], h).map_err(|_| Error::NonFinite("predict_logits"))
    }

    /// Predicted labels for a batch.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.predict_logits(x)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// Softmax probabilities for a batch.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.predict_logits(x)?;
        let c = self.class_count();
        let mut out = logits.into_data();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        Tensor::new(vec![out.len() / c, c], out)
    }

    /// Fraction of samples classified as labelled.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.is_empty() {
            return Err(Error::invalid("accuracy of an empty set"));
        }
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / pred.len() as f64)
    }

    pub fn dataset_accuracy(&self, ds: &Dataset) -> Result<f64> {
        self.accuracy(ds.features(), ds.labels())
    }

    /// Record the forward pass on `g` with parameters as constants, returning
    /// the logits node. Used for gradients with respect to inputs.
    pub fn logits_var(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let params: Vec<(Var, Var)> = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (g.constant(w.clone()), g.constant(b.clone())))
            .collect();
        forward(g, x, &params)
    }

    /// Mean cross-entropy at `(x, labels)` and its gradient with respect to `x`.
    pub fn input_gradient(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let logits = self.logits_var(&mut g, xv)?;
        let loss = g.softmax_xent(logits, labels)?;
        let mut grads = g.backward(loss)?;
        let gx = grads.take(xv).expect("input is a leaf on the loss path");
        Ok((g.value(loss).item(), gx))
    }

    /// One SGD update on a batch; returns the batch loss before the update.
    pub fn sgd_step(&mut self, x: &Tensor, labels: &[usize], lr: f64, l2: f64) -> Result<f64> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let params: Vec<(Var, Var)> = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (g.leaf(w.clone()), g.leaf(b.clone())))
            .collect();
        let logits = forward(&mut g, xv, &params)?;
        let loss = g.softmax_xent(logits, labels)?;
        let loss_value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        for (l, (wv, bv)) in params.into_iter().enumerate() {
            let gw = grads.take(wv).expect("weights are leaves on the loss path");
            let gb = grads.take(bv).expect("biases are leaves on the loss path");
            let w = &self.weights[l];
            let new_w: Vec<f64> = w
                .data()
                .iter()
                .zip(gw.data())
                .map(|(&p, &d)| p - lr * (d + l2 * p))
                .collect();
            let new_b: Vec<f64> = self.biases[l]
                .data()
                .iter()
                .zip(gb.data())
                .map(|(&p, &d)| p - lr * d)
                .collect();
            self.weights[l] = Tensor::new(w.shape().to_vec(), new_w)
                .map_err(|_| Error::NonFinite("sgd_step"))?;
            self.biases[l] = Tensor::new(self.biases[l].shape().to_vec(), new_b)
                .map_err(|_| Error::NonFinite("sgd_step"))?;
        }
        Ok(loss_value)
    }

    /// One shuffled pass over `(x, labels)`; returns the mean batch loss.
    pub fn train_epoch(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<f64> {
        self.train_epoch_perturbed(x, labels, cfg, epoch, |_, bx, _| Ok(bx.clone()))
    }

    /// One epoch where every shuffled batch is passed through `perturb`
    /// (given the current model) before the SGD update.
    pub fn train_epoch_perturbed(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        cfg: &TrainConfig,
        epoch: usize,
        mut perturb: impl FnMut(&MlpClassifier, &Tensor, &[usize]) -> Result<Tensor>,
    ) -> Result<f64> {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let bx = perturb(self, &x.select_rows(chunk), &by)?;
            let loss = self
                .sgd_step(&bx, &by, cfg.learning_rate, cfg.l2_penalty)
                .map_err(|e| diverged(e, epoch))?;
            total += loss;
            batches += 1;
        }
        finite_epoch_loss(total / batches.max(1) as f64, epoch)
    }

    /// One pass over the base data with `per_batch` trigger samples appended
    /// to every batch, cycling through the trigger set.
    #[allow(clippy::too_many_arguments)]
    pub fn train_epoch_with_triggers(
        &mut self,
        base_x: &Tensor,
        base_y: &[usize],
        trig_x: &Tensor,
        trig_y: &[usize],
        per_batch: usize,
        cfg: &TrainConfig,
        epoch: usize,
    ) -> Result<f64> {
        if trig_x.rows() == 0 {
            return Err(Error::EmptyTriggerSet);
        }
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..base_x.rows()).collect();
        order.shuffle(&mut rng);
        let mut trig_order: Vec<usize> = (0..trig_x.rows()).collect();
        trig_order.shuffle(&mut rng);
        let mut cursor = 0;
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tidx = Vec::with_capacity(per_batch);
            for _ in 0..per_batch {
                tidx.push(trig_order[cursor % trig_order.len()]);
                cursor += 1;
            }
            let bx = Tensor::concat_rows(&[&base_x.select_rows(chunk), &trig_x.select_rows(&tidx)])?;
            let mut by: Vec<usize> = chunk.iter().map(|&i| base_y[i]).collect();
            by.extend(tidx.iter().map(|&i| trig_y[i]));
            let loss = self
                .sgd_step(&bx, &by, cfg.learning_rate, cfg.l2_penalty)
                .map_err(|e| diverged(e, epoch))?;
            total += loss;
            batches += 1;
        }
        finite_epoch_loss(total / batches.max(1) as f64, epoch)
    }

    /// Canonical byte stream: header (magic, version, layer dims, seed,
    /// training rate) followed by little-endian parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.train_seed.to_le_bytes());
        out.extend_from_slice(&self.train_lr.to_le_bytes());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.data().iter().chain(b.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Malformed("not a model file".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Malformed(format!("unsupported model version {version}")));
        }
        let nd = r.u32()? as usize;
        if !(2..=64).contains(&nd) {
            return Err(Error::Malformed(format!("bad layer count {nd}")));
        }
        let dims: Vec<usize> = (0..nd).map(|_| r.u64().map(|v| v as usize)).collect::<Result<_>>()?;
        if dims.iter().any(|&d| d == 0 || d > 1 << 20) {
            return Err(Error::Malformed(format!("bad layer dims {dims:?}")));
        }
        let train_seed = r.u64()?;
        let train_lr = r.f64()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let wd = (0..w[0] * w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let bd = (0..w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            weights.push(Tensor::new(vec![w[0], w[1]], wd)?);
            biases.push(Tensor::new(vec![w[1]], bd)?);
        }
        if !r.is_done() {
            return Err(Error::Malformed("trailing bytes after parameters".into()));
        }
        Ok(Self {
            dims,
            weights,
            biases,
            train_seed,
            train_lr,
        })
    }

    /// SHA-256 of [`MlpClassifier::to_bytes`].
    pub fn digest(&self) -> Hash {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// The same network with every logit divided by `temperature`.
    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
        }
        let mut out = self.clone();
        let last = out.weights.len() - 1;
        for t in [&mut out.weights[last], &mut out.biases[last]] {
            *t = t.map(|v| v / temperature)?;
        }
        Ok(out)
    }

    /// Mutable access to one parameter, for tests of digest sensitivity.
    #[doc(hidden)]
    pub fn perturb_parameter(&mut self, layer: usize, index: usize, f: impl Fn(f64) -> f64) -> Result<()> {
        let w = &self.weights[layer];
        let mut data = w.data().to_vec();
        data[index] = f(data[index]);
        self.weights[layer] = Tensor::new(w.shape().to_vec(), data)?;
        Ok(())
    }
}

fn forward(g: &mut Graph, x: Var, params: &[(Var, Var)]) -> Result<Var> {
    let mut h = x;
    for (l, &(w, b)) in params.iter().enumerate() {
        let z = g.matmul(h, w)?;
        let z = g.add_bias(z, b)?;
        h = if l + 1 < params.len() { g.relu(z) } else { z };
    }
    Ok(h)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged { epoch },
        other => other,
    }
}

fn finite_epoch_loss(loss: f64, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Diverged { epoch })
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Train a fresh classifier on `ds`.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<MlpClassifier> {
    train_with_history(ds, cfg).map(|(m, _)| m)
}

/// Train and also return the mean loss of every epoch.
pub fn train_with_history(ds: &Dataset, cfg: &TrainConfig) -> Result<(MlpClassifier, Vec<f64>)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut dims = vec![ds.dim()];
    dims.extend(&cfg.hidden);
    dims.push(ds.class_count());
    let mut model = MlpClassifier::init(&dims, cfg.seed, cfg.learning_rate)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        history.push(model.train_epoch(ds.features(), ds.labels(), cfg, epoch)?);
    }
    Ok((model, history))
}

/// Continue SGD from `model` on `(samples, labels)` only.
pub fn fine_tune(
    model: &MlpClassifier,
    samples: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<MlpClassifier> {
    cfg.validate()?;
    if samples.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "fine_tune",
            left: samples.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let mut m = model.clone();
    for epoch in 0..cfg.epochs {
        m.train_epoch(samples, labels, cfg, epoch)?;
    }
    Ok(m)
}

/// Fine-tune-all-layers extraction: label `query_set` with the source and
/// fine-tune a copy of it at a smaller learning rate.
pub fn extract_ftal(source: &MlpClassifier, query_set: &Tensor, cfg: &TrainConfig) -> Result<MlpClassifier> {
    let labels = source.predict(query_set)?;
    extract_ftal_with_labels(source, query_set, &labels, cfg)
}

/// FTAL extraction where the labels come from an API rather than directly
/// from the source (for example a watermarking API that alters some answers).
pub fn extract_ftal_with_labels(
    source: &MlpClassifier,
    query_set: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<MlpClassifier> {
    if !(cfg.learning_rate < source.train_lr()) {
        return Err(Error::invalid(format!(
            "extraction learning rate {} must be below the source's {}",
            cfg.learning_rate,
            source.train_lr()
        )));
    }
    fine_tune(source, query_set, labels, cfg)
}

/// Little-endian cursor used by the binary formats.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let ds = gen_blobs(1, 3, 4, 10, 0.1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            hidden: vec![8],
            seed: 11,
            ..TrainConfig::default()
        };
        let m = train(&ds, &cfg).unwrap();
        let init = MlpClassifier::init(&[4, 8, 3], 11, cfg.learning_rate).unwrap();
        assert_eq!(m, init);
    }

    #[test]
    fn bytes_round_trip() {
        let m = MlpClassifier::init(&[5, 7, 3], 2, 0.1).unwrap();
        let back = MlpClassifier::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.digest(), back.digest());
    }

    #[test]
    fn truncated_model_rejected() {
        let bytes = MlpClassifier::init(&[5, 7, 3], 2, 0.1).unwrap().to_bytes();
        assert!(MlpClassifier::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn predict_dimension_mismatch() {
        let m = MlpClassifier::init(&[5, 7, 3], 2, 0.1).unwrap();
        assert!(m.predict(&Tensor::zeros(vec![2, 4])).is_err());
    }

    #[test]
    fn extraction_rate_must_be_smaller() {
        let m = MlpClassifier::init(&[5, 7, 3], 2, 0.1).unwrap();
        let q = Tensor::zeros(vec![4, 5]);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::extraction(0)
        };
        assert!(extract_ftal(&m, &q, &cfg).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let ds = gen_blobs(1, 3, 4, 20, 0.1).unwrap();
        let cfg = TrainConfig {
            hidden: vec![8],
            learning_rate: 1e200,
            batch_size: 8,
            epochs: 3,
            ..TrainConfig::default()
        };
        let r = train(&ds, &cfg);
        assert!(matches!(r, Err(Error::Diverged { epoch: 0 })), "{r:?}");
    }
}
