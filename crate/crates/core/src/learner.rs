//! Continual learners.
//!
//! [`ContinualLearner`] is the integration point the runner drives stage by
//! stage. [`LinearSoftmax`] is the reference implementation: multinomial
//! logistic regression over hashed text features with one shared softmax
//! across every label seen so far. Training a later domain moves the shared
//! biases and decays old rows through the L2 term, which is enough to show
//! catastrophic forgetting.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::Xxh3;

use crate::corpus::Example;
use crate::embed::HashedEmbedder;
use crate::error::{Error, Result};
use crate::seed;

pub const CHECKPOINT_FORMAT: &str = "domorder-linear-softmax";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Turns an example's input text into a dense feature vector.
pub trait Featurizer: Send + Sync {
    fn dim(&self) -> usize;
    fn features(&self, text: &str) -> Vec<f64>;
}

impl Featurizer for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, text: &str) -> Vec<f64> {
        self.embed(text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSpace {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl LabelSpace {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Appends `label` if unseen; returns its row.
    pub fn push(&mut self, label: &str) -> usize {
        if let Some(i) = self.index(label) {
            return i;
        }
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), self.labels.len() - 1);
        self.labels.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerParams {
    /// One row of `dim` weights per label.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub label_space: LabelSpace,
    pub dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.5,
            l2: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the validation split is empty.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Parameter-level operations

pub fn init_learner(dim: usize, seed: u64) -> Result<LearnerParams> {
    if dim == 0 {
        return Err(Error::Config("learner dimension must be at least 1".into()));
    }
    Ok(LearnerParams {
        w: Vec::new(),
        b: Vec::new(),
        label_space: LabelSpace::default(),
        dim,
        seed,
    })
}

/// Appends unseen labels with zero rows. Known labels are left alone.
pub fn extend_labels(params: &mut LearnerParams, new_labels: &[String]) {
    for label in new_labels {
        let before = params.label_space.len();
        if params.label_space.push(label) == before {
            params.w.push(vec![0.0; params.dim]);
            params.b.push(0.0);
        }
    }
}

type Sparse = Vec<(usize, f64)>;

fn sparse(x: &[f64]) -> Sparse {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

fn logits(params: &LearnerParams, x: &Sparse) -> Vec<f64> {
    params
        .w
        .iter()
        .zip(&params.b)
        .map(|(row, b)| b + x.iter().map(|&(i, v)| row[i] * v).sum::<f64>())
        .collect()
}

/// Softmax probabilities and `log Z - logit[y]` for a stable cross-entropy.
fn softmax_xent(z: &[f64], y: usize) -> (Vec<f64>, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - z[y];
    (exps.into_iter().map(|e| e / sum).collect(), loss)
}

fn l2_term(params: &LearnerParams, l2: f64) -> f64 {
    0.5 * l2 * params.w.iter().flatten().map(|v| v * v).sum::<f64>()
}

fn sparse_loss_and_gradient(
    params: &LearnerParams,
    xs: &[&Sparse],
    ys: &[usize],
    l2: f64,
) -> (f64, Gradient) {
    let k = params.w.len();
    let mut gw: Vec<Vec<f64>> = params
        .w
        .iter()
        .map(|row| row.iter().map(|v| l2 * v).collect())
        .collect();
    let mut gb = vec![0.0; k];
    let scale = 1.0 / xs.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let (mut p, l) = softmax_xent(&logits(params, x), y);
        loss += l;
        p[y] -= 1.0;
        for (c, pc) in p.iter().enumerate() {
            let g = pc * scale;
            gb[c] += g;
            for &(i, v) in x.iter() {
                gw[c][i] += g * v;
            }
        }
    }
    (loss * scale + l2_term(params, l2), Gradient { w: gw, b: gb })
}

/// Mean softmax cross-entropy plus `(l2 / 2) * ||W||^2`, with its gradient
/// with respect to `W` and `b`.
pub fn loss_and_gradient(
    params: &LearnerParams,
    xs: &[&[f64]],
    ys: &[usize],
    l2: f64,
) -> Result<(f64, Gradient)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidInput("batch must be non-empty with one label per input".into()));
    }
    if params.label_space.is_empty() {
        return Err(Error::NoLabels);
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= params.w.len()) {
        return Err(Error::InvalidInput(format!("label row {y} out of range")));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != params.dim) {
        return Err(Error::DimensionMismatch {
            id: "<batch>".into(),
            expected: params.dim,
            found: x.len(),
        });
    }
    let sx: Vec<Sparse> = xs.iter().map(|x| sparse(x)).collect();
    let refs: Vec<&Sparse> = sx.iter().collect();
    Ok(sparse_loss_and_gradient(params, &refs, ys, l2))
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate().skip(1) {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Row index of the highest logit; the lowest index wins ties.
pub fn predict_row(params: &LearnerParams, x: &[f64]) -> Result<usize> {
    if params.label_space.is_empty() {
        return Err(Error::NoLabels);
    }
    Ok(argmax(&logits(params, &sparse(x))))
}

/// Parameter fingerprint, used to check that runs start from identical state.
pub fn checksum(params: &LearnerParams) -> u64 {
    let mut h = Xxh3::with_seed(0);
    h.update(&(params.dim as u64).to_le_bytes());
    for label in params.label_space.labels() {
        h.update(label.as_bytes());
        h.update(&[0]);
    }
    for (row, b) in params.w.iter().zip(&params.b) {
        h.update(&b.to_bits().to_le_bytes());
        for v in row {
            h.update(&v.to_bits().to_le_bytes());
        }
    }
    h.digest()
}

// ---------------------------------------------------------------------------
// Checkpoints: a JSON header line, then one `b w_0 .. w_{dim-1}` row per label

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    rows: usize,
    dim: usize,
    seed: u64,
    labels: Vec<String>,
}

pub fn save_checkpoint(params: &LearnerParams, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        rows: params.w.len(),
        dim: params.dim,
        seed: params.seed,
        labels: params.label_space.labels().to_vec(),
    };
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
    for (row, b) in params.w.iter().zip(&params.b) {
        let mut line = format!("{b:.16e}");
        for v in row {
            line.push_str(&format!(" {v:.16e}"));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<LearnerParams> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Ingest {
        path: path.to_path_buf(),
        message: m,
    };
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| bad("missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_str(&header_line).map_err(|e| bad(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }
    if header.labels.len() != header.rows {
        return Err(bad("label count does not match row count".into()));
    }
    let mut params = init_learner(header.dim, header.seed)?;
    extend_labels(&mut params, &header.labels);
    for row in 0..header.rows {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing row {row}")))?
            .map_err(|e| Error::io(path, e))?;
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("row {row}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != header.dim + 1 {
            return Err(bad(format!("row {row} has {} values", values.len())));
        }
        params.b[row] = values[0];
        params.w[row].copy_from_slice(&values[1..]);
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// Learner interface

pub trait ContinualLearner: Send {
    fn extend_labels(&mut self, labels: &[String]);

    fn train_stage(&mut self, train: &[Example], val: &[Example], config: &TrainConfig) -> Result<StageLog>;

    fn predict(&self, example: &Example) -> Result<String>;

    /// Fraction of exact label matches.
    fn evaluate(&self, test: &[Example]) -> Result<f64> {
        if test.is_empty() {
            return Err(Error::EmptyEvalSet);
        }
        let mut hits = 0usize;
        for ex in test {
            if self.predict(ex)? == ex.intent_label {
                hits += 1;
            }
        }
        Ok(hits as f64 / test.len() as f64)
    }

    fn checksum(&self) -> u64;
}

/// Reference learner: shared-softmax linear classifier.
#[derive(Debug, Clone)]
pub struct LinearSoftmax<F> {
    pub params: LearnerParams,
    featurizer: F,
}

impl<F: Featurizer> LinearSoftmax<F> {
    pub fn new(featurizer: F, seed: u64) -> Result<Self> {
        Ok(Self {
            params: init_learner(featurizer.dim(), seed)?,
            featurizer,
        })
    }

    fn encode(&self, examples: &[Example]) -> Result<(Vec<Sparse>, Vec<usize>)> {
        let mut xs = Vec::with_capacity(examples.len());
        let mut ys = Vec::with_capacity(examples.len());
        for ex in examples {
            let y = self
                .params
                .label_space
                .index(&ex.intent_label)
                .ok_or_else(|| Error::UnknownLabel(ex.intent_label.clone()))?;
            xs.push(sparse(&self.featurizer.features(&ex.input_text)));
            ys.push(y);
        }
        Ok((xs, ys))
    }

    fn full_loss(&self, xs: &[Sparse], ys: &[usize], l2: f64) -> f64 {
        let refs: Vec<&Sparse> = xs.iter().collect();
        let mut loss = 0.0;
        for (x, &y) in refs.iter().zip(ys) {
            loss += softmax_xent(&logits(&self.params, x), y).1;
        }
        loss / xs.len() as f64 + l2_term(&self.params, l2)
    }
}

impl<F: Featurizer> ContinualLearner for LinearSoftmax<F> {
    fn extend_labels(&mut self, labels: &[String]) {
        extend_labels(&mut self.params, labels);
    }

    /// Mini-batch gradient descent, reshuffled every epoch, no early stopping.
    fn train_stage(&mut self, train: &[Example], val: &[Example], config: &TrainConfig) -> Result<StageLog> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        let (xs, ys) = self.encode(train)?;
        let mut rng = seed::rng(config.seed);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut log = StageLog::default();
        for epoch in 1..=config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let bx: Vec<&Sparse> = batch.iter().map(|&i| &xs[i]).collect();
                let by: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
                let (loss, grad) = sparse_loss_and_gradient(&self.params, &bx, &by, config.l2);
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        learning_rate: config.learning_rate,
                    });
                }
                let lr = config.learning_rate;
                for (row, g) in self.params.w.iter_mut().zip(&grad.w) {
                    for (v, gv) in row.iter_mut().zip(g) {
                        *v -= lr * gv;
                    }
                }
                for (b, g) in self.params.b.iter_mut().zip(&grad.b) {
                    *b -= lr * g;
                }
            }
            let train_loss = self.full_loss(&xs, &ys, config.l2);
            if !train_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: config.learning_rate,
                });
            }
            let val_accuracy = if val.is_empty() {
                None
            } else {
                Some(self.evaluate(val)?)
            };
            log.epochs.push(EpochLog {
                epoch,
                train_loss,
                val_accuracy,
            });
        }
        Ok(log)
    }

    fn predict(&self, example: &Example) -> Result<String> {
        let row = predict_row(&self.params, &self.featurizer.features(&example.input_text))?;
        Ok(self.params.label_space.labels()[row].clone())
    }

    fn checksum(&self) -> u64 {
        checksum(&self.params)
    }
}
