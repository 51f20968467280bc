//! The hierarchical multi-layer LSTM classifier.
//!
//! Frozen word vectors feed a first LSTM whose final hidden state drives the
//! top-level head. A second LSTM reads the whole hidden sequence of the
//! first; its final state (after dropout in training mode) drives the
//! second-level head. Each head is `Dense → ReLU → Dense → softmax`, and the
//! two cross-entropies are summed and averaged over the batch.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_indices, Dataset, Taxonomy};
use crate::embedding::{Embeddings, PAD};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, cross_entropy, dropout, lstm_backward, lstm_forward, softmax, AdamState, Dense,
    LstmCache, LstmParams, LstmState, Mode, Parameters,
};
use crate::preprocess::{preprocess_document, PreprocessOptions};

/// How level-2 labels are chosen relative to the level-1 decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsistencyMode {
    /// Level-2 argmax restricted to children of the chosen level-1 label.
    Mask,
    /// Independent argmax per level.
    ArgmaxFree,
}

impl std::str::FromStr for ConsistencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(ConsistencyMode::Mask),
            "argmax-free" => Ok(ConsistencyMode::ArgmaxFree),
            other => Err(Error::InvalidArgument(format!(
                "consistency mode must be `mask` or `argmax-free`, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmlstmConfig {
    pub embedding_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Width of the ReLU layer inside each head.
    pub dense_size: usize,
    pub max_seq_len: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub consistency: ConsistencyMode,
}

impl Default for HmlstmConfig {
    fn default() -> Self {
        HmlstmConfig {
            embedding_dim: 100,
            hidden1: 128,
            hidden2: 128,
            dense_size: 64,
            max_seq_len: 128,
            batch_size: 32,
            dropout: 0.5,
            lr: 0.001,
            epochs: 10,
            patience: 3,
            validation_fraction: 0.2,
            seed: 42,
            consistency: ConsistencyMode::Mask,
        }
    }
}

impl HmlstmConfig {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, value) in [
            ("embedding_dim", self.embedding_dim),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("dense_size", self.dense_size),
            ("max_seq_len", self.max_seq_len),
            ("batch_size", self.batch_size),
        ] {
            if value < 1 {
                v.push(format!("{name} must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            v.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            v.push(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            v.push(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// `Dense → ReLU → Dense → softmax`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub hidden: Dense,
    pub out: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Head {
    fn zeros(classes: usize, dense: usize, input: usize) -> Self {
        Head {
            hidden: Dense::zeros(dense, input),
            out: Dense::zeros(classes, dense),
        }
    }

    fn init(classes: usize, dense: usize, input: usize, rng: &mut ChaCha8Rng) -> Self {
        Head {
            hidden: Dense::init(dense, input, rng),
            out: Dense::init(classes, dense, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.out.b.len()
    }

    fn forward(&self, x: &[f64]) -> HeadCache {
        let pre = self.hidden.forward(x);
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let probs = softmax(&self.out.forward(&act));
        HeadCache {
            x: x.to_vec(),
            pre,
            act,
            probs,
        }
    }

    fn backward(&self, cache: &HeadCache, dlogits: &[f64], grads: &mut Head) -> Vec<f64> {
        let mut dact = self.out.backward(&cache.act, dlogits, &mut grads.out);
        for (d, p) in dact.iter_mut().zip(&cache.pre) {
            if *p <= 0.0 {
                *d = 0.0;
            }
        }
        self.hidden.backward(&cache.x, &dact, &mut grads.hidden)
    }
}

impl Parameters for Head {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.hidden.slices();
        v.extend(self.out.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.hidden.slices_mut();
        v.extend(self.out.slices_mut());
        v
    }
}

/// All trainable tensors. Word vectors are not part of this set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmlstmParams {
    pub lstm1: LstmParams,
    pub lstm2: LstmParams,
    pub head1: Head,
    pub head2: Head,
}

impl HmlstmParams {
    pub fn zeros(config: &HmlstmConfig, classes1: usize, classes2: usize) -> Self {
        HmlstmParams {
            lstm1: LstmParams::zeros(config.hidden1, config.embedding_dim),
            lstm2: LstmParams::zeros(config.hidden2, config.hidden1),
            head1: Head::zeros(classes1, config.dense_size, config.hidden1),
            head2: Head::zeros(classes2, config.dense_size, config.hidden2),
        }
    }

    pub fn init(config: &HmlstmConfig, classes1: usize, classes2: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let lstm1 = LstmParams::init(config.hidden1, config.embedding_dim, &mut rng);
        let lstm2 = LstmParams::init(config.hidden2, config.hidden1, &mut rng);
        let head1 = Head::init(classes1, config.dense_size, config.hidden1, &mut rng);
        let head2 = Head::init(classes2, config.dense_size, config.hidden2, &mut rng);
        HmlstmParams {
            lstm1,
            lstm2,
            head1,
            head2,
        }
    }

    /// Named tensors with shapes, in [`Parameters::slices`] order.
    pub fn tensor_names(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (lname, l) in [("lstm1", &self.lstm1), ("lstm2", &self.lstm2)] {
            for gate in ["forget", "input", "candidate", "output"] {
                out.push((format!("{lname}.{gate}.w"), vec![l.hidden, l.hidden + l.input]));
                out.push((format!("{lname}.{gate}.b"), vec![l.hidden]));
            }
        }
        for (hname, h) in [("head1", &self.head1), ("head2", &self.head2)] {
            for (part, d) in [("hidden", &h.hidden), ("out", &h.out)] {
                out.push((format!("{hname}.{part}.w"), vec![d.w.rows(), d.w.cols()]));
                out.push((format!("{hname}.{part}.b"), vec![d.b.len()]));
            }
        }
        out
    }
}

impl Parameters for HmlstmParams {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.lstm1.slices();
        v.extend(self.lstm2.slices());
        v.extend(self.head1.slices());
        v.extend(self.head2.slices());
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm1.slices_mut();
        v.extend(self.lstm2.slices_mut());
        v.extend(self.head1.slices_mut());
        v.extend(self.head2.slices_mut());
        v
    }
}

/// A document as token ids plus gold positions within level 1 and level 2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedDoc {
    pub ids: Vec<usize>,
    pub targets: [usize; 2],
}

/// Per-level distributions and the chosen path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierPrediction {
    pub level1: Vec<f64>,
    pub level2: Vec<f64>,
    pub labels: Vec<String>,
    pub consistency_enforced: bool,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Chooses labels from per-level distributions over a two-level taxonomy.
/// Under [`ConsistencyMode::Mask`] the level-2 distribution is restricted to
/// the children of the level-1 choice and renormalized.
pub fn resolve_prediction(
    taxonomy: &Taxonomy,
    level1: Vec<f64>,
    mut level2: Vec<f64>,
    mode: ConsistencyMode,
) -> HierPrediction {
    let top = taxonomy.labels_at_level(1);
    let sub = taxonomy.labels_at_level(2);
    let l1 = argmax(&level1);
    let l2 = match mode {
        ConsistencyMode::ArgmaxFree => argmax(&level2),
        ConsistencyMode::Mask => {
            let allowed: Vec<bool> = sub
                .iter()
                .map(|s| taxonomy.parent(s) == Some(top[l1]))
                .collect();
            let mass: f64 = level2
                .iter()
                .zip(&allowed)
                .filter(|(_, &a)| a)
                .map(|(p, _)| p)
                .sum();
            let n_allowed = allowed.iter().filter(|&&a| a).count() as f64;
            for (p, &a) in level2.iter_mut().zip(&allowed) {
                *p = match (a, mass > 0.0) {
                    (false, _) => 0.0,
                    (true, true) => *p / mass,
                    (true, false) => 1.0 / n_allowed,
                };
            }
            argmax(&level2)
        }
    };
    HierPrediction {
        labels: vec![top[l1].to_string(), sub[l2].to_string()],
        level1,
        level2,
        consistency_enforced: mode == ConsistencyMode::Mask,
    }
}

/// Intermediate values of one document's forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    steps: usize,
    lstm1: LstmCache,
    lstm2: LstmCache,
    head1: HeadCache,
    head2: HeadCache,
    mask: Vec<f64>,
}

impl ForwardCache {
    pub fn level1(&self) -> &[f64] {
        &self.head1.probs
    }

    pub fn level2(&self) -> &[f64] {
        &self.head2.probs
    }
}

/// Loss, gradients and per-document `(level1, level2)` distributions.
pub type LossGrad = (f64, HmlstmParams, Vec<(Vec<f64>, Vec<f64>)>);

/// Loss and gradient computation for a fixed set of word vectors.
pub struct Objective<'a> {
    pub embeddings: &'a Embeddings,
    pub dropout: f64,
    pub max_seq_len: usize,
}

impl Objective<'_> {
    fn inputs(&self, ids: &[usize]) -> Vec<Vec<f64>> {
        let mut xs: Vec<Vec<f64>> = ids
            .iter()
            .take(self.max_seq_len)
            .filter(|&&i| i != PAD)
            .map(|&i| self.embeddings.matrix.row(i).to_vec())
            .collect();
        if xs.is_empty() {
            xs.push(self.embeddings.matrix.row(PAD).to_vec());
        }
        xs
    }

    pub fn forward(
        &self,
        params: &HmlstmParams,
        ids: &[usize],
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<ForwardCache> {
        let xs = self.inputs(ids);
        let fw1 = lstm_forward(&params.lstm1, &xs, &LstmState::zeros(params.lstm1.hidden))?;
        let head1 = params.head1.forward(fw1.hs.last().expect("non-empty"));
        let fw2 = lstm_forward(&params.lstm2, &fw1.hs, &LstmState::zeros(params.lstm2.hidden))?;
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let (dropped, mask) = dropout(&fw2.state.h, self.dropout, mode, &mut rng)?;
        let head2 = params.head2.forward(&dropped);
        Ok(ForwardCache {
            steps: xs.len(),
            lstm1: fw1.cache,
            lstm2: fw2.cache,
            head1,
            head2,
            mask,
        })
    }

    fn doc_loss(cache: &ForwardCache, targets: [usize; 2]) -> f64 {
        cross_entropy(&cache.head1.probs, targets[0]) + cross_entropy(&cache.head2.probs, targets[1])
    }

    /// Accumulates one document's gradient into `grads`.
    fn backward(
        &self,
        params: &HmlstmParams,
        cache: &ForwardCache,
        targets: [usize; 2],
        grads: &mut HmlstmParams,
    ) -> Result<()> {
        let mut d1 = cache.head1.probs.clone();
        d1[targets[0]] -= 1.0;
        let mut d2 = cache.head2.probs.clone();
        d2[targets[1]] -= 1.0;

        let dh2 = params.head2.backward(&cache.head2, &d2, &mut grads.head2);
        let n2 = params.lstm2.hidden;
        let mut dh2_seq = vec![vec![0.0; n2]; cache.steps];
        dh2_seq[cache.steps - 1] = dh2.iter().zip(&cache.mask).map(|(d, m)| d * m).collect();
        let bw2 = lstm_backward(&params.lstm2, &cache.lstm2, &dh2_seq, &LstmState::zeros(n2))?;
        grads.lstm2.add_assign(&bw2.grads);

        let mut dh1_seq = bw2.dxs;
        let dh1 = params.head1.backward(&cache.head1, &d1, &mut grads.head1);
        for (a, b) in dh1_seq[cache.steps - 1].iter_mut().zip(&dh1) {
            *a += b;
        }
        let n1 = params.lstm1.hidden;
        let bw1 = lstm_backward(&params.lstm1, &cache.lstm1, &dh1_seq, &LstmState::zeros(n1))?;
        grads.lstm1.add_assign(&bw1.grads);
        Ok(())
    }

    /// Batch-averaged joint loss without gradients.
    pub fn batch_loss(&self, params: &HmlstmParams, docs: &[EncodedDoc], mode: Mode, seeds: &[u64]) -> Result<f64> {
        let mut total = 0.0;
        for (doc, &seed) in docs.iter().zip(seeds) {
            let cache = self.forward(params, &doc.ids, mode, seed)?;
            total += Self::doc_loss(&cache, doc.targets);
        }
        Ok(total / docs.len().max(1) as f64)
    }

    /// Batch-averaged joint loss, its gradient, and per-document caches'
    /// level distributions. Documents are processed in fixed-size chunks
    /// whose partial sums are reduced in order, so results do not depend on
    /// the number of threads.
    pub fn batch_loss_grad(
        &self,
        params: &HmlstmParams,
        docs: &[EncodedDoc],
        mode: Mode,
        seeds: &[u64],
    ) -> Result<LossGrad> {
        const CHUNK: usize = 4;
        let items: Vec<(&EncodedDoc, u64)> = docs.iter().zip(seeds.iter().copied()).collect();
        let partials: Vec<Result<LossGrad>> = items
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = zeros_like(params);
                let mut loss = 0.0;
                let mut dists = Vec::with_capacity(chunk.len());
                for (doc, seed) in chunk {
                    let cache = self.forward(params, &doc.ids, mode, *seed)?;
                    loss += Self::doc_loss(&cache, doc.targets);
                    self.backward(params, &cache, doc.targets, &mut grads)?;
                    dists.push((cache.head1.probs, cache.head2.probs));
                }
                Ok((loss, grads, dists))
            })
            .collect();

        let mut grads = zeros_like(params);
        let mut loss = 0.0;
        let mut dists = Vec::with_capacity(docs.len());
        for p in partials {
            let (l, g, d) = p?;
            loss += l;
            grads.add_assign(&g);
            dists.extend(d);
        }
        let scale = 1.0 / docs.len().max(1) as f64;
        grads.scale(scale);
        Ok((loss * scale, grads, dists))
    }
}

fn zeros_like(p: &HmlstmParams) -> HmlstmParams {
    let mut z = p.clone();
    z.fill(0.0);
    z
}

/// Per-document dropout seed derived from the run seed, the epoch and the
/// document's position in the training set.
pub fn dropout_seed(seed: u64, epoch: u64, index: u64) -> u64 {
    let mut x = seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 30;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for rec in &self.epochs {
            out.serialize(rec)?;
        }
        out.flush().map_err(|e| Error::io("<history>", e))?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HmlstmModel {
    pub config: HmlstmConfig,
    pub taxonomy: Taxonomy,
    pub embeddings: Arc<Embeddings>,
    pub params: HmlstmParams,
    pub optimizer: AdamState,
}

impl HmlstmModel {
    pub fn build(taxonomy: &Taxonomy, embeddings: Arc<Embeddings>, config: &HmlstmConfig) -> Result<Self> {
        config.validate()?;
        if taxonomy.levels() != 2 {
            return Err(Error::InvalidArgument(format!(
                "the LSTM model needs a 2-level taxonomy, got {} levels",
                taxonomy.levels()
            )));
        }
        if embeddings.dim() != config.embedding_dim {
            return Err(Error::Shape(format!(
                "embeddings have dimension {}, config expects {}",
                embeddings.dim(),
                config.embedding_dim
            )));
        }
        let params = HmlstmParams::init(config, taxonomy.level_width(1), taxonomy.level_width(2));
        Ok(Self::from_params(taxonomy, embeddings, config, params))
    }

    pub fn from_params(
        taxonomy: &Taxonomy,
        embeddings: Arc<Embeddings>,
        config: &HmlstmConfig,
        params: HmlstmParams,
    ) -> Self {
        let optimizer = AdamState::new(&params, config.lr);
        HmlstmModel {
            config: config.clone(),
            taxonomy: taxonomy.clone(),
            embeddings,
            params,
            optimizer,
        }
    }

    pub fn objective(&self) -> Objective<'_> {
        Objective {
            embeddings: &self.embeddings,
            dropout: self.config.dropout,
            max_seq_len: self.config.max_seq_len,
        }
    }

    /// Tokenizes and encodes every document of `dataset`.
    pub fn encode(&self, dataset: &Dataset, options: &PreprocessOptions) -> Result<Vec<EncodedDoc>> {
        encode_dataset(dataset, &self.embeddings, options, self.config.max_seq_len)
    }

    pub fn forward(&self, ids: &[usize], mode: Mode, dropout_seed: u64) -> Result<ForwardCache> {
        self.objective().forward(&self.params, ids, mode, dropout_seed)
    }

    pub fn predict(&self, ids: &[usize], mode: ConsistencyMode) -> Result<HierPrediction> {
        let cache = self.forward(ids, Mode::Inference, 0)?;
        Ok(resolve_prediction(
            &self.taxonomy,
            cache.head1.probs,
            cache.head2.probs,
            mode,
        ))
    }

    /// Mean inference-mode loss and exact-match accuracy.
    pub fn evaluate_encoded(&self, docs: &[EncodedDoc]) -> Result<(f64, f64)> {
        if docs.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let obj = self.objective();
        let results: Vec<Result<(f64, bool)>> = docs
            .par_iter()
            .map(|doc| {
                let cache = obj.forward(&self.params, &doc.ids, Mode::Inference, 0)?;
                let loss = Objective::doc_loss(&cache, doc.targets);
                let ok = self.is_correct(cache.head1.probs, cache.head2.probs, doc.targets);
                Ok((loss, ok))
            })
            .collect();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for r in results {
            let (l, ok) = r?;
            loss += l;
            correct += ok as usize;
        }
        let n = docs.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    fn is_correct(&self, p1: Vec<f64>, p2: Vec<f64>, targets: [usize; 2]) -> bool {
        let pred = resolve_prediction(&self.taxonomy, p1, p2, self.config.consistency);
        let gold1 = self.taxonomy.labels_at_level(1)[targets[0]];
        let gold2 = self.taxonomy.labels_at_level(2)[targets[1]];
        pred.labels[0] == gold1 && pred.labels[1] == gold2
    }

    /// One Adam update on a batch; returns the batch loss and how many
    /// documents were predicted exactly right during the pass.
    pub fn train_batch(&mut self, docs: &[EncodedDoc], seeds: &[u64]) -> Result<(f64, usize)> {
        let (loss, grads, dists) = self
            .objective()
            .batch_loss_grad(&self.params, docs, Mode::Train, seeds)?;
        adam_step(&mut self.params, &grads, &mut self.optimizer)?;
        let correct = dists
            .into_iter()
            .zip(docs)
            .filter(|((p1, p2), d)| self.is_correct(p1.clone(), p2.clone(), d.targets))
            .count();
        Ok((loss, correct))
    }

    /// Mini-batch training with early stopping on a held-out validation
    /// slice. The parameters of the best validation epoch are kept.
    pub fn train(&mut self, docs: &[EncodedDoc]) -> Result<History> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus("empty training set".into()));
        }
        let cfg = self.config.clone();
        let (mut train_idx, val_idx) = split_indices(docs.len(), cfg.validation_fraction, cfg.seed)?;
        if train_idx.is_empty() {
            return Err(Error::EmptyCorpus("no documents left after the validation split".into()));
        }
        let val_docs: Vec<EncodedDoc> = val_idx.iter().map(|&i| docs[i].clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

        let mut history = History::default();
        let mut best: Option<(f64, HmlstmParams)> = None;
        let mut bad_epochs = 0;

        for epoch in 0..cfg.epochs {
            train_idx.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for batch in train_idx.chunks(cfg.batch_size) {
                let batch_docs: Vec<EncodedDoc> = batch.iter().map(|&i| docs[i].clone()).collect();
                let seeds: Vec<u64> = batch
                    .iter()
                    .map(|&i| dropout_seed(cfg.seed, epoch as u64, i as u64))
                    .collect();
                let (loss, ok) = self.train_batch(&batch_docs, &seeds)?;
                loss_sum += loss * batch.len() as f64;
                correct += ok;
            }
            let n = train_idx.len() as f64;
            let (train_loss, train_accuracy) = (loss_sum / n, correct as f64 / n);
            let (val_loss, val_accuracy) = if val_docs.is_empty() {
                (train_loss, train_accuracy)
            } else {
                self.evaluate_encoded(&val_docs)?
            };
            if !train_loss.is_finite() || !val_loss.is_finite() || !self.params.all_finite() {
                return Err(Error::NonFinite(format!("training diverged in epoch {}", epoch + 1)));
            }
            history.epochs.push(EpochRecord {
                epoch: epoch + 1,
                train_loss,
                train_accuracy,
                val_loss,
                val_accuracy,
            });

            if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
                best = Some((val_loss, self.params.clone()));
                history.best_epoch = epoch + 1;
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs >= cfg.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
        if let Some((_, params)) = best {
            self.params = params;
        }
        Ok(history)
    }
}

/// Preprocesses, tokenizes and maps each document to ids and gold targets.
pub fn encode_dataset(
    dataset: &Dataset,
    embeddings: &Embeddings,
    options: &PreprocessOptions,
    max_seq_len: usize,
) -> Result<Vec<EncodedDoc>> {
    let tax = &dataset.taxonomy;
    if tax.levels() != 2 {
        return Err(Error::InvalidArgument("expected a 2-level taxonomy".into()));
    }
    dataset
        .documents
        .iter()
        .map(|doc| {
            let tokens = preprocess_document(doc, options);
            let pos = |k: usize| {
                tax.position_in_level(&doc.gold[k])
                    .ok_or_else(|| Error::UnknownLabel {
                        line: 0,
                        label: doc.gold[k].clone(),
                    })
            };
            Ok(EncodedDoc {
                ids: embeddings.ids(&tokens, max_seq_len),
                targets: [pos(0)?, pos(1)?],
            })
        })
        .collect()
}

/// Size of a randomly generated gradient-check problem.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSpec {
    pub docs: usize,
    pub tokens: usize,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub vocab: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            docs: 3,
            tokens: 8,
            hidden: 8,
            embedding_dim: 8,
            vocab: 20,
            eps: 1e-5,
            seed: 0,
        }
    }
}

/// Compares the analytic gradient of the joint loss (dropout active, fixed
/// masks) with central differences over every parameter, on random word
/// vectors, random documents over the news taxonomy, and random parameters.
pub fn check_gradients(spec: &GradCheckSpec) -> Result<crate::nn::GradCheckReport> {
    use crate::embedding::{EmbeddingMatrix, Vocabulary};
    use rand::Rng;

    if spec.docs == 0 || spec.tokens == 0 || spec.vocab == 0 {
        return Err(Error::InvalidArgument("docs, tokens and vocab must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.embedding_dim;
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend((0..spec.vocab).map(|i| format!("w{i}")));
    let rows = tokens.len();
    let mut data = vec![0.0; dim];
    data.extend((0..(rows - 1) * dim).map(|_| rng.random_range(-1.0..1.0)));
    let embeddings = Embeddings::new(
        Vocabulary::from_parts(tokens, vec![1; rows])?,
        EmbeddingMatrix::new(rows, dim, data)?,
    )?;

    let taxonomy = Taxonomy::undhtc();
    let config = HmlstmConfig {
        embedding_dim: dim,
        hidden1: spec.hidden,
        hidden2: spec.hidden,
        dense_size: spec.hidden,
        max_seq_len: spec.tokens,
        seed: spec.seed,
        ..HmlstmConfig::default()
    };
    let mut params = HmlstmParams::init(&config, taxonomy.level_width(1), taxonomy.level_width(2));
    for s in params.slices_mut() {
        for v in s.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let docs: Vec<EncodedDoc> = (0..spec.docs)
        .map(|_| {
            let leaf = rng.random_range(0..9);
            EncodedDoc {
                ids: (0..spec.tokens).map(|_| rng.random_range(2..rows)).collect(),
                targets: [leaf / 3, leaf],
            }
        })
        .collect();
    let seeds: Vec<u64> = (0..spec.docs as u64).map(|i| dropout_seed(spec.seed, 0, i)).collect();
    let obj = Objective {
        embeddings: &embeddings,
        dropout: config.dropout,
        max_seq_len: config.max_seq_len,
    };
    let (_, grads, _) = obj.batch_loss_grad(&params, &docs, Mode::Train, &seeds)?;
    Ok(crate::nn::grad_check(
        &params,
        &grads,
        |p| obj.batch_loss(p, &docs, Mode::Train, &seeds).unwrap_or(f64::NAN),
        spec.eps,
        None,
    ))
}
