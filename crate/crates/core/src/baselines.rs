//! Classical learners: Gaussian naive Bayes, one-vs-rest logistic regression,
//! one-vs-rest linear SVM and k-nearest neighbours.
//!
//! Class indices are positions in whatever label list the caller uses; when
//! two classes tie, the lower index wins.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::sigmoid;

pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Something that learns a multiclass decision from dense features.
pub trait BaseLearner: Send + Sync {
    fn fit(&mut self, x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<()>;

    /// Raw per-class scores; larger means more likely.
    fn scores(&self, x: &[f64]) -> Vec<f64>;

    /// Per-class probabilities summing to one.
    fn probabilities(&self, x: &[f64]) -> Vec<f64>;

    fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    fn n_classes(&self) -> usize;
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_training_set(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::EmptyCorpus("no training samples".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} feature rows but {} labels", x.len(), y.len())));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {n_classes} classes")));
    }
    Ok(dim)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|p| *p /= s);
    } else {
        let n = v.len() as f64;
        v.iter_mut().for_each(|p| *p = 1.0 / n);
    }
    v
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub log_prior: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl BaseLearner for GaussianNb {
    fn fit(&mut self, x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<()> {
        let dim = check_training_set(x, y, n_classes)?;
        let mut count = vec![0usize; n_classes];
        let mut mean = vec![vec![0.0; dim]; n_classes];
        for (row, &c) in x.iter().zip(y) {
            count[c] += 1;
            for (m, v) in mean[c].iter_mut().zip(row) {
                *m += v;
            }
        }
        if let Some(class) = count.iter().position(|&n| n == 0) {
            return Err(Error::ClassAbsent { class });
        }
        for (m, &n) in mean.iter_mut().zip(&count) {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut var = vec![vec![0.0; dim]; n_classes];
        for (row, &c) in x.iter().zip(y) {
            for ((s, v), m) in var[c].iter_mut().zip(row).zip(&mean[c]) {
                *s += (v - m) * (v - m);
            }
        }
        for (s, &n) in var.iter_mut().zip(&count) {
            s.iter_mut().for_each(|v| *v = (*v / n as f64).max(VARIANCE_FLOOR));
        }
        let total = x.len() as f64;
        self.log_prior = count.iter().map(|&n| (n as f64 / total).ln()).collect();
        self.mean = mean;
        self.var = var;
        Ok(())
    }

    /// Log prior plus the summed per-dimension log Gaussian densities.
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        (0..self.log_prior.len())
            .map(|c| {
                let mut s = self.log_prior[c];
                for ((v, m), var) in x.iter().zip(&self.mean[c]).zip(&self.var[c]) {
                    s -= 0.5 * (ln_2pi + var.ln()) + (v - m) * (v - m) / (2.0 * var);
                }
                s
            })
            .collect()
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        crate::nn::softmax(&self.scores(x))
    }

    fn n_classes(&self) -> usize {
        self.log_prior.len()
    }
}

/// Optimizer settings shared by the linear learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// L2 strength for logistic regression.
    pub l2: f64,
    /// Hinge-loss weight for the SVM.
    pub c: f64,
    pub seed: u64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            epochs: 50,
            lr: 0.1,
            batch_size: 32,
            l2: 1e-4,
            c: 1.0,
            seed: 42,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearLoss {
    Logistic,
    Hinge,
}

/// A binary linear scorer `w·x + b`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearBinary {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearBinary {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Mini-batch (sub)gradient descent from zero. Targets are ±1.
    ///
    /// Logistic: `mean log(1 + e^{-y m}) + l2/2 ||w||²`.
    /// Hinge: `1/2 ||w||² + c · mean max(0, 1 - y m)`.
    pub fn fit(x: &[Vec<f64>], targets: &[f64], loss: LinearLoss, params: &LinearParams) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyCorpus("no training samples".into()));
        }
        if params.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        let dim = x[0].len();
        let mut model = LinearBinary {
            w: vec![0.0; dim],
            b: 0.0,
        };
        let mut order: Vec<usize> = (0..x.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut gw = vec![0.0; dim];
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(params.batch_size) {
                gw.iter_mut().for_each(|g| *g = 0.0);
                let mut gb = 0.0;
                for &i in batch {
                    let y = targets[i];
                    let m = model.margin(&x[i]);
                    let coef = match loss {
                        LinearLoss::Logistic => -y * sigmoid(-y * m),
                        LinearLoss::Hinge if y * m < 1.0 => -y * params.c,
                        LinearLoss::Hinge => 0.0,
                    };
                    if coef != 0.0 {
                        for (g, v) in gw.iter_mut().zip(&x[i]) {
                            *g += coef * v;
                        }
                        gb += coef;
                    }
                }
                let inv = 1.0 / batch.len() as f64;
                let reg = match loss {
                    LinearLoss::Logistic => params.l2,
                    LinearLoss::Hinge => 1.0,
                };
                for (w, g) in model.w.iter_mut().zip(&gw) {
                    *w -= params.lr * (g * inv + reg * *w);
                }
                model.b -= params.lr * gb * inv;
            }
        }
        if !model.b.is_finite() || model.w.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("linear model diverged".into()));
        }
        Ok(model)
    }
}

/// One binary linear model per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearOvr {
    pub loss: LinearLoss,
    pub params: LinearParams,
    pub models: Vec<LinearBinary>,
}

impl LinearOvr {
    pub fn logistic(params: LinearParams) -> Self {
        LinearOvr {
            loss: LinearLoss::Logistic,
            params,
            models: Vec::new(),
        }
    }

    pub fn svm(params: LinearParams) -> Self {
        LinearOvr {
            loss: LinearLoss::Hinge,
            params,
            models: Vec::new(),
        }
    }
}

impl BaseLearner for LinearOvr {
    fn fit(&mut self, x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<()> {
        check_training_set(x, y, n_classes)?;
        self.models = (0..n_classes)
            .into_par_iter()
            .map(|c| {
                let t: Vec<f64> = y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
                LinearBinary::fit(x, &t, self.loss, &self.params)
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Sigmoid probabilities for logistic loss, margins for hinge loss.
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.models
            .iter()
            .map(|m| match self.loss {
                LinearLoss::Logistic => sigmoid(m.margin(x)),
                LinearLoss::Hinge => m.margin(x),
            })
            .collect()
    }

    /// Per-class sigmoids, normalized across classes.
    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        normalize(self.models.iter().map(|m| sigmoid(m.margin(x))).collect())
    }

    fn n_classes(&self) -> usize {
        self.models.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Neighbour {
    dist2: f64,
    index: usize,
}

impl Eq for Neighbour {}

impl PartialOrd for Neighbour {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbour {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest training rows, nearest first. Equal distances
/// are ordered by index.
pub fn nearest(train: &[Vec<f64>], x: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (index, row) in train.iter().enumerate() {
        let n = Neighbour {
            dist2: dist2(row, x),
            index,
        };
        if heap.len() < k {
            heap.push(n);
        } else if heap.peek().is_some_and(|top| n < *top) {
            heap.pop();
            heap.push(n);
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|n| (n.index, n.dist2.sqrt()))
        .collect()
}

/// Majority vote among the `k` nearest neighbours by Euclidean distance.
/// Vote ties go to the label with the larger summed inverse distance, then to
/// the smallest label.
pub fn knn_predict<L: Ord + Clone>(train_x: &[Vec<f64>], train_y: &[L], x: &[f64], k: usize) -> Result<L> {
    if train_x.is_empty() {
        return Err(Error::EmptyCorpus("kNN needs at least one training point".into()));
    }
    if train_x.len() != train_y.len() {
        return Err(Error::Shape("features and labels differ in length".into()));
    }
    if k == 0 || k > train_x.len() {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={}, got {k}",
            train_x.len()
        )));
    }
    let mut tally: BTreeMap<&L, (usize, f64)> = BTreeMap::new();
    for (i, d) in nearest(train_x, x, k) {
        let e = tally.entry(&train_y[i]).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += 1.0 / d;
    }
    let mut best: Option<(&L, (usize, f64))> = None;
    for (label, stat) in tally {
        let better = match best {
            None => true,
            Some((_, b)) => stat.0 > b.0 || (stat.0 == b.0 && stat.1 > b.1),
        };
        if better {
            best = Some((label, stat));
        }
    }
    Ok(best.expect("k >= 1").0.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Knn {
    pub fn new(k: usize) -> Self {
        Knn {
            k,
            x: Vec::new(),
            y: Vec::new(),
            classes: 0,
        }
    }

    fn votes(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.classes];
        for (i, _) in nearest(&self.x, x, self.k.min(self.x.len())) {
            v[self.y[i]] += 1.0;
        }
        v
    }
}

impl BaseLearner for Knn {
    fn fit(&mut self, x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<()> {
        check_training_set(x, y, n_classes)?;
        if self.k == 0 || self.k > x.len() {
            return Err(Error::InvalidArgument(format!("k must lie in 1..={}, got {}", x.len(), self.k)));
        }
        self.x = x.to_vec();
        self.y = y.to_vec();
        self.classes = n_classes;
        Ok(())
    }

    /// Vote counts.
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.votes(x)
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        normalize(self.votes(x))
    }

    fn predict(&self, x: &[f64]) -> usize {
        knn_predict(&self.x, &self.y, x, self.k).expect("fitted")
    }

    fn n_classes(&self) -> usize {
        self.classes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    GaussianNb,
    LogReg,
    LinearSvm,
    Knn,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::GaussianNb => "nb",
            LearnerKind::LogReg => "logreg",
            LearnerKind::LinearSvm => "svm",
            LearnerKind::Knn => "knn",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nb" | "gaussian-nb" => Ok(LearnerKind::GaussianNb),
            "logreg" | "lr" => Ok(LearnerKind::LogReg),
            "svm" | "linear-svm" => Ok(LearnerKind::LinearSvm),
            "knn" => Ok(LearnerKind::Knn),
            other => Err(Error::InvalidArgument(format!(
                "unknown learner {other:?} (expected nb, logreg, svm or knn)"
            ))),
        }
    }
}

/// Everything needed to construct an untrained learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub linear: LinearParams,
    pub k: usize,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        LearnerSpec {
            kind,
            linear: LinearParams::default(),
            k: 3,
        }
    }

    pub fn build(&self) -> Learner {
        match self.kind {
            LearnerKind::GaussianNb => Learner::GaussianNb(GaussianNb::default()),
            LearnerKind::LogReg => Learner::Linear(LinearOvr::logistic(self.linear.clone())),
            LearnerKind::LinearSvm => Learner::Linear(LinearOvr::svm(self.linear.clone())),
            LearnerKind::Knn => Learner::Knn(Knn::new(self.k)),
        }
    }
}

/// Any of the provided learners, serializable as a unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Learner {
    GaussianNb(GaussianNb),
    Linear(LinearOvr),
    Knn(Knn),
}

impl Learner {
    fn inner(&self) -> &dyn BaseLearner {
        match self {
            Learner::GaussianNb(m) => m,
            Learner::Linear(m) => m,
            Learner::Knn(m) => m,
        }
    }
}

impl BaseLearner for Learner {
    fn fit(&mut self, x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<()> {
        match self {
            Learner::GaussianNb(m) => m.fit(x, y, n_classes),
            Learner::Linear(m) => m.fit(x, y, n_classes),
            Learner::Knn(m) => m.fit(x, y, n_classes),
        }
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.inner().scores(x)
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.inner().probabilities(x)
    }

    fn predict(&self, x: &[f64]) -> usize {
        self.inner().predict(x)
    }

    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }
}
