//! End-to-end helpers shared by the command line, the tests and the Python
//! bindings: embedding training, model training and batch prediction.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::LearnerSpec;
use crate::corpus::{Dataset, Taxonomy};
use crate::embedding::{build_vocab, train_cbow, CbowParams, Embeddings};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{ConsistencyMode, HierPrediction, History, HmlstmConfig, HmlstmModel};
use crate::preprocess::{preprocess_document, preprocess_text, PreprocessOptions, TokenSequence};
use crate::strategies::{featurize, train_hier, FeatureKind, HierClassifier, Strategy};

pub fn tokenize_dataset(dataset: &Dataset, options: &PreprocessOptions) -> Vec<TokenSequence> {
    dataset
        .documents
        .par_iter()
        .map(|d| preprocess_document(d, options))
        .collect()
}

/// Builds a vocabulary from `dataset` and trains CBOW vectors over it.
pub fn train_embeddings(
    dataset: &Dataset,
    options: &PreprocessOptions,
    params: &CbowParams,
) -> Result<(Embeddings, Vec<f64>)> {
    let corpus = tokenize_dataset(dataset, options);
    let vocab = build_vocab(&corpus, params.min_count)?;
    let out = train_cbow(&corpus, &vocab, params)?;
    Ok((Embeddings::new(vocab, out.matrix)?, out.epoch_losses))
}

pub fn train_hmlstm(
    train: &Dataset,
    embeddings: Arc<Embeddings>,
    options: &PreprocessOptions,
    config: &HmlstmConfig,
) -> Result<(HmlstmModel, History)> {
    let mut model = HmlstmModel::build(&train.taxonomy, embeddings, config)?;
    let docs = model.encode(train, options)?;
    let history = model.train(&docs)?;
    Ok((model, history))
}

/// A strategy classifier together with the feature settings it was trained
/// with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyModel {
    pub learner: LearnerSpec,
    pub features: FeatureKind,
    pub max_seq_len: usize,
    pub classifier: HierClassifier,
    #[serde(skip)]
    pub embeddings: Option<Arc<Embeddings>>,
}

pub struct StrategySettings {
    pub strategy: Strategy,
    pub learner: LearnerSpec,
    pub features: FeatureKind,
    pub max_seq_len: usize,
    pub mask: bool,
}

pub fn features_for(
    dataset: &Dataset,
    embeddings: &Embeddings,
    options: &PreprocessOptions,
    kind: FeatureKind,
    max_seq_len: usize,
) -> Vec<Vec<f64>> {
    tokenize_dataset(dataset, options)
        .par_iter()
        .map(|t| featurize(embeddings, t, kind, max_seq_len))
        .collect()
}

pub fn train_strategy(
    train: &Dataset,
    embeddings: Arc<Embeddings>,
    options: &PreprocessOptions,
    settings: &StrategySettings,
) -> Result<StrategyModel> {
    let x = features_for(train, &embeddings, options, settings.features, settings.max_seq_len);
    let gold: Vec<Vec<String>> = train.documents.iter().map(|d| d.gold.clone()).collect();
    let spec = settings.learner.clone();
    let classifier = train_hier(
        settings.strategy,
        move || spec.build(),
        &train.taxonomy,
        &x,
        &gold,
        settings.mask,
    )?;
    Ok(StrategyModel {
        learner: settings.learner.clone(),
        features: settings.features,
        max_seq_len: settings.max_seq_len,
        classifier,
        embeddings: Some(embeddings),
    })
}

/// Anything that can be saved as a checkpoint and asked for label paths.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Hmlstm(HmlstmModel),
    Strategy(StrategyModel),
}

/// One prediction: the chosen path plus per-label scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPrediction {
    pub labels: Vec<String>,
    pub levels: Vec<Vec<(String, f64)>>,
    pub consistent: bool,
}

impl TrainedModel {
    pub fn taxonomy(&self) -> &Taxonomy {
        match self {
            TrainedModel::Hmlstm(m) => &m.taxonomy,
            TrainedModel::Strategy(m) => &m.classifier.taxonomy,
        }
    }

    pub fn embeddings(&self) -> Result<&Arc<Embeddings>> {
        match self {
            TrainedModel::Hmlstm(m) => Ok(&m.embeddings),
            TrainedModel::Strategy(m) => m
                .embeddings
                .as_ref()
                .ok_or_else(|| Error::Checkpoint("strategy model has no embeddings attached".into())),
        }
    }

    /// A short description such as `hmlstm` or `per-parent:logreg`.
    pub fn kind_name(&self) -> String {
        match self {
            TrainedModel::Hmlstm(_) => "hmlstm".into(),
            TrainedModel::Strategy(m) => {
                format!("{}:{}", m.classifier.strategy.name(), m.learner.kind.name())
            }
        }
    }

    fn predict_tokens(&self, tokens: &[String], mode: Option<ConsistencyMode>) -> Result<PathPrediction> {
        let tax = self.taxonomy();
        match self {
            TrainedModel::Hmlstm(m) => {
                let ids = m.embeddings.ids(tokens, m.config.max_seq_len);
                let p: HierPrediction = m.predict(&ids, mode.unwrap_or(m.config.consistency))?;
                let named = |k: usize, probs: &[f64]| {
                    tax.labels_at_level(k)
                        .into_iter()
                        .map(str::to_string)
                        .zip(probs.iter().copied())
                        .collect()
                };
                Ok(PathPrediction {
                    consistent: tax.is_consistent(&p.labels),
                    levels: vec![named(1, &p.level1), named(2, &p.level2)],
                    labels: p.labels,
                })
            }
            TrainedModel::Strategy(m) => {
                let emb = self.embeddings()?;
                let x = featurize(emb, tokens, m.features, m.max_seq_len);
                let labels = m.classifier.predict(&x);
                let scores = m.classifier.label_probabilities(&x);
                let levels = (1..=tax.levels())
                    .map(|k| {
                        tax.labels_at_level(k)
                            .into_iter()
                            .filter_map(|l| scores.iter().find(|(n, _)| n == l).cloned())
                            .collect()
                    })
                    .collect();
                Ok(PathPrediction {
                    consistent: tax.is_consistent(&labels),
                    labels,
                    levels,
                })
            }
        }
    }

    pub fn predict_text(
        &self,
        text: &str,
        options: &PreprocessOptions,
        mode: Option<ConsistencyMode>,
    ) -> Result<PathPrediction> {
        self.predict_tokens(&preprocess_text(text, options), mode)
    }

    pub fn predict_dataset(
        &self,
        dataset: &Dataset,
        options: &PreprocessOptions,
        mode: Option<ConsistencyMode>,
    ) -> Result<Vec<PathPrediction>> {
        dataset
            .documents
            .par_iter()
            .map(|d| self.predict_tokens(&preprocess_document(d, options), mode))
            .collect()
    }

    pub fn evaluate(
        &self,
        dataset: &Dataset,
        options: &PreprocessOptions,
        mode: Option<ConsistencyMode>,
    ) -> Result<MetricsReport> {
        let preds: Vec<Vec<String>> = self
            .predict_dataset(dataset, options, mode)?
            .into_iter()
            .map(|p| p.labels)
            .collect();
        let gold: Vec<&Vec<String>> = dataset.documents.iter().map(|d| &d.gold).collect();
        let gold: Vec<Vec<&str>> = gold.iter().map(|g| g.iter().map(String::as_str).collect()).collect();
        evaluate(&preds, &gold, self.taxonomy())
    }
}
