//! Ways of arranging base learners over a label tree: flat over leaves,
//! global binary relevance, one binary learner per node, one multiclass
//! learner per parent, and one multiclass learner per level.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaseLearner, Learner};
use crate::corpus::Taxonomy;
use crate::embedding::{bag_of_words, Embeddings};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Flat,
    Global,
    PerNode,
    PerParent,
    PerLevel,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Flat,
        Strategy::Global,
        Strategy::PerNode,
        Strategy::PerParent,
        Strategy::PerLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Flat => "flat",
            Strategy::Global => "global",
            Strategy::PerNode => "per-node",
            Strategy::PerParent => "per-parent",
            Strategy::PerLevel => "per-level",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown strategy {s:?} (expected flat, global, per-node, per-parent or per-level)"
                ))
            })
    }
}

/// Document representation fed to the base learners.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Mean of the word vectors.
    #[default]
    DocVector,
    /// Binary presence vector over the vocabulary.
    BagOfWords,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "doc-vector" => Ok(FeatureKind::DocVector),
            "bag-of-words" => Ok(FeatureKind::BagOfWords),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature kind {other:?} (expected doc-vector or bag-of-words)"
            ))),
        }
    }
}

pub fn featurize(embeddings: &Embeddings, tokens: &[String], kind: FeatureKind, max_len: usize) -> Vec<f64> {
    match kind {
        FeatureKind::DocVector => embeddings.mean_vector(tokens, max_len),
        FeatureKind::BagOfWords => bag_of_words(&embeddings.vocab, tokens),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerRole {
    Multiclass,
    /// Two classes: index 0 is "not this node", index 1 is "this node".
    Binary,
}

/// One trained learner and the label set it decides between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeLearner<L> {
    /// `root`, a node id, or `level-<k>`.
    pub key: String,
    pub role: LearnerRole,
    pub classes: Vec<String>,
    pub learner: L,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierClassifier<L = Learner> {
    pub strategy: Strategy,
    pub taxonomy: Taxonomy,
    /// Restrict each level to children of the level above (per-level only).
    pub mask: bool,
    pub learners: Vec<NodeLearner<L>>,
}

pub const ROOT_KEY: &str = "root";

fn level_key(level: usize) -> String {
    format!("level-{level}")
}

struct Job {
    key: String,
    role: LearnerRole,
    classes: Vec<String>,
    rows: Vec<usize>,
    targets: Vec<usize>,
}

fn sorted(v: impl IntoIterator<Item = String>) -> Vec<String> {
    v.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

/// A multiclass job over the classes actually present among `labels`.
fn multiclass_job(key: String, rows: Vec<usize>, labels: Vec<&str>) -> Result<Job> {
    let classes = sorted(labels.iter().map(|s| s.to_string()));
    if classes.len() < 2 {
        return Err(Error::InsufficientClasses { node: key });
    }
    let targets = labels
        .iter()
        .map(|l| classes.binary_search_by(|c| c.as_str().cmp(l)).expect("present"))
        .collect();
    Ok(Job {
        key,
        role: LearnerRole::Multiclass,
        classes,
        rows,
        targets,
    })
}

fn binary_job(node: &str, gold: &[Vec<String>]) -> Result<Job> {
    let targets: Vec<usize> = gold.iter().map(|p| p.iter().any(|l| l == node) as usize).collect();
    let positives = targets.iter().sum::<usize>();
    if positives == 0 || positives == targets.len() {
        return Err(Error::InsufficientClasses { node: node.to_string() });
    }
    Ok(Job {
        key: node.to_string(),
        role: LearnerRole::Binary,
        classes: vec![format!("not {node}"), node.to_string()],
        rows: (0..gold.len()).collect(),
        targets,
    })
}

fn plan(strategy: Strategy, taxonomy: &Taxonomy, gold: &[Vec<String>]) -> Result<Vec<Job>> {
    let all: Vec<usize> = (0..gold.len()).collect();
    match strategy {
        Strategy::Flat => {
            let leaves = gold.iter().map(|p| p.last().expect("non-empty path").as_str()).collect();
            Ok(vec![multiclass_job("flat".into(), all, leaves)?])
        }
        Strategy::Global | Strategy::PerNode => taxonomy
            .all_labels()
            .into_iter()
            .map(|node| binary_job(node, gold))
            .collect(),
        Strategy::PerParent => taxonomy
            .internal_nodes()
            .into_iter()
            .map(|parent| {
                let depth = parent.and_then(|p| taxonomy.level_of(p)).unwrap_or(0);
                let rows: Vec<usize> = all
                    .iter()
                    .copied()
                    .filter(|&i| parent.is_none_or(|p| gold[i][depth - 1] == p))
                    .collect();
                let labels = rows.iter().map(|&i| gold[i][depth].as_str()).collect();
                multiclass_job(parent.unwrap_or(ROOT_KEY).to_string(), rows, labels)
            })
            .collect(),
        Strategy::PerLevel => (1..=taxonomy.levels())
            .map(|k| {
                let labels = gold.iter().map(|p| p[k - 1].as_str()).collect();
                multiclass_job(level_key(k), all.clone(), labels)
            })
            .collect(),
    }
}

/// Trains every learner a strategy needs. Learners are independent and are
/// fitted in parallel; each comes fresh from `factory`.
pub fn train_hier<L, F>(
    strategy: Strategy,
    factory: F,
    taxonomy: &Taxonomy,
    features: &[Vec<f64>],
    gold: &[Vec<String>],
    mask: bool,
) -> Result<HierClassifier<L>>
where
    L: BaseLearner,
    F: Fn() -> L + Sync,
{
    if features.is_empty() {
        return Err(Error::EmptyCorpus("no training documents".into()));
    }
    if features.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} gold paths",
            features.len(),
            gold.len()
        )));
    }
    for (i, path) in gold.iter().enumerate() {
        if path.len() != taxonomy.levels() || !taxonomy.is_consistent(path) {
            return Err(Error::InvalidArgument(format!("gold path {i} is not a root-to-leaf path")));
        }
    }
    let jobs = plan(strategy, taxonomy, gold)?;
    let learners = jobs
        .into_par_iter()
        .map(|job| {
            let x: Vec<Vec<f64>> = job.rows.iter().map(|&i| features[i].clone()).collect();
            let mut learner = factory();
            learner.fit(&x, &job.targets, job.classes.len())?;
            Ok(NodeLearner {
                key: job.key,
                role: job.role,
                classes: job.classes,
                learner,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HierClassifier {
        strategy,
        taxonomy: taxonomy.clone(),
        mask,
        learners,
    })
}

/// Among root-to-leaf paths, prefers those whose every node scores at least
/// `threshold`; within that set (or among all paths if it is empty) picks the
/// largest score sum, ties going to the lexicographically smallest path.
pub fn resolve_path<F>(taxonomy: &Taxonomy, score: F, threshold: f64) -> Vec<String>
where
    F: Fn(&str) -> f64,
{
    let paths = taxonomy.leaf_paths();
    let passing: Vec<&Vec<String>> = paths
        .iter()
        .filter(|p| p.iter().all(|n| score(n) >= threshold))
        .collect();
    let candidates = if passing.is_empty() {
        paths.iter().collect()
    } else {
        passing
    };
    let mut best: Option<(f64, &Vec<String>)> = None;
    for p in candidates {
        let s: f64 = p.iter().map(|n| score(n)).sum();
        let better = match best {
            None => true,
            Some((bs, bp)) => s > bs || (s == bs && p < bp),
        };
        if better {
            best = Some((s, p));
        }
    }
    best.map(|(_, p)| p.clone()).unwrap_or_default()
}

pub const NODE_THRESHOLD: f64 = 0.5;

impl<L: BaseLearner> HierClassifier<L> {
    pub fn learner(&self, key: &str) -> Option<&NodeLearner<L>> {
        self.learners.iter().find(|l| l.key == key)
    }

    /// Swaps the learner stored under `key`, keeping its label set.
    pub fn replace_learner(&mut self, key: &str, learner: L) -> Result<L> {
        let slot = self
            .learners
            .iter_mut()
            .find(|l| l.key == key)
            .ok_or_else(|| Error::InvalidArgument(format!("no learner under key {key:?}")))?;
        Ok(std::mem::replace(&mut slot.learner, learner))
    }

    /// Converts the learners to another type, e.g. to wrap them.
    pub fn map_learners<M, F>(self, mut f: F) -> HierClassifier<M>
    where
        F: FnMut(&str, L) -> M,
    {
        HierClassifier {
            strategy: self.strategy,
            taxonomy: self.taxonomy,
            mask: self.mask,
            learners: self
                .learners
                .into_iter()
                .map(|n| NodeLearner {
                    learner: f(&n.key, n.learner),
                    key: n.key,
                    role: n.role,
                    classes: n.classes,
                })
                .collect(),
        }
    }

    fn choose(&self, key: &str, x: &[f64], allowed: Option<&[&str]>) -> String {
        let node = self.learner(key).expect("trained learner");
        let pick = match allowed {
            None => node.learner.predict(x),
            Some(allowed) => {
                let scores = node.learner.scores(x);
                let ok: Vec<usize> = (0..node.classes.len())
                    .filter(|&i| allowed.contains(&node.classes[i].as_str()))
                    .collect();
                match ok.iter().copied().reduce(|a, b| if scores[b] > scores[a] { b } else { a }) {
                    Some(i) => i,
                    None => {
                        let mut fallback: Vec<&str> = allowed.to_vec();
                        fallback.sort_unstable();
                        return fallback[0].to_string();
                    }
                }
            }
        };
        node.classes[pick].clone()
    }

    fn positive_probability(&self, key: &str, x: &[f64]) -> f64 {
        self.learner(key).expect("trained learner").learner.probabilities(x)[1]
    }

    /// A label path, one label per level.
    pub fn predict(&self, x: &[f64]) -> Vec<String> {
        let tax = &self.taxonomy;
        match self.strategy {
            Strategy::Flat => {
                let leaf = self.choose("flat", x, None);
                tax.path_to(&leaf).expect("leaf in taxonomy")
            }
            Strategy::Global | Strategy::PerNode => {
                resolve_path(tax, |n| self.positive_probability(n, x), NODE_THRESHOLD)
            }
            Strategy::PerParent => {
                let mut path: Vec<String> = Vec::new();
                let mut key = ROOT_KEY.to_string();
                while self.learner(&key).is_some() {
                    let next = self.choose(&key, x, None);
                    key = next.clone();
                    path.push(next);
                }
                path
            }
            Strategy::PerLevel => {
                let mut path: Vec<String> = Vec::new();
                for k in 1..=tax.levels() {
                    let allowed = match (self.mask, path.last()) {
                        (true, Some(parent)) => Some(tax.children(Some(parent))),
                        _ => None,
                    };
                    path.push(self.choose(&level_key(k), x, allowed.as_deref()));
                }
                path
            }
        }
    }

    /// Per-node scores in [0, 1] for every label of the taxonomy. Multiclass
    /// learners contribute their class probabilities.
    pub fn label_probabilities(&self, x: &[f64]) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for node in &self.learners {
            let p = node.learner.probabilities(x);
            match node.role {
                LearnerRole::Binary => out.push((node.key.clone(), p[1])),
                LearnerRole::Multiclass => {
                    out.extend(node.classes.iter().cloned().zip(p));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{LearnerKind, LearnerSpec};
    use crate::corpus::Taxonomy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Documents clustered around one point per leaf.
    fn blobs(per_leaf: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<String>>) {
        let tax = Taxonomy::undhtc();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut gold = Vec::new();
        for (i, path) in tax.leaf_paths().into_iter().enumerate() {
            for _ in 0..per_leaf {
                let mut v = vec![0.0; 9];
                v[i] = 3.0;
                v.iter_mut().for_each(|c| *c += rng.random_range(-0.5..0.5));
                x.push(v);
                gold.push(path.clone());
            }
        }
        (x, gold)
    }

    fn factory(kind: LearnerKind) -> impl Fn() -> Learner + Sync {
        let spec = LearnerSpec::new(kind);
        move || spec.build()
    }

    #[test]
    fn learner_counts() {
        let tax = Taxonomy::undhtc();
        let (x, gold) = blobs(5, 1);
        let count = |s| {
            train_hier(s, factory(LearnerKind::GaussianNb), &tax, &x, &gold, false)
                .unwrap()
                .learners
                .len()
        };
        assert_eq!(count(Strategy::Flat), 1);
        assert_eq!(count(Strategy::Global), 12);
        assert_eq!(count(Strategy::PerNode), 12);
        assert_eq!(count(Strategy::PerParent), 4);
        assert_eq!(count(Strategy::PerLevel), 2);

        let pp = train_hier(Strategy::PerParent, factory(LearnerKind::GaussianNb), &tax, &x, &gold, false).unwrap();
        let keys: Vec<&str> = pp.learners.iter().map(|l| l.key.as_str()).collect();
        assert_eq!(keys, ["root", "Sports", "Technology", "Entertainment"]);
        assert!(pp.learners.iter().all(|l| l.classes.len() == 3));
        let flat = train_hier(Strategy::Flat, factory(LearnerKind::GaussianNb), &tax, &x, &gold, false).unwrap();
        assert_eq!(flat.learners[0].classes.len(), 9);
    }

    #[test]
    fn every_strategy_and_learner_fits_blobs() {
        let tax = Taxonomy::undhtc();
        let (x, gold) = blobs(8, 2);
        for kind in [LearnerKind::GaussianNb, LearnerKind::LogReg, LearnerKind::LinearSvm, LearnerKind::Knn] {
            for s in Strategy::ALL {
                let c = train_hier(s, factory(kind), &tax, &x, &gold, true).unwrap();
                let right = x.iter().zip(&gold).filter(|(v, g)| c.predict(v) == **g).count();
                assert!(right as f64 / x.len() as f64 > 0.9, "{s:?} {kind:?}: {right}");
                for v in &x {
                    assert!(tax.is_consistent(&c.predict(v)));
                }
            }
        }
    }

    #[test]
    fn flat_prediction_adds_ancestors() {
        let tax = Taxonomy::undhtc();
        let (x, gold) = blobs(5, 3);
        let c = train_hier(Strategy::Flat, factory(LearnerKind::GaussianNb), &tax, &x, &gold, false).unwrap();
        assert_eq!(c.predict(&x[0]), vec!["Sports", "Cricket"]);
    }

    #[test]
    fn node_path_resolution() {
        let tax = Taxonomy::undhtc();
        let scores = |n: &str| match n {
            "Sports" => 0.9,
            "Cricket" => 0.2,
            "Hockey" => 0.6,
            _ => 0.1,
        };
        assert_eq!(resolve_path(&tax, scores, 0.5), vec!["Sports", "Hockey"]);

        // exhaustive sum oracle
        let best = tax
            .leaf_paths()
            .into_iter()
            .max_by(|a, b| {
                let s = |p: &Vec<String>| p.iter().map(|n| scores(n)).sum::<f64>();
                s(a).total_cmp(&s(b))
            })
            .unwrap();
        assert_eq!(best, vec!["Sports", "Hockey"]);

        // nothing passes: fall back to the best sum; equal sums go lexicographic
        assert_eq!(resolve_path(&tax, |_| 0.1, 0.5), vec!["Entertainment", "Fashion"]);
    }

    #[test]
    fn missing_classes_name_the_node() {
        let tax = Taxonomy::undhtc();
        let (x, mut gold) = blobs(3, 4);
        for p in gold.iter_mut() {
            if p[0] == "Technology" {
                *p = vec!["Technology".into(), "Internet".into()];
            }
        }
        let err = train_hier(Strategy::PerParent, factory(LearnerKind::GaussianNb), &tax, &x, &gold, false);
        match err {
            Err(Error::InsufficientClasses { node }) => assert_eq!(node, "Technology"),
            other => panic!("{other:?}"),
        }
        let err = train_hier(Strategy::PerNode, factory(LearnerKind::GaussianNb), &tax, &x, &gold, false);
        assert!(matches!(err, Err(Error::InsufficientClasses { node }) if node == "Applications"));
    }

    #[test]
    fn per_level_mask_controls_consistency() {
        let tax = Taxonomy::undhtc();
        let (x, gold) = blobs(5, 5);
        let mut c = train_hier(Strategy::PerLevel, factory(LearnerKind::GaussianNb), &tax, &x, &gold, false).unwrap();
        // blend a Sports point and a Mobile point so the levels disagree
        let mut mixed = vec![0.0; 9];
        mixed[0] = 2.0;
        mixed[5] = 2.2;
        let free = c.predict(&mixed);
        c.mask = true;
        let masked = c.predict(&mixed);
        assert!(tax.is_consistent(&masked));
        if tax.is_consistent(&free) {
            assert_eq!(free, masked);
        } else {
            assert_eq!(masked[0], free[0]);
        }
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!("per-node".parse::<Strategy>().is_ok());
        assert!("tree".parse::<Strategy>().is_err());
        assert!("doc-vector".parse::<FeatureKind>().is_ok());
    }
}
