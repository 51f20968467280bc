//! Run configuration in TOML.
//!
//! ```toml
//! seed = 42
//!
//! [data]
//! test_fraction = 0.2
//!
//! [preprocess]
//! remove_stopwords = true
//! # stopwords = "my_list.txt"
//!
//! [cbow]
//! dim = 100
//! window = 5
//! min_count = 5
//! negatives = 5
//! epochs = 5
//! lr = 0.025
//! subsample = 0.001
//!
//! [hmlstm]
//! hidden1 = 128
//! hidden2 = 128
//! dense_size = 64
//! max_seq_len = 128
//! batch_size = 32
//! dropout = 0.5
//! lr = 0.001
//! epochs = 10
//! patience = 3
//! validation_fraction = 0.2
//! consistency = "mask"
//!
//! [baseline]
//! features = "doc-vector"
//! max_seq_len = 128
//! epochs = 50
//! lr = 0.1
//! batch_size = 32
//! l2 = 0.0001
//! c = 1.0
//! k = 3
//! mask = false
//! ```
//!
//! Every key is optional. Unknown sections or keys, wrong types and
//! out-of-range values are all reported together.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::baselines::{LearnerKind, LearnerSpec, LinearParams};
use crate::embedding::CbowParams;
use crate::error::{Error, Result};
use crate::model::{ConsistencyMode, HmlstmConfig};
use crate::preprocess::{PreprocessOptions, StopwordList};
use crate::strategies::FeatureKind;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub remove_stopwords: bool,
    pub stopwords: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub features: FeatureKind,
    pub max_seq_len: usize,
    pub linear: LinearParams,
    pub k: usize,
    pub mask: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub cbow: CbowParams,
    pub hmlstm: HmlstmConfig,
    pub baseline: BaselineConfig,
}

impl Default for Config {
    fn default() -> Self {
        let mut c = Config {
            seed: 42,
            data: DataConfig { test_fraction: 0.2 },
            preprocess: PreprocessConfig {
                remove_stopwords: true,
                stopwords: None,
            },
            cbow: CbowParams::default(),
            hmlstm: HmlstmConfig::default(),
            baseline: BaselineConfig {
                features: FeatureKind::DocVector,
                max_seq_len: 128,
                linear: LinearParams::default(),
                k: 3,
                mask: false,
            },
        };
        c.set_seed(42);
        c
    }
}

/// Reads typed values out of one TOML table, recording problems instead of
/// stopping at the first.
struct Reader<'a> {
    section: &'a str,
    table: Table,
    errors: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn where_(&self, key: &str) -> String {
        if self.section.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.section)
        }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    fn wrong(&mut self, key: &str, expected: &str, got: &Value) {
        let at = self.where_(key);
        self.errors.push(format!("{at}: expected {expected}, got {}", got.type_str()));
    }

    fn usize(&mut self, key: &str, slot: &mut usize) {
        match self.take(key) {
            None => {}
            Some(Value::Integer(i)) if i >= 0 => *slot = i as usize,
            Some(Value::Integer(i)) => {
                let at = self.where_(key);
                self.errors.push(format!("{at}: must be non-negative, got {i}"));
            }
            Some(v) => self.wrong(key, "integer", &v),
        }
    }

    fn u64(&mut self, key: &str, slot: &mut u64) {
        let mut v = *slot as usize;
        self.usize(key, &mut v);
        *slot = v as u64;
    }

    fn f64(&mut self, key: &str, slot: &mut f64) {
        match self.take(key) {
            None => {}
            Some(Value::Float(f)) => *slot = f,
            Some(Value::Integer(i)) => *slot = i as f64,
            Some(v) => self.wrong(key, "number", &v),
        }
    }

    fn bool(&mut self, key: &str, slot: &mut bool) {
        match self.take(key) {
            None => {}
            Some(Value::Boolean(b)) => *slot = b,
            Some(v) => self.wrong(key, "boolean", &v),
        }
    }

    fn parsed<T: std::str::FromStr<Err = Error>>(&mut self, key: &str, slot: &mut T) {
        match self.take(key) {
            None => {}
            Some(Value::String(s)) => match s.parse() {
                Ok(v) => *slot = v,
                Err(e) => {
                    let at = self.where_(key);
                    self.errors.push(format!("{at}: {e}"));
                }
            },
            Some(v) => self.wrong(key, "string", &v),
        }
    }

    fn path(&mut self, key: &str, slot: &mut Option<PathBuf>) {
        match self.take(key) {
            None => {}
            Some(Value::String(s)) => *slot = Some(PathBuf::from(s)),
            Some(v) => self.wrong(key, "string", &v),
        }
    }

    fn finish(self) {
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        for k in keys {
            let at = self.where_(k);
            self.errors.push(format!("{at}: unknown key"));
        }
    }
}

fn section(root: &mut Table, name: &str, errors: &mut Vec<String>) -> Table {
    match root.remove(name) {
        None => Table::new(),
        Some(Value::Table(t)) => t,
        Some(v) => {
            errors.push(format!("{name}: expected a section, got {}", v.type_str()));
            Table::new()
        }
    }
}

impl Config {
    /// Parses TOML text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let mut cfg = Config::default();
        let mut errors = Vec::new();

        let tables: Vec<(&str, Table)> = ["data", "preprocess", "cbow", "hmlstm", "baseline"]
            .into_iter()
            .map(|name| (name, section(&mut root, name, &mut errors)))
            .collect();

        let mut seed = None;
        {
            let mut r = Reader {
                section: "",
                table: root,
                errors: &mut errors,
            };
            if r.table.contains_key("seed") {
                let mut s = 0u64;
                r.u64("seed", &mut s);
                seed = Some(s);
            }
            r.finish();
        }

        for (name, table) in tables {
            let mut r = Reader {
                section: name,
                table,
                errors: &mut errors,
            };
            match name {
                "data" => r.f64("test_fraction", &mut cfg.data.test_fraction),
                "preprocess" => {
                    r.bool("remove_stopwords", &mut cfg.preprocess.remove_stopwords);
                    r.path("stopwords", &mut cfg.preprocess.stopwords);
                }
                "cbow" => {
                    let c = &mut cfg.cbow;
                    r.usize("dim", &mut c.dim);
                    r.usize("window", &mut c.window);
                    r.u64("min_count", &mut c.min_count);
                    r.usize("negatives", &mut c.negatives);
                    r.usize("epochs", &mut c.epochs);
                    r.f64("lr", &mut c.initial_lr);
                    r.f64("subsample", &mut c.subsample);
                }
                "hmlstm" => {
                    let h = &mut cfg.hmlstm;
                    r.usize("hidden1", &mut h.hidden1);
                    r.usize("hidden2", &mut h.hidden2);
                    r.usize("dense_size", &mut h.dense_size);
                    r.usize("max_seq_len", &mut h.max_seq_len);
                    r.usize("batch_size", &mut h.batch_size);
                    r.f64("dropout", &mut h.dropout);
                    r.f64("lr", &mut h.lr);
                    r.usize("epochs", &mut h.epochs);
                    r.usize("patience", &mut h.patience);
                    r.f64("validation_fraction", &mut h.validation_fraction);
                    r.parsed::<ConsistencyMode>("consistency", &mut h.consistency);
                }
                "baseline" => {
                    let b = &mut cfg.baseline;
                    r.parsed::<FeatureKind>("features", &mut b.features);
                    r.usize("max_seq_len", &mut b.max_seq_len);
                    r.usize("epochs", &mut b.linear.epochs);
                    r.f64("lr", &mut b.linear.lr);
                    r.usize("batch_size", &mut b.linear.batch_size);
                    r.f64("l2", &mut b.linear.l2);
                    r.f64("c", &mut b.linear.c);
                    r.usize("k", &mut b.k);
                    r.bool("mask", &mut b.mask);
                }
                _ => unreachable!(),
            }
            r.finish();
        }

        cfg.hmlstm.embedding_dim = cfg.cbow.dim;
        if let Some(s) = seed {
            cfg.set_seed(s);
        }
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    /// Every range violation across sections.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let tf = self.data.test_fraction;
        if !(tf > 0.0 && tf < 1.0) {
            v.push(format!("data.test_fraction must lie in (0, 1), got {tf}"));
        }
        if let Err(Error::InvalidArgument(msg)) = self.cbow.validate() {
            v.extend(msg.split("; ").map(|m| format!("cbow.{m}")));
        }
        v.extend(
            self.hmlstm
                .violations()
                .into_iter()
                .filter(|m| !m.starts_with("embedding_dim"))
                .map(|m| format!("hmlstm.{m}")),
        );
        let b = &self.baseline;
        if b.max_seq_len < 1 {
            v.push("baseline.max_seq_len must be >= 1".into());
        }
        if b.linear.batch_size < 1 {
            v.push("baseline.batch_size must be >= 1".into());
        }
        if !(b.linear.lr > 0.0 && b.linear.lr.is_finite()) {
            v.push(format!("baseline.lr must be positive, got {}", b.linear.lr));
        }
        if b.linear.l2.is_nan() || b.linear.l2 < 0.0 {
            v.push(format!("baseline.l2 must be >= 0, got {}", b.linear.l2));
        }
        if b.linear.c.is_nan() || b.linear.c < 0.0 {
            v.push(format!("baseline.c must be >= 0, got {}", b.linear.c));
        }
        if b.k < 1 {
            v.push("baseline.k must be >= 1".into());
        }
        v
    }

    /// Points every random stream at `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.cbow.seed = seed;
        self.hmlstm.seed = seed;
        self.baseline.linear.seed = seed;
    }

    pub fn preprocess_options(&self) -> Result<PreprocessOptions> {
        if !self.preprocess.remove_stopwords {
            return Ok(PreprocessOptions::without_stopwords());
        }
        let stopwords = match &self.preprocess.stopwords {
            Some(path) => StopwordList::from_file(path)?,
            None => StopwordList::default_urdu(),
        };
        Ok(PreprocessOptions {
            remove_stopwords: true,
            stopwords,
        })
    }

    pub fn learner_spec(&self, kind: LearnerKind) -> LearnerSpec {
        LearnerSpec {
            kind,
            linear: self.baseline.linear.clone(),
            k: self.baseline.k,
        }
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        let h = &self.hmlstm;
        let c = &self.cbow;
        let b = &self.baseline;
        let feature = match b.features {
            FeatureKind::DocVector => "doc-vector",
            FeatureKind::BagOfWords => "bag-of-words",
        };
        let consistency = match h.consistency {
            ConsistencyMode::Mask => "mask",
            ConsistencyMode::ArgmaxFree => "argmax-free",
        };
        let stopwords = match &self.preprocess.stopwords {
            Some(p) => format!("stopwords = {:?}\n", p.display().to_string()),
            None => String::new(),
        };
        format!(
            "seed = {}\n\n[data]\ntest_fraction = {:?}\n\n[preprocess]\nremove_stopwords = {}\n{stopwords}\n\
             [cbow]\ndim = {}\nwindow = {}\nmin_count = {}\nnegatives = {}\nepochs = {}\nlr = {:?}\nsubsample = {:?}\n\n\
             [hmlstm]\nhidden1 = {}\nhidden2 = {}\ndense_size = {}\nmax_seq_len = {}\nbatch_size = {}\ndropout = {:?}\n\
             lr = {:?}\nepochs = {}\npatience = {}\nvalidation_fraction = {:?}\nconsistency = \"{consistency}\"\n\n\
             [baseline]\nfeatures = \"{feature}\"\nmax_seq_len = {}\nepochs = {}\nlr = {:?}\nbatch_size = {}\nl2 = {:?}\n\
             c = {:?}\nk = {}\nmask = {}\n",
            self.seed,
            self.data.test_fraction,
            self.preprocess.remove_stopwords,
            c.dim,
            c.window,
            c.min_count,
            c.negatives,
            c.epochs,
            c.initial_lr,
            c.subsample,
            h.hidden1,
            h.hidden2,
            h.dense_size,
            h.max_seq_len,
            h.batch_size,
            h.dropout,
            h.lr,
            h.epochs,
            h.patience,
            h.validation_fraction,
            b.max_seq_len,
            b.linear.epochs,
            b.linear.lr,
            b.linear.batch_size,
            b.linear.l2,
            b.linear.c,
            b.k,
            b.mask,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.hmlstm.batch_size, 32);
        assert_eq!(c.hmlstm.dropout, 0.5);
        assert_eq!(c.hmlstm.lr, 0.001);
        assert_eq!(c.cbow.dim, 100);
        assert_eq!(c.cbow.window, 5);
        assert_eq!(c.cbow.min_count, 5);
    }

    #[test]
    fn echo_round_trips() {
        let c = Config::parse("seed = 9\n[hmlstm]\nhidden1 = 16\nconsistency = \"argmax-free\"\n[baseline]\nk = 5\n").unwrap();
        assert_eq!(c.hmlstm.seed, 9);
        assert_eq!(c.baseline.linear.seed, 9);
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(Config::parse(&Config::default().to_toml()).unwrap(), Config::default());
    }

    #[test]
    fn all_problems_reported_together() {
        let text = "colour = 1\n[hmlstm]\nbatch_size = 0\ndropout = 1.5\nwidth = 3\n[cbow]\ndim = \"big\"\n[extra]\na = 1\n";
        match Config::parse(text) {
            Err(Error::Config(v)) => {
                let joined = v.join("\n");
                for needle in ["colour: unknown key", "hmlstm.width: unknown key", "cbow.dim: expected integer", "extra: unknown key", "hmlstm.batch_size", "hmlstm.dropout"] {
                    assert!(joined.contains(needle), "{needle} missing from {joined}");
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_are_config_errors() {
        assert!(matches!(Config::parse("[hmlstm"), Err(Error::Config(_))));
    }
}
