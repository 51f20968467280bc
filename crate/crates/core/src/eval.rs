//! Multi-label counting and precision/recall/F1 reporting.
//!
//! Ratios are computed exactly as big rationals and converted to `f64` once.
//! A ratio with a zero denominator is zero.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::corpus::Taxonomy;
use crate::error::{Error, Result};

/// Per-label true positives, false positives and false negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub labels: Vec<String>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

/// Counts each document's predicted and gold label sets against `labels`.
/// Repeated labels within a set count once.
pub fn confusion<P, G, L>(preds: &[Vec<P>], golds: &[Vec<G>], labels: &[L]) -> Result<ConfusionCounts>
where
    P: AsRef<str>,
    G: AsRef<str>,
    L: AsRef<str>,
{
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} gold entries",
            preds.len(),
            golds.len()
        )));
    }
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_ref(), i)).collect();
    let n = labels.len();
    let mut c = ConfusionCounts {
        labels: labels.iter().map(|l| l.as_ref().to_string()).collect(),
        tp: vec![0; n],
        fp: vec![0; n],
        fn_: vec![0; n],
    };
    let lookup = |doc: usize, label: &str| {
        index.get(label).copied().ok_or_else(|| Error::UnknownLabel {
            line: doc + 1,
            label: label.to_string(),
        })
    };
    for (doc, (p, g)) in preds.iter().zip(golds).enumerate() {
        let p: BTreeSet<usize> = p.iter().map(|l| lookup(doc, l.as_ref())).collect::<Result<_>>()?;
        let g: BTreeSet<usize> = g.iter().map(|l| lookup(doc, l.as_ref())).collect::<Result<_>>()?;
        for &l in &p {
            if g.contains(&l) {
                c.tp[l] += 1;
            } else {
                c.fp[l] += 1;
            }
        }
        for &l in g.difference(&p) {
            c.fn_[l] += 1;
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> BigRational {
    if den == 0 {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
}

fn f1(p: &BigRational, r: &BigRational) -> BigRational {
    let sum = p + r;
    if sum.is_zero() {
        BigRational::zero()
    } else {
        BigRational::from_integer(BigInt::from(2)) * p * r / sum
    }
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("bounded ratio")
}

/// Precision, recall and F1 in any numeric representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

impl Prf<BigRational> {
    pub fn to_f64(&self) -> Prf<f64> {
        Prf {
            precision: to_f64(&self.precision),
            recall: to_f64(&self.recall),
            f1: to_f64(&self.f1),
        }
    }
}

/// Exact macro-averaged scores with the per-label entries they average.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroExact {
    pub per_label: Vec<Prf<BigRational>>,
    pub mean: Prf<BigRational>,
}

impl ConfusionCounts {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pooled counts: `P = ΣTP / Σ(TP+FP)`, `R = ΣTP / Σ(TP+FN)`.
    pub fn micro_exact(&self) -> Prf<BigRational> {
        let tp: u64 = self.tp.iter().sum();
        let fp: u64 = self.fp.iter().sum();
        let fn_: u64 = self.fn_.iter().sum();
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = f1(&precision, &recall);
        Prf { precision, recall, f1 }
    }

    /// Per-label scores averaged over every declared label, including labels
    /// that never occur.
    pub fn macro_exact(&self) -> MacroExact {
        let per_label: Vec<Prf<BigRational>> = (0..self.len())
            .map(|l| {
                let precision = ratio(self.tp[l], self.tp[l] + self.fp[l]);
                let recall = ratio(self.tp[l], self.tp[l] + self.fn_[l]);
                let f1 = f1(&precision, &recall);
                Prf { precision, recall, f1 }
            })
            .collect();
        let n = BigRational::from_integer(BigInt::from(self.len().max(1)));
        let sum = |f: fn(&Prf<BigRational>) -> &BigRational| {
            per_label.iter().map(f).fold(BigRational::zero(), |a, b| a + b) / &n
        };
        let mean = Prf {
            precision: sum(|p| &p.precision),
            recall: sum(|p| &p.recall),
            f1: sum(|p| &p.f1),
        };
        MacroExact { per_label, mean }
    }
}

pub fn micro_f1(counts: &ConfusionCounts) -> Prf<f64> {
    counts.micro_exact().to_f64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub per_label_f1: Vec<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn macro_f1(counts: &ConfusionCounts) -> MacroScores {
    let m = counts.macro_exact();
    let mean = m.mean.to_f64();
    MacroScores {
        per_label_f1: m.per_label.iter().map(|p| to_f64(&p.f1)).collect(),
        precision: mean.precision,
        recall: mean.recall,
        f1: mean.f1,
    }
}

/// Exact headline numbers of a report.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactMetrics {
    pub accuracy: BigRational,
    pub micro: Prf<BigRational>,
    pub macro_: MacroExact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub n_labels: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub label: String,
    pub level: usize,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `accuracy` is exact match of the whole path; `label_slot_accuracy` is the
/// fraction of (document, level) slots predicted correctly. `precision` and
/// `recall` are macro averages over all labels of the taxonomy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_documents: usize,
    pub n_labels: usize,
    pub accuracy: f64,
    pub label_slot_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub per_level: Vec<LevelReport>,
    pub per_label: Vec<LabelRow>,
}

fn check_paths<S: AsRef<str>>(paths: &[Vec<S>], levels: usize, what: &str) -> Result<()> {
    match paths.iter().position(|p| p.len() != levels) {
        Some(i) => Err(Error::Shape(format!(
            "{what} {} has {} labels, expected {levels}",
            i + 1,
            paths[i].len()
        ))),
        None => Ok(()),
    }
}

fn level_column<S: AsRef<str>>(paths: &[Vec<S>], k: usize) -> Vec<Vec<&str>> {
    paths.iter().map(|p| vec![p[k].as_ref()]).collect()
}

/// Exact accuracy and the combined-label micro and macro scores.
pub fn exact_metrics<P, G>(preds: &[Vec<P>], golds: &[Vec<G>], taxonomy: &Taxonomy) -> Result<ExactMetrics>
where
    P: AsRef<str>,
    G: AsRef<str>,
{
    let counts = confusion(preds, golds, &taxonomy.all_labels())?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.len() == g.len() && p.iter().zip(g.iter()).all(|(a, b)| a.as_ref() == b.as_ref()))
        .count() as u64;
    Ok(ExactMetrics {
        accuracy: ratio(hits, preds.len() as u64),
        micro: counts.micro_exact(),
        macro_: counts.macro_exact(),
    })
}

/// Scores predicted label paths against gold paths, both one label per level.
pub fn evaluate<P, G>(preds: &[Vec<P>], golds: &[Vec<G>], taxonomy: &Taxonomy) -> Result<MetricsReport>
where
    P: AsRef<str>,
    G: AsRef<str>,
{
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} gold paths",
            preds.len(),
            golds.len()
        )));
    }
    let levels = taxonomy.levels();
    check_paths(preds, levels, "prediction")?;
    check_paths(golds, levels, "gold path")?;

    let labels = taxonomy.all_labels();
    let counts = confusion(preds, golds, &labels)?;
    let exact = exact_metrics(preds, golds, taxonomy)?;
    let micro = exact.micro.to_f64();
    let macro_ = exact.macro_.mean.to_f64();

    let mut per_level = Vec::with_capacity(levels);
    let mut slot_hits = 0u64;
    for k in 1..=levels {
        let p = level_column(preds, k - 1);
        let g = level_column(golds, k - 1);
        let level_labels = taxonomy.labels_at_level(k);
        let c = confusion(&p, &g, &level_labels)?;
        let hits: u64 = c.tp.iter().sum();
        slot_hits += hits;
        let mi = c.micro_exact().to_f64();
        let ma = c.macro_exact().mean.to_f64();
        per_level.push(LevelReport {
            level: k,
            n_labels: level_labels.len(),
            accuracy: to_f64(&ratio(hits, preds.len() as u64)),
            macro_precision: ma.precision,
            macro_recall: ma.recall,
            macro_f1: ma.f1,
            micro_precision: mi.precision,
            micro_recall: mi.recall,
            micro_f1: mi.f1,
        });
    }

    let per_label = exact
        .macro_
        .per_label
        .iter()
        .enumerate()
        .map(|(l, prf)| {
            let prf = prf.to_f64();
            LabelRow {
                label: labels[l].to_string(),
                level: taxonomy.level_of(labels[l]).unwrap_or(0),
                tp: counts.tp[l],
                fp: counts.fp[l],
                fn_: counts.fn_[l],
                support: counts.tp[l] + counts.fn_[l],
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
            }
        })
        .collect();

    Ok(MetricsReport {
        n_documents: preds.len(),
        n_labels: labels.len(),
        accuracy: to_f64(&exact.accuracy),
        label_slot_accuracy: to_f64(&ratio(slot_hits, (preds.len() * levels) as u64)),
        precision: macro_.precision,
        recall: macro_.recall,
        macro_f1: macro_.f1,
        micro_precision: micro.precision,
        micro_recall: micro.recall,
        micro_f1: micro.f1,
        per_level,
        per_label,
    })
}

pub const CSV_HEADER: [&str; 7] = [
    "Methods",
    "#Classes",
    "Accuracy",
    "Precision",
    "Recall",
    "Macro-F1",
    "Micro-F1",
];

/// One comparison-table row: name, label count, then five scores at four
/// decimals.
pub fn csv_row(name: &str, report: &MetricsReport) -> Vec<String> {
    let mut row = vec![name.to_string(), report.n_labels.to_string()];
    row.extend(
        [
            report.accuracy,
            report.precision,
            report.recall,
            report.macro_f1,
            report.micro_f1,
        ]
        .iter()
        .map(|v| format!("{v:.4}")),
    );
    row
}

pub fn write_csv<W: Write>(rows: &[(String, MetricsReport)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for (name, report) in rows {
        out.write_record(csv_row(name, report))?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct NamedReport {
    pub model: String,
    pub report: MetricsReport,
}

pub fn write_json<W: Write>(rows: &[(String, MetricsReport)], w: W) -> Result<()> {
    let named: Vec<NamedReport> = rows
        .iter()
        .map(|(model, report)| NamedReport {
            model: model.clone(),
            report: report.clone(),
        })
        .collect();
    serde_json::to_writer_pretty(w, &named)?;
    Ok(())
}
