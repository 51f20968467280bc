//! Documents, datasets, the label taxonomy, train/test splitting, dataset
//! loaders and a synthetic corpus generator.
//!
//! A [`Taxonomy`] is a rooted tree of category labels in which every leaf
//! sits at the same depth. Level numbers start at 1 for the top categories;
//! the (implicit) root is level 0 and is not stored.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One category of the taxonomy as written in a node list.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: String,
    pub name: String,
    /// `None` for top-level categories (children of the implicit root).
    pub parent: Option<String>,
    pub level: usize,
}

impl TaxonomyNode {
    pub fn new(id: &str, parent: Option<&str>, level: usize) -> Self {
        TaxonomyNode {
            id: id.to_string(),
            name: id.to_string(),
            parent: parent.map(str::to_string),
            level,
        }
    }
}

/// A structural problem found by [`validate_taxonomy`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Empty,
    NotATree { id: String, detail: String },
    DuplicateId { id: String },
    UnknownParent { id: String, parent: String },
    LevelMismatch { id: String, level: usize, expected: usize },
    UnevenLeafDepth { id: String, level: usize, depth: usize },
    DuplicateName { level: usize, name: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty taxonomy"),
            Violation::NotATree { id, detail } => write!(f, "not a tree: {id:?} {detail}"),
            Violation::DuplicateId { id } => write!(f, "duplicate label-id {id:?}"),
            Violation::UnknownParent { id, parent } => {
                write!(f, "unknown parent {parent:?} of {id:?}")
            }
            Violation::LevelMismatch {
                id,
                level,
                expected,
            } => write!(f, "level mismatch: {id:?} has level {level}, expected {expected}"),
            Violation::UnevenLeafDepth { id, level, depth } => write!(
                f,
                "uneven leaf depth: leaf {id:?} at level {level}, deepest level is {depth}"
            ),
            Violation::DuplicateName { level, name } => {
                write!(f, "duplicate display-name {name:?} at level {level}")
            }
        }
    }
}

/// Checks every taxonomy invariant over a raw node list. An empty result
/// means the list describes a valid uniform-depth tree.
pub fn validate_taxonomy(nodes: &[TaxonomyNode]) -> Vec<Violation> {
    let mut out = Vec::new();
    if nodes.is_empty() {
        out.push(Violation::Empty);
        return out;
    }

    // id -> first node; report conflicting duplicates
    let mut first: HashMap<&str, &TaxonomyNode> = HashMap::new();
    let mut reported: HashSet<&str> = HashSet::new();
    for node in nodes {
        match first.get(node.id.as_str()) {
            None => {
                first.insert(&node.id, node);
            }
            Some(prev) => {
                if !reported.insert(&node.id) {
                    continue;
                }
                if prev.parent != node.parent {
                    out.push(Violation::NotATree {
                        id: node.id.clone(),
                        detail: format!(
                            "has more than one parent ({} and {})",
                            show_parent(&prev.parent),
                            show_parent(&node.parent)
                        ),
                    });
                } else {
                    out.push(Violation::DuplicateId {
                        id: node.id.clone(),
                    });
                }
            }
        }
    }

    let mut unique: Vec<&TaxonomyNode> = Vec::new();
    let mut seen = HashSet::new();
    for node in nodes {
        if seen.insert(node.id.as_str()) {
            unique.push(node);
        }
    }

    for node in &unique {
        match &node.parent {
            None => {
                if node.level != 1 {
                    out.push(Violation::LevelMismatch {
                        id: node.id.clone(),
                        level: node.level,
                        expected: 1,
                    });
                }
            }
            Some(p) => match first.get(p.as_str()) {
                None => out.push(Violation::UnknownParent {
                    id: node.id.clone(),
                    parent: p.clone(),
                }),
                Some(parent) => {
                    if node.level != parent.level + 1 {
                        out.push(Violation::LevelMismatch {
                            id: node.id.clone(),
                            level: node.level,
                            expected: parent.level + 1,
                        });
                    }
                }
            },
        }
    }

    // cycles: walking up from any node must reach the root within n steps
    let mut on_cycle: HashSet<&str> = HashSet::new();
    for node in &unique {
        let mut cur = node.parent.as_deref();
        let mut steps = 0;
        while let Some(p) = cur {
            if p == node.id {
                on_cycle.insert(&node.id);
                break;
            }
            steps += 1;
            if steps > unique.len() {
                break;
            }
            cur = first.get(p).and_then(|n| n.parent.as_deref());
        }
    }
    for node in &unique {
        if on_cycle.contains(node.id.as_str()) {
            out.push(Violation::NotATree {
                id: node.id.clone(),
                detail: "lies on a cycle".to_string(),
            });
        }
    }

    let has_child: HashSet<&str> = unique.iter().filter_map(|n| n.parent.as_deref()).collect();
    let depth = unique.iter().map(|n| n.level).max().unwrap_or(0);
    for node in &unique {
        if !has_child.contains(node.id.as_str()) && node.level != depth {
            out.push(Violation::UnevenLeafDepth {
                id: node.id.clone(),
                level: node.level,
                depth,
            });
        }
    }

    let mut names = HashSet::new();
    for node in &unique {
        if !names.insert((node.level, node.name.as_str())) {
            out.push(Violation::DuplicateName {
                level: node.level,
                name: node.name.clone(),
            });
        }
    }
    out
}

fn show_parent(p: &Option<String>) -> String {
    match p {
        Some(p) => format!("{p:?}"),
        None => "root".to_string(),
    }
}

/// Rooted tree of category labels with uniform leaf depth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TaxonomyNode>", into = "Vec<TaxonomyNode>")]
pub struct Taxonomy {
    nodes: Vec<TaxonomyNode>,
    index: HashMap<String, usize>,
    children: Vec<Vec<usize>>,
    by_level: Vec<Vec<usize>>,
}

impl TryFrom<Vec<TaxonomyNode>> for Taxonomy {
    type Error = Error;

    fn try_from(nodes: Vec<TaxonomyNode>) -> Result<Self> {
        Taxonomy::new(nodes)
    }
}

impl From<Taxonomy> for Vec<TaxonomyNode> {
    fn from(t: Taxonomy) -> Self {
        t.nodes
    }
}

impl Taxonomy {
    pub fn new(nodes: Vec<TaxonomyNode>) -> Result<Self> {
        let violations = validate_taxonomy(&nodes);
        if !violations.is_empty() {
            return Err(Error::InvalidTaxonomy(violations));
        }
        let index: HashMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let levels = nodes.iter().map(|n| n.level).max().unwrap_or(0);
        let mut children = vec![Vec::new(); nodes.len()];
        let mut by_level = vec![Vec::new(); levels];
        for (i, n) in nodes.iter().enumerate() {
            if let Some(p) = &n.parent {
                children[index[p]].push(i);
            }
            by_level[n.level - 1].push(i);
        }
        Ok(Taxonomy {
            nodes,
            index,
            children,
            by_level,
        })
    }

    /// The three-category, nine-subcategory Urdu news taxonomy.
    pub fn undhtc() -> Self {
        let tree: [(&str, [&str; 3]); 3] = [
            ("Sports", ["Cricket", "Hockey", "Football"]),
            ("Technology", ["Internet", "Applications", "Mobile"]),
            ("Entertainment", ["Movies", "Music", "Fashion"]),
        ];
        let mut nodes = Vec::new();
        for (top, _) in &tree {
            nodes.push(TaxonomyNode::new(top, None, 1));
        }
        for (top, subs) in &tree {
            for sub in subs {
                nodes.push(TaxonomyNode::new(sub, Some(top), 2));
            }
        }
        Taxonomy::new(nodes).expect("built-in taxonomy is valid")
    }

    pub fn nodes(&self) -> &[TaxonomyNode] {
        &self.nodes
    }

    pub fn levels(&self) -> usize {
        self.by_level.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn node(&self, id: &str) -> Option<&TaxonomyNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn level_of(&self, id: &str) -> Option<usize> {
        self.node(id).map(|n| n.level)
    }

    pub fn parent(&self, id: &str) -> Option<&str> {
        self.node(id).and_then(|n| n.parent.as_deref())
    }

    /// Labels at a 1-based level, in declaration order.
    pub fn labels_at_level(&self, level: usize) -> Vec<&str> {
        self.by_level
            .get(level.wrapping_sub(1))
            .map(|ix| ix.iter().map(|&i| self.nodes[i].id.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn level_width(&self, level: usize) -> usize {
        self.by_level
            .get(level.wrapping_sub(1))
            .map_or(0, Vec::len)
    }

    /// Position of a label among the labels of its own level.
    pub fn position_in_level(&self, id: &str) -> Option<usize> {
        let i = *self.index.get(id)?;
        let level = self.nodes[i].level;
        self.by_level[level - 1].iter().position(|&j| j == i)
    }

    /// Children of `parent`; `None` yields the top-level categories.
    pub fn children(&self, parent: Option<&str>) -> Vec<&str> {
        match parent {
            None => self.labels_at_level(1),
            Some(p) => match self.index.get(p) {
                Some(&i) => self.children[i]
                    .iter()
                    .map(|&c| self.nodes[c].id.as_str())
                    .collect(),
                None => Vec::new(),
            },
        }
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        self.index
            .get(id)
            .is_some_and(|&i| self.children[i].is_empty())
    }

    pub fn leaves(&self) -> Vec<&str> {
        self.labels_at_level(self.levels())
    }

    /// Internal nodes in top-down order, starting with the root (`None`).
    pub fn internal_nodes(&self) -> Vec<Option<&str>> {
        let mut out = vec![None];
        for level in 1..self.levels() {
            out.extend(self.labels_at_level(level).into_iter().map(Some));
        }
        out
    }

    /// All labels, level by level.
    pub fn all_labels(&self) -> Vec<&str> {
        (1..=self.levels())
            .flat_map(|l| self.labels_at_level(l))
            .collect()
    }

    /// Root-to-node path ending at `id`.
    pub fn path_to(&self, id: &str) -> Option<Vec<String>> {
        let mut path = vec![self.node(id)?.id.clone()];
        let mut cur = self.parent(id);
        while let Some(p) = cur {
            path.push(p.to_string());
            cur = self.parent(p);
        }
        path.reverse();
        Some(path)
    }

    /// Every root-to-leaf path, in leaf order.
    pub fn leaf_paths(&self) -> Vec<Vec<String>> {
        self.leaves()
            .into_iter()
            .map(|l| self.path_to(l).expect("leaf exists"))
            .collect()
    }

    /// True when `path` names one label per level and each label is a child
    /// of the previous one.
    pub fn is_consistent<S: AsRef<str>>(&self, path: &[S]) -> bool {
        if path.len() != self.levels() {
            return false;
        }
        let mut parent: Option<&str> = None;
        for (k, label) in path.iter().enumerate() {
            let label = label.as_ref();
            match self.node(label) {
                Some(n) if n.level == k + 1 && n.parent.as_deref() == parent => {}
                _ => return false,
            }
            parent = Some(label);
        }
        true
    }

    /// Checks a gold path, reporting the first problem against `line`.
    fn check_path(&self, line: usize, gold: &[String]) -> Result<()> {
        if gold.len() != self.levels() {
            return Err(Error::Malformed {
                line,
                reason: format!(
                    "expected {} level labels, found {}",
                    self.levels(),
                    gold.len()
                ),
            });
        }
        let mut parent: Option<&str> = None;
        for (k, label) in gold.iter().enumerate() {
            let node = self.node(label).ok_or_else(|| Error::UnknownLabel {
                line,
                label: label.clone(),
            })?;
            if node.level != k + 1 {
                return Err(Error::Malformed {
                    line,
                    reason: format!("label {label:?} belongs to level {}, not {}", node.level, k + 1),
                });
            }
            if node.parent.as_deref() != parent {
                return Err(Error::InconsistentPath {
                    line,
                    child: label.clone(),
                    parent: parent.unwrap_or("root").to_string(),
                    expected: node.parent.clone().unwrap_or_else(|| "root".to_string()),
                });
            }
            parent = Some(label);
        }
        Ok(())
    }

    /// Builds a taxonomy from observed gold paths; the first parent seen for
    /// a label is authoritative.
    pub fn infer<'a, I>(paths: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, &'a [String])>,
    {
        let mut nodes: Vec<TaxonomyNode> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut depth = None;
        for (line, path) in paths {
            if path.is_empty() {
                return Err(Error::Malformed {
                    line,
                    reason: "no level labels".into(),
                });
            }
            match depth {
                None => depth = Some(path.len()),
                Some(d) if d != path.len() => {
                    return Err(Error::Malformed {
                        line,
                        reason: format!("expected {d} level labels, found {}", path.len()),
                    })
                }
                _ => {}
            }
            let mut parent: Option<&str> = None;
            for (k, label) in path.iter().enumerate() {
                match index.get(label) {
                    Some(&i) => {
                        let node = &nodes[i];
                        if node.level != k + 1 || node.parent.as_deref() != parent {
                            return Err(Error::InconsistentPath {
                                line,
                                child: label.clone(),
                                parent: parent.unwrap_or("root").to_string(),
                                expected: node.parent.clone().unwrap_or_else(|| "root".into()),
                            });
                        }
                    }
                    None => {
                        index.insert(label.clone(), nodes.len());
                        nodes.push(TaxonomyNode::new(label, parent, k + 1));
                    }
                }
                parent = Some(label);
            }
        }
        if nodes.is_empty() {
            return Err(Error::NoDocuments);
        }
        Taxonomy::new(nodes)
    }
}

/// Raw text plus one gold label per hierarchy level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub gold: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub documents: Vec<Document>,
    pub taxonomy: Taxonomy,
}

impl Dataset {
    /// Validates every gold path against `taxonomy`.
    pub fn new(documents: Vec<Document>, taxonomy: Taxonomy) -> Result<Self> {
        for (i, doc) in documents.iter().enumerate() {
            taxonomy.check_path(i + 1, &doc.gold)?;
        }
        Ok(Dataset {
            documents,
            taxonomy,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            documents: idx.iter().map(|&i| self.documents[i].clone()).collect(),
            taxonomy: self.taxonomy.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Jsonl,
}

impl Format {
    /// Guesses the format from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Tsv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

/// Column names written for each level; levels past the second are
/// `level3`, `level4`, ...
pub fn level_column_name(level: usize) -> String {
    match level {
        1 => "category".to_string(),
        2 => "subcategory".to_string(),
        k => format!("level{k}"),
    }
}

/// Loads a dataset. With `taxonomy` given, labels are checked against it;
/// otherwise the taxonomy is inferred from the gold paths.
pub fn load_dataset(path: &Path, format: Format, taxonomy: Option<&Taxonomy>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), format, taxonomy)
}

pub fn read_dataset<R: BufRead>(
    reader: R,
    format: Format,
    taxonomy: Option<&Taxonomy>,
) -> Result<Dataset> {
    let rows = match format {
        Format::Tsv => parse_tsv(reader)?,
        Format::Jsonl => parse_jsonl(reader)?,
    };
    if rows.is_empty() {
        return Err(Error::NoDocuments);
    }
    let taxonomy = match taxonomy {
        Some(t) => {
            for (line, doc) in &rows {
                t.check_path(*line, &doc.gold)?;
            }
            t.clone()
        }
        None => Taxonomy::infer(rows.iter().map(|(l, d)| (*l, d.gold.as_slice())))?,
    };
    Ok(Dataset {
        documents: rows.into_iter().map(|(_, d)| d).collect(),
        taxonomy,
    })
}

fn read_err(e: std::io::Error) -> Error {
    Error::io("<input>", e)
}

fn parse_tsv<R: BufRead>(reader: R) -> Result<Vec<(usize, Document)>> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Ok(Vec::new()),
            Some((_, l)) => {
                let l = l.map_err(read_err)?;
                let l = l.trim_start_matches('\u{feff}').trim_end_matches('\r').to_string();
                if !l.trim().is_empty() {
                    break l;
                }
            }
        }
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let text_col = cols
        .iter()
        .position(|&c| c == "text")
        .ok_or_else(|| Error::Malformed {
            line: 1,
            reason: "header has no `text` column".into(),
        })?;
    let id_col = cols.iter().position(|&c| c == "id");
    let level_cols: Vec<usize> = (0..cols.len())
        .filter(|&i| i != text_col && Some(i) != id_col)
        .collect();
    if level_cols.is_empty() {
        return Err(Error::Malformed {
            line: 1,
            reason: "header has no level columns".into(),
        });
    }

    let mut out = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(read_err)?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(Error::Malformed {
                line: lineno,
                reason: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let gold = level_fields(lineno, level_cols.iter().map(|&c| fields[c]))?;
        let id = match id_col {
            Some(c) => fields[c].to_string(),
            None => format!("row{lineno}"),
        };
        out.push((
            lineno,
            Document {
                id,
                text: fields[text_col].to_string(),
                gold,
            },
        ));
    }
    Ok(out)
}

fn level_fields<'a>(line: usize, values: impl Iterator<Item = &'a str>) -> Result<Vec<String>> {
    values
        .map(|v| {
            let v = v.trim();
            if v.is_empty() {
                Err(Error::Malformed {
                    line,
                    reason: "empty label".into(),
                })
            } else {
                Ok(v.to_string())
            }
        })
        .collect()
}

fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<(usize, Document)>> {
    let mut level_keys: Option<Vec<String>> = None;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(read_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: lineno,
                reason: e.to_string(),
            })?;
        let keys = level_keys.get_or_insert_with(|| {
            obj.keys()
                .filter(|k| *k != "id" && *k != "text")
                .cloned()
                .collect()
        });
        if keys.is_empty() {
            return Err(Error::Malformed {
                line: lineno,
                reason: "object has no level keys".into(),
            });
        }
        let get = |k: &str| -> Result<&str> {
            obj.get(k)
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Malformed {
                    line: lineno,
                    reason: format!("missing string field {k:?}"),
                })
        };
        let text = get("text")?.to_string();
        let id = match obj.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => format!("row{lineno}"),
        };
        let values = keys.iter().map(|k| get(k)).collect::<Result<Vec<_>>>()?;
        let gold = level_fields(lineno, values.into_iter())?;
        out.push((lineno, Document { id, text, gold }));
    }
    Ok(out)
}

/// Writes the canonical TSV form. Tabs and newlines inside text become spaces.
pub fn write_tsv<W: Write>(dataset: &Dataset, mut w: W) -> std::io::Result<()> {
    let levels = dataset.taxonomy.levels();
    let mut header = vec!["id".to_string(), "text".to_string()];
    header.extend((1..=levels).map(level_column_name));
    writeln!(w, "{}", header.join("\t"))?;
    for doc in &dataset.documents {
        let text: String = doc
            .text
            .chars()
            .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
            .collect();
        writeln!(w, "{}\t{}\t{}", doc.id, text, doc.gold.join("\t"))?;
    }
    Ok(())
}

pub fn save_tsv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_tsv(dataset, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Seeded shuffle of `0..n` cut into `(train, test)` index lists, with
/// `round(n * test_fraction)` test items.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_test = (n as f64 * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), test_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Shape of a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of children per node at each level, top level first.
    pub branching: Vec<usize>,
    pub docs_per_leaf: usize,
    pub vocab_per_leaf: usize,
    pub shared_vocab: usize,
    pub doc_length: usize,
    pub noise_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            branching: vec![3, 3],
            docs_per_leaf: 50,
            vocab_per_leaf: 20,
            shared_vocab: 10,
            doc_length: 30,
            noise_rate: 0.05,
        }
    }
}

// Letters used to spell synthetic words. The leading letter is never used
// by the packaged stopword list, so generated words survive preprocessing.
const SYNTH_LEAD: char = 'ژ';
const SYNTH_ALPHABET: [char; 24] = [
    'ا', 'ب', 'پ', 'ت', 'ٹ', 'ث', 'ج', 'چ', 'ح', 'خ', 'د', 'ڈ', 'ذ', 'ر', 'ڑ', 'ز', 'س', 'ش',
    'ص', 'ض', 'ط', 'ظ', 'ع', 'غ',
];
const SYNTH_WIDTH: u32 = 3;

/// Deterministic Arabic-script word for a synthetic vocabulary index.
pub fn synthetic_word(mut n: usize) -> String {
    let base = SYNTH_ALPHABET.len();
    let mut letters = vec![SYNTH_ALPHABET[0]; SYNTH_WIDTH as usize];
    for slot in letters.iter_mut().rev() {
        *slot = SYNTH_ALPHABET[n % base];
        n /= base;
    }
    std::iter::once(SYNTH_LEAD).chain(letters).collect()
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.branching.is_empty() {
            problems.push("branching must name at least one level".to_string());
        }
        if self.branching.iter().any(|&b| b < 1) {
            problems.push("branching factors must be >= 1".into());
        }
        for (name, v) in [
            ("docs_per_leaf", self.docs_per_leaf),
            ("vocab_per_leaf", self.vocab_per_leaf),
            ("shared_vocab", self.shared_vocab),
            ("doc_length", self.doc_length),
        ] {
            if v < 1 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            problems.push(format!("noise_rate must lie in [0, 1], got {}", self.noise_rate));
        }
        let words = self.n_leaves() * self.vocab_per_leaf + self.shared_vocab;
        if words > SYNTH_ALPHABET.len().pow(SYNTH_WIDTH) {
            problems.push(format!("vocabulary of {words} words is too large"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.branching.iter().product()
    }

    /// The taxonomy this spec generates: ids `c0`, `c0.1`, `c0.1.2`, ...
    pub fn taxonomy(&self) -> Result<Taxonomy> {
        let mut nodes = Vec::new();
        let mut frontier: Vec<Option<String>> = vec![None];
        for (k, &b) in self.branching.iter().enumerate() {
            let mut next = Vec::new();
            for parent in &frontier {
                for j in 0..b {
                    let id = match parent {
                        None => format!("c{j}"),
                        Some(p) => format!("{p}.{j}"),
                    };
                    nodes.push(TaxonomyNode::new(&id, parent.as_deref(), k + 1));
                    next.push(Some(id));
                }
            }
            frontier = next;
        }
        Taxonomy::new(nodes)
    }

    /// Signature words of leaf `leaf` (in leaf order).
    pub fn signature(&self, leaf: usize) -> Vec<String> {
        (leaf * self.vocab_per_leaf..(leaf + 1) * self.vocab_per_leaf)
            .map(synthetic_word)
            .collect()
    }

    pub fn shared_words(&self) -> Vec<String> {
        let start = self.n_leaves() * self.vocab_per_leaf;
        (start..start + self.shared_vocab).map(synthetic_word).collect()
    }
}

/// Generates a corpus where each leaf owns a disjoint signature vocabulary.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let taxonomy = spec.taxonomy()?;
    let leaves: Vec<String> = taxonomy.leaves().iter().map(|s| s.to_string()).collect();
    let signatures: Vec<Vec<String>> = (0..leaves.len()).map(|l| spec.signature(l)).collect();
    let shared = spec.shared_words();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut documents = Vec::with_capacity(leaves.len() * spec.docs_per_leaf);

    for (leaf_ix, leaf) in leaves.iter().enumerate() {
        let gold = taxonomy.path_to(leaf).expect("leaf exists");
        let own = &signatures[leaf_ix];
        for _ in 0..spec.docs_per_leaf {
            let mut tokens = Vec::with_capacity(spec.doc_length);
            for _ in 0..spec.doc_length {
                let flip = leaves.len() > 1 && rng.random::<f64>() < spec.noise_rate;
                if flip {
                    let mut other = rng.random_range(0..leaves.len() - 1);
                    if other >= leaf_ix {
                        other += 1;
                    }
                    let sig = &signatures[other];
                    tokens.push(sig[rng.random_range(0..sig.len())].as_str());
                } else {
                    let j = rng.random_range(0..own.len() + shared.len());
                    tokens.push(if j < own.len() {
                        own[j].as_str()
                    } else {
                        shared[j - own.len()].as_str()
                    });
                }
            }
            documents.push(Document {
                id: format!("syn{:06}", documents.len()),
                text: tokens.join(" "),
                gold: gold.clone(),
            });
        }
    }
    Ok(Dataset {
        documents,
        taxonomy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn undhtc_nodes() -> Vec<TaxonomyNode> {
        Taxonomy::undhtc().nodes().to_vec()
    }

    #[test]
    fn undhtc_is_valid() {
        assert!(validate_taxonomy(&undhtc_nodes()).is_empty());
        let t = Taxonomy::undhtc();
        assert_eq!(t.levels(), 2);
        assert_eq!(t.level_width(1), 3);
        assert_eq!(t.level_width(2), 9);
        assert_eq!(t.all_labels().len(), 12);
        assert_eq!(t.parent("Mobile"), Some("Technology"));
        assert_eq!(t.path_to("Cricket").unwrap(), vec!["Sports", "Cricket"]);
    }

    #[test]
    fn two_parents_is_not_a_tree() {
        let mut nodes = undhtc_nodes();
        nodes.push(TaxonomyNode::new("Cricket", Some("Technology"), 2));
        let v = validate_taxonomy(&nodes);
        assert!(v.iter().any(|x| x.to_string().starts_with("not a tree")), "{v:?}");
    }

    #[test]
    fn shallow_leaf_is_uneven() {
        let mut nodes = undhtc_nodes();
        nodes.push(TaxonomyNode::new("Politics", None, 1));
        let v = validate_taxonomy(&nodes);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("uneven leaf depth"));
    }

    #[test]
    fn cycles_and_unknown_parents_are_reported() {
        let nodes = vec![
            TaxonomyNode::new("a", None, 1),
            TaxonomyNode::new("b", Some("c"), 2),
            TaxonomyNode::new("c", Some("b"), 2),
            TaxonomyNode::new("d", Some("zz"), 2),
        ];
        let v = validate_taxonomy(&nodes);
        assert!(v.iter().any(|x| matches!(x, Violation::NotATree { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::UnknownParent { .. })));
    }

    #[test]
    fn duplicate_names_within_level() {
        let mut nodes = undhtc_nodes();
        nodes[4].name = "Cricket".into();
        let v = validate_taxonomy(&nodes);
        assert!(v.iter().any(|x| matches!(x, Violation::DuplicateName { .. })));
    }

    #[test]
    fn loads_tsv_row() {
        let data = "id\ttext\tcategory\tsubcategory\nd1\tکرکٹ میچ\tSports\tCricket\n";
        let ds = read_dataset(data.as_bytes(), Format::Tsv, Some(&Taxonomy::undhtc())).unwrap();
        assert_eq!(ds.documents[0].gold, vec!["Sports", "Cricket"]);
        assert_eq!(ds.documents[0].id, "d1");
    }

    #[test]
    fn empty_file_has_no_documents() {
        let err = read_dataset("".as_bytes(), Format::Tsv, None).unwrap_err();
        assert_eq!(err.to_string(), "no documents");
        let err = read_dataset("id\ttext\tcategory\n".as_bytes(), Format::Tsv, None).unwrap_err();
        assert!(matches!(err, Error::NoDocuments));
    }

    #[test]
    fn inconsistent_path_is_rejected() {
        let data = "id\ttext\tcategory\tsubcategory\nd1\tx\tSports\tCricket\nd2\ty\tSports\tMobile\n";
        let err = read_dataset(data.as_bytes(), Format::Tsv, Some(&Taxonomy::undhtc())).unwrap_err();
        match err {
            Error::InconsistentPath {
                line,
                child,
                expected,
                ..
            } => {
                assert_eq!(line, 3);
                assert_eq!(child, "Mobile");
                assert_eq!(expected, "Technology");
            }
            e => panic!("unexpected {e}"),
        }
        assert!(read_dataset(data.as_bytes(), Format::Tsv, Some(&Taxonomy::undhtc()))
            .unwrap_err()
            .to_string()
            .contains("inconsistent path"));
    }

    #[test]
    fn inferred_taxonomy_rejects_reparented_label() {
        let data = "text\tcategory\tsubcategory\nx\tTechnology\tMobile\ny\tSports\tMobile\n";
        let err = read_dataset(data.as_bytes(), Format::Tsv, None).unwrap_err();
        assert!(matches!(err, Error::InconsistentPath { line: 3, .. }), "{err}");
    }

    #[test]
    fn unknown_label_and_malformed_rows() {
        let t = Taxonomy::undhtc();
        let data = "id\ttext\tcategory\tsubcategory\nd1\tx\tSports\tCurling\n";
        assert!(matches!(
            read_dataset(data.as_bytes(), Format::Tsv, Some(&t)),
            Err(Error::UnknownLabel { line: 2, .. })
        ));
        let data = "id\ttext\tcategory\tsubcategory\nd1\tx\tSports\n";
        assert!(matches!(
            read_dataset(data.as_bytes(), Format::Tsv, Some(&t)),
            Err(Error::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn jsonl_uses_key_order_for_levels() {
        let data = r#"{"id":"a","text":"خبر","category":"Sports","subcategory":"Hockey"}
{"id":"b","text":"خبر","category":"Technology","subcategory":"Mobile"}
"#;
        let ds = read_dataset(data.as_bytes(), Format::Jsonl, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.taxonomy.parent("Mobile"), Some("Technology"));
        let bad = "{\"text\":\"x\"\n";
        assert!(matches!(
            read_dataset(bad.as_bytes(), Format::Jsonl, None),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = split_indices(10, 0.2, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr, te) = split_indices(51325, 0.2, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (41060, 10265));
        assert_eq!(split_indices(10, 0.2, 7).unwrap(), split_indices(10, 0.2, 7).unwrap());
        assert!(split_indices(10, 0.0, 7).is_err());
        assert!(split_indices(10, 1.0, 7).is_err());
    }

    #[test]
    fn synthetic_counts() {
        let spec = SyntheticSpec {
            branching: vec![3, 3],
            docs_per_leaf: 50,
            ..SyntheticSpec::default()
        };
        let ds = gen_synthetic(&spec, 1).unwrap();
        assert_eq!(ds.len(), 450);
        assert_eq!(ds.taxonomy.leaves().len(), 9);
        assert_eq!(ds.taxonomy.level_width(1), 3);
        assert_eq!(gen_synthetic(&spec, 1).unwrap(), ds);
    }

    #[test]
    fn synthetic_words_are_distinct() {
        let words: HashSet<String> = (0..2000).map(synthetic_word).collect();
        assert_eq!(words.len(), 2000);
    }

    #[test]
    fn synthetic_spec_validation() {
        let bad = SyntheticSpec {
            noise_rate: 1.5,
            docs_per_leaf: 0,
            ..SyntheticSpec::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("noise_rate") && err.contains("docs_per_leaf"), "{err}");
    }

    #[test]
    fn taxonomy_serde_round_trip() {
        let t = Taxonomy::undhtc();
        let json = serde_json::to_string(&t).unwrap();
        let back: Taxonomy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
