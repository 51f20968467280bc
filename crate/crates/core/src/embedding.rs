//! Vocabulary construction, CBOW word2vec training with negative sampling,
//! sequence embedding and the on-disk embedding formats.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preprocess::TokenSequence;

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";

/// Token to index map. Index 0 is padding and index 1 stands for every
/// out-of-vocabulary token; the rest are ordered by descending frequency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if tokens.len() != counts.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} counts",
                tokens.len(),
                counts.len()
            )));
        }
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[OOV] != OOV_TOKEN {
            return Err(Error::InvalidArgument(
                "vocabulary must start with the padding and unknown tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            counts,
            index,
        })
    }

    /// Size including the two reserved entries.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Index of `token`, or [`OOV`].
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i > OOV)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, token: &str) -> u64 {
        self.get(token).map_or(0, |i| self.counts[i])
    }
}

/// Keeps tokens seen at least `min_count` times, most frequent first with
/// ties broken lexicographically.
pub fn build_vocab(corpus: &[TokenSequence], min_count: u64) -> Result<Vocabulary> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for seq in corpus {
        for t in seq.iter() {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::EmptyCorpus("no tokens to build a vocabulary from".into()));
    }
    let mut kept: Vec<(&str, u64)> = freq.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
    let mut counts = vec![0, 0];
    for (t, c) in kept {
        tokens.push(t.to_string());
        counts.push(c);
    }
    Vocabulary::from_parts(tokens, counts)
}

/// Dense row-major matrix with one row per vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{dim} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding value at {i}")));
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// CBOW hyperparameters. Defaults: 100 dimensions, window 5, min count 5,
/// 5 negatives, 5 epochs, learning rate 0.025 decaying linearly, subsampling
/// threshold 1e-3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbowParams {
    pub dim: usize,
    pub window: usize,
    pub min_count: u64,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for CbowParams {
    fn default() -> Self {
        CbowParams {
            dim: 100,
            window: 5,
            min_count: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            subsample: 1e-3,
            seed: 1,
        }
    }
}

impl CbowParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim < 1 {
            problems.push("dim must be >= 1");
        }
        if self.window < 1 {
            problems.push("window must be >= 1");
        }
        if self.negatives < 1 {
            problems.push("negatives must be >= 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            problems.push("initial_lr must be positive");
        }
        if !(self.subsample >= 0.0 && self.subsample.is_finite()) {
            problems.push("subsample must be >= 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct CbowOutput {
    pub matrix: EmbeddingMatrix,
    /// Summed negative-sampling loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// -ln(sigmoid(x)), stable for large |x|
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Negative-sampling distribution proportional to count^0.75.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NoiseTable { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty table");
        let r = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= r)
            .min(self.cumulative.len() - 1)
    }
}

/// Seeded initial input vectors: uniform in (-0.5/dim, 0.5/dim) for every
/// row except padding, which stays zero.
pub fn initial_matrix(rows: usize, dim: usize, rng: &mut impl Rng) -> EmbeddingMatrix {
    let mut data = vec![0.0; rows * dim];
    for v in data.iter_mut().skip(dim) {
        *v = (rng.random::<f64>() - 0.5) / dim as f64;
    }
    EmbeddingMatrix { rows, dim, data }
}

/// Trains CBOW vectors with negative sampling. Single-threaded and fully
/// determined by the corpus, vocabulary and `params.seed`. Returned values
/// are rounded to single precision so that saving and loading is lossless.
pub fn train_cbow(
    corpus: &[TokenSequence],
    vocab: &Vocabulary,
    params: &CbowParams,
) -> Result<CbowOutput> {
    params.validate()?;
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().filter_map(|t| vocab.get(t)).collect())
        .collect();
    let total_words: usize = sentences.iter().map(Vec::len).sum();
    if total_words < 2 {
        return Err(Error::EmptyCorpus(format!(
            "{total_words} in-vocabulary tokens; CBOW needs at least 2"
        )));
    }

    let dim = params.dim;
    let rows = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut input = initial_matrix(rows, dim, &mut rng).data;
    let mut output = vec![0.0; rows * dim];
    let noise = NoiseTable::new(vocab.counts());
    let threshold = params.subsample * total_words as f64;

    let total_steps = (params.epochs * total_words) as f64;
    let mut processed = 0usize;
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    let mut hidden = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut kept: Vec<(usize, usize)> = Vec::new();
    let mut context: Vec<usize> = Vec::new();

    for epoch in 0..params.epochs {
        let mut loss = 0.0;
        for sentence in &sentences {
            kept.clear();
            for (pos, &w) in sentence.iter().enumerate() {
                if threshold > 0.0 {
                    let count = vocab.counts[w] as f64;
                    let keep = ((count / threshold).sqrt() + 1.0) * threshold / count;
                    if keep < rng.random::<f64>() {
                        continue;
                    }
                }
                kept.push((w, processed + pos));
            }
            processed += sentence.len();

            for pos in 0..kept.len() {
                let (target, seen) = kept[pos];
                let lr = params.initial_lr * (1.0 - seen as f64 / (total_steps + 1.0)).max(1e-4);
                let lo = pos.saturating_sub(params.window);
                let hi = (pos + params.window + 1).min(kept.len());
                context.clear();
                context.extend((lo..hi).filter(|&j| j != pos).map(|j| kept[j].0));
                if context.is_empty() {
                    continue;
                }

                hidden.iter_mut().for_each(|v| *v = 0.0);
                for &c in &context {
                    for (h, x) in hidden.iter_mut().zip(&input[c * dim..(c + 1) * dim]) {
                        *h += x;
                    }
                }
                let inv = 1.0 / context.len() as f64;
                hidden.iter_mut().for_each(|v| *v *= inv);
                grad.iter_mut().for_each(|v| *v = 0.0);

                for d in 0..=params.negatives {
                    let (word, label) = if d == 0 {
                        (target, 1.0)
                    } else {
                        let w = noise.sample(&mut rng);
                        if w == target {
                            continue;
                        }
                        (w, 0.0)
                    };
                    let out = &mut output[word * dim..(word + 1) * dim];
                    let dot: f64 = hidden.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                    loss += if label > 0.5 {
                        neg_log_sigmoid(dot)
                    } else {
                        neg_log_sigmoid(-dot)
                    };
                    let g = (label - sigmoid(dot)) * lr;
                    for ((e, o), h) in grad.iter_mut().zip(out.iter_mut()).zip(&hidden) {
                        *e += g * *o;
                        *o += g * h;
                    }
                }
                for &c in &context {
                    for (x, e) in input[c * dim..(c + 1) * dim].iter_mut().zip(&grad) {
                        *x += e;
                    }
                }
            }
        }
        if !loss.is_finite() || input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("CBOW training diverged in epoch {}", epoch + 1)));
        }
        epoch_losses.push(loss);
    }

    for v in input.iter_mut() {
        *v = *v as f32 as f64;
    }
    Ok(CbowOutput {
        matrix: EmbeddingMatrix {
            rows,
            dim,
            data: input,
        },
        epoch_losses,
    })
}

/// Maps tokens to ids, truncating to `max_len` and right-padding with [`PAD`].
pub fn token_ids(vocab: &Vocabulary, tokens: &[String], max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.index_of(t))
        .collect();
    ids.resize(max_len, PAD);
    ids
}

pub fn embed_sequence(
    vocab: &Vocabulary,
    matrix: &EmbeddingMatrix,
    tokens: &[String],
    max_len: usize,
) -> Vec<Vec<f64>> {
    token_ids(vocab, tokens, max_len)
        .into_iter()
        .map(|i| matrix.row(i).to_vec())
        .collect()
}

/// Mean of the non-padding vectors (padding rows are exactly zero); the
/// zero vector when every position is padding.
pub fn doc_vector(vectors: &[Vec<f64>]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        n += 1;
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    if n > 0 {
        sum.iter_mut().for_each(|s| *s /= n as f64);
    }
    sum
}

/// Binary bag-of-words over the vocabulary; reserved entries stay zero.
pub fn bag_of_words(vocab: &Vocabulary, tokens: &[String]) -> Vec<f64> {
    let mut v = vec![0.0; vocab.len()];
    for t in tokens {
        if let Some(i) = vocab.get(t) {
            v[i] = 1.0;
        }
    }
    v
}

/// A vocabulary together with its vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub vocab: Vocabulary,
    pub matrix: EmbeddingMatrix,
}

const MAGIC: &[u8; 8] = b"HTCEMBED";
const FORMAT_VERSION: u32 = 1;

impl Embeddings {
    pub fn new(vocab: Vocabulary, matrix: EmbeddingMatrix) -> Result<Self> {
        if vocab.len() != matrix.rows() {
            return Err(Error::Shape(format!(
                "vocabulary has {} entries, matrix has {} rows",
                vocab.len(),
                matrix.rows()
            )));
        }
        Ok(Embeddings { vocab, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Hex SHA-256 over the token table and the single-precision rows.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in self.vocab.tokens() {
            h.update((t.len() as u32).to_le_bytes());
            h.update(t.as_bytes());
        }
        h.update((self.matrix.dim() as u32).to_le_bytes());
        for v in self.matrix.as_slice() {
            h.update((*v as f32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn ids(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        token_ids(&self.vocab, tokens, max_len)
    }

    /// Mean vector of the in-vocabulary and unknown tokens of a document.
    pub fn mean_vector(&self, tokens: &[String], max_len: usize) -> Vec<f64> {
        doc_vector(&embed_sequence(&self.vocab, &self.matrix, tokens, max_len))
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.vocab.len() as u64).to_le_bytes())?;
        w.write_all(&(self.matrix.dim() as u32).to_le_bytes())?;
        for (t, c) in self.vocab.tokens().iter().zip(self.vocab.counts()) {
            w.write_all(&(t.len() as u32).to_le_bytes())?;
            w.write_all(t.as_bytes())?;
            w.write_all(&c.to_le_bytes())?;
        }
        for v in self.matrix.as_slice() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("embedding file: {m}"));
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let dim = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut tokens = Vec::with_capacity(rows.min(1 << 20));
        let mut counts = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let mut buf = vec![0u8; len];
            read_exact(&mut r, &mut buf)?;
            tokens.push(String::from_utf8(buf).map_err(|_| bad("token is not UTF-8"))?);
            counts.push(u64::from_le_bytes(read_array(&mut r)?));
        }
        let mut data = Vec::with_capacity(rows * dim);
        for _ in 0..rows * dim {
            data.push(f32::from_le_bytes(read_array(&mut r)?) as f64);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::io("<embeddings>", e))?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Embeddings::new(
            Vocabulary::from_parts(tokens, counts)?,
            EmbeddingMatrix::new(rows, dim, data)?,
        )
    }

    /// word2vec-style text: a `rows dim` header line, then `token v1 v2 ...`.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.vocab.len(), self.matrix.dim())?;
        for (i, t) in self.vocab.tokens().iter().enumerate() {
            write!(w, "{t}")?;
            for v in self.matrix.row(i) {
                write!(w, " {}", *v as f32)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the text format. Frequencies are not stored there and load as 0.
    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Malformed {
                line: 1,
                reason: "missing header".into(),
            })?
            .map_err(|e| Error::io("<embeddings>", e))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Malformed {
                line: 1,
                reason: "header must be `rows dim`".into(),
            })?;
        let [rows, dim] = dims[..] else {
            return Err(Error::Malformed {
                line: 1,
                reason: "header must be `rows dim`".into(),
            });
        };
        let mut tokens = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * dim);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default().to_string();
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f32>().map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Malformed {
                    line: i + 2,
                    reason: e.to_string(),
                })?;
            if values.len() != dim {
                return Err(Error::Malformed {
                    line: i + 2,
                    reason: format!("expected {dim} values, found {}", values.len()),
                });
            }
            tokens.push(token);
            data.extend(values);
        }
        if tokens.len() != rows {
            return Err(Error::Malformed {
                line: rows + 1,
                reason: format!("expected {rows} rows, found {}", tokens.len()),
            });
        }
        let counts = vec![0; rows];
        Embeddings::new(
            Vocabulary::from_parts(tokens, counts)?,
            EmbeddingMatrix::new(rows, dim, data)?,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let text = path.extension().is_some_and(|e| e == "txt" || e == "vec");
        if text {
            self.write_text(&mut w)
        } else {
            self.write_binary(&mut w)
        }
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
    }

    /// Loads either format, chosen by the magic bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let head = r.fill_buf().map_err(|e| Error::io(path, e))?;
        if head.starts_with(MAGIC) {
            Embeddings::read_binary(r)
        } else {
            Embeddings::read_text(r)
        }
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("embedding file: truncated".into()))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, SyntheticSpec};
    use crate::preprocess::{preprocess_document, PreprocessOptions};

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::new(s.split_whitespace().map(str::to_string).collect()).unwrap()
    }

    fn small_corpus() -> Vec<TokenSequence> {
        let spec = SyntheticSpec {
            branching: vec![2],
            docs_per_leaf: 20,
            vocab_per_leaf: 8,
            shared_vocab: 2,
            doc_length: 12,
            noise_rate: 0.0,
        };
        let ds = gen_synthetic(&spec, 3).unwrap();
        let opts = PreprocessOptions::default();
        ds.documents
            .iter()
            .map(|d| preprocess_document(d, &opts))
            .collect()
    }

    #[test]
    fn vocab_min_count_filter() {
        let mut text = String::new();
        for (tok, n) in [("x", 6), ("y", 4), ("z", 2)] {
            for _ in 0..n {
                text.push_str(tok);
                text.push(' ');
            }
        }
        let corpus = vec![seq(&text)];
        let v = build_vocab(&corpus, 5).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "x"]);
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "x", "y", "z"]);
        assert_eq!(v.count("y"), 4);
        assert!(build_vocab(&[], 1).is_err());
        assert!(build_vocab(&[seq("")], 1).is_err());
    }

    #[test]
    fn vocab_ties_are_lexicographic() {
        let v = build_vocab(&[seq("b a c a b c d")], 1).unwrap();
        assert_eq!(&v.tokens()[2..], &["a", "b", "c", "d"]);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let corpus = small_corpus();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let params = CbowParams {
            dim: 10,
            epochs: 0,
            ..CbowParams::default()
        };
        let out = train_cbow(&corpus, &vocab, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let init = initial_matrix(vocab.len(), 10, &mut rng);
        for (a, b) in out.matrix.as_slice().iter().zip(init.as_slice()) {
            assert_eq!(*a, *b as f32 as f64);
            assert!(a.abs() < 0.5 / 10.0);
        }
        assert!(out.matrix.row(PAD).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_loss_falls() {
        let corpus = small_corpus();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let params = CbowParams {
            dim: 16,
            min_count: 1,
            epochs: 8,
            ..CbowParams::default()
        };
        let a = train_cbow(&corpus, &vocab, &params).unwrap();
        let b = train_cbow(&corpus, &vocab, &params).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert!(a.epoch_losses.last().unwrap() < &a.epoch_losses[0], "{:?}", a.epoch_losses);
        assert!(a.matrix.row(PAD).iter().all(|&v| v == 0.0));
        assert!(a.matrix.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        let corpus = vec![seq("a")];
        let vocab = build_vocab(&corpus, 1).unwrap();
        assert!(matches!(
            train_cbow(&corpus, &vocab, &CbowParams::default()),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn embedding_lookup_padding_and_truncation() {
        let vocab = build_vocab(&[seq("a b c")], 1).unwrap();
        let data: Vec<f64> = (0..vocab.len() * 2).map(|i| if i < 2 { 0.0 } else { i as f64 }).collect();
        let m = EmbeddingMatrix::new(vocab.len(), 2, data).unwrap();
        let e = embed_sequence(&vocab, &m, &[], 4);
        assert_eq!(e, vec![vec![0.0, 0.0]; 4]);
        let e = embed_sequence(&vocab, &m, &["b".to_string()], 1);
        assert_eq!(e[0], m.row(vocab.index_of("b")));
        let ten: Vec<String> = "a b c a b c a b c zz".split(' ').map(String::from).collect();
        let e = embed_sequence(&vocab, &m, &ten, 4);
        let expect: Vec<Vec<f64>> = ten[..4].iter().map(|t| m.row(vocab.index_of(t)).to_vec()).collect();
        assert_eq!(e, expect);
        assert_eq!(token_ids(&vocab, &["zz".to_string()], 2), vec![OOV, PAD]);
    }

    #[test]
    fn doc_vector_means() {
        let v = vec![1.0, -2.0, 3.0];
        assert_eq!(doc_vector(std::slice::from_ref(&v)), v);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(doc_vector(&[v.clone(), neg]), vec![0.0; 3]);
        let got = doc_vector(&[vec![1.0, 2.0], vec![3.0, 5.0], vec![0.0, 0.0], vec![2.0, -1.0]]);
        assert_eq!(got, vec![2.0, 2.0]);
        assert_eq!(doc_vector(&[vec![0.0, 0.0]]), vec![0.0, 0.0]);
    }

    #[test]
    fn binary_and_text_formats_round_trip() {
        let corpus = small_corpus();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let params = CbowParams {
            dim: 6,
            epochs: 1,
            ..CbowParams::default()
        };
        let m = train_cbow(&corpus, &vocab, &params).unwrap().matrix;
        let e = Embeddings::new(vocab, m).unwrap();
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = Embeddings::read_binary(&buf[..]).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.fingerprint(), e.fingerprint());

        let mut txt = Vec::new();
        e.write_text(&mut txt).unwrap();
        let back = Embeddings::read_text(&txt[..]).unwrap();
        assert_eq!(back.matrix, e.matrix);
        assert_eq!(back.vocab.tokens(), e.vocab.tokens());
        assert_eq!(back.fingerprint(), e.fingerprint());

        assert!(Embeddings::read_binary(&buf[..buf.len() - 1]).is_err());
    }
}
