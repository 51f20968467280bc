//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `HMLSTMCK` |
//! | 4 | format version (u32) |
//! | 4 | header length `n` (u32) |
//! | n | JSON header |
//! | … | embedding block (see [`Embeddings::write_binary`]) |
//! | … | parameter tensors as f32, in header order (LSTM models only) |
//! | 32 | SHA-256 of everything before it |
//!
//! The header holds the model kind, configuration, taxonomy, preprocessing
//! settings, the embedding fingerprint and, for LSTM models, the name and
//! shape of each tensor. Strategy models keep their learners in the header.

use std::fs;
use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Taxonomy;
use crate::embedding::Embeddings;
use crate::error::{Error, Result};
use crate::model::{HmlstmConfig, HmlstmModel, HmlstmParams};
use crate::nn::Parameters;
use crate::pipeline::{StrategyModel, TrainedModel};
use crate::preprocess::{PreprocessOptions, StopwordList};

const MAGIC: &[u8; 8] = b"HMLSTMCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PreprocessHeader {
    remove_stopwords: bool,
    stopwords: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Body {
    Hmlstm {
        config: HmlstmConfig,
        tensors: Vec<TensorInfo>,
    },
    Strategy {
        model: StrategyModel,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    taxonomy: Taxonomy,
    embeddings_fingerprint: String,
    embeddings_bytes: u64,
    preprocess: PreprocessHeader,
    #[serde(flatten)]
    body: Body,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn to_bytes(model: &TrainedModel, options: &PreprocessOptions) -> Result<Vec<u8>> {
    let embeddings = model.embeddings()?;
    let mut emb_block = Vec::new();
    embeddings
        .write_binary(&mut emb_block)
        .map_err(|e| Error::io("<checkpoint>", e))?;

    let mut tensor_bytes = Vec::new();
    let body = match model {
        TrainedModel::Hmlstm(m) => {
            for s in m.params.slices() {
                for v in s {
                    tensor_bytes.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            Body::Hmlstm {
                config: m.config.clone(),
                tensors: m
                    .params
                    .tensor_names()
                    .into_iter()
                    .map(|(name, shape)| TensorInfo { name, shape })
                    .collect(),
            }
        }
        TrainedModel::Strategy(m) => Body::Strategy { model: m.clone() },
    };
    let header = Header {
        taxonomy: model.taxonomy().clone(),
        embeddings_fingerprint: embeddings.fingerprint(),
        embeddings_bytes: emb_block.len() as u64,
        preprocess: PreprocessHeader {
            remove_stopwords: options.remove_stopwords,
            stopwords: options.stopwords.entries().into_iter().map(str::to_string).collect(),
        },
        body,
    };
    let json = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(16 + json.len() + emb_block.len() + tensor_bytes.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&emb_block);
    out.extend_from_slice(&tensor_bytes);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(TrainedModel, PreprocessOptions)> {
    if bytes.len() < 16 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch; the file is corrupt or truncated"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&body[16..header_end])?;

    let emb_end = header_end
        .checked_add(header.embeddings_bytes as usize)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("embedding block exceeds file size"))?;
    let embeddings = Embeddings::read_binary(Cursor::new(&body[header_end..emb_end]))?;
    if embeddings.fingerprint() != header.embeddings_fingerprint {
        return Err(bad("embedding fingerprint does not match the header"));
    }
    let embeddings = Arc::new(embeddings);

    let options = if header.preprocess.remove_stopwords {
        PreprocessOptions {
            remove_stopwords: true,
            stopwords: StopwordList::new(header.preprocess.stopwords)?,
        }
    } else {
        PreprocessOptions::without_stopwords()
    };

    let rest = &body[emb_end..];
    let model = match header.body {
        Body::Hmlstm { config, tensors } => {
            let tax = &header.taxonomy;
            let mut params = HmlstmParams::zeros(&config, tax.level_width(1), tax.level_width(2));
            let expected: Vec<TensorInfo> = params
                .tensor_names()
                .into_iter()
                .map(|(name, shape)| TensorInfo { name, shape })
                .collect();
            if expected != tensors {
                return Err(bad("tensor table does not match the configuration"));
            }
            let n = params.num_params();
            if rest.len() != n * 4 {
                return Err(bad(format!("expected {} tensor bytes, found {}", n * 4, rest.len())));
            }
            let mut values = rest
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
            for s in params.slices_mut() {
                for v in s.iter_mut() {
                    *v = values.next().expect("length checked");
                }
            }
            if !params.all_finite() {
                return Err(bad("non-finite parameter values"));
            }
            if embeddings.dim() != config.embedding_dim {
                return Err(bad("embedding dimension does not match the configuration"));
            }
            TrainedModel::Hmlstm(HmlstmModel::from_params(tax, embeddings, &config, params))
        }
        Body::Strategy { mut model } => {
            if !rest.is_empty() {
                return Err(bad("unexpected trailing tensor data"));
            }
            model.embeddings = Some(embeddings);
            TrainedModel::Strategy(model)
        }
    };
    Ok((model, options))
}

pub fn save(path: &Path, model: &TrainedModel, options: &PreprocessOptions) -> Result<()> {
    let bytes = to_bytes(model, options)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(TrainedModel, PreprocessOptions)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
