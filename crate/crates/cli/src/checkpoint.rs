//! Single-file checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "V2GCKPT\0"
//! 8       4     format version, u32 little-endian
//! 12      8     header length H, u64 little-endian
//! 20      H     header, UTF-8 JSON
//! 20+H    4·N   parameter values, f32 little-endian, in header order
//! end-32  32    SHA-256 of every preceding byte
//! ```
//!
//! The header holds the model config, the tokenizer alphabet, training
//! provenance and the ordered parameter table (`name`, `shape`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vec2gloss::corpus::{Tokenizer, BOS, UNK};
use vec2gloss::model::{Model, ModelConfig, TargetMask};
use vec2gloss::numerics::Array;

use crate::error::{CliError, CliResult};
use crate::fsutil::{atomic_write, sha256_hex};

pub const MAGIC: &[u8; 8] = b"V2GCKPT\0";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 20;
const DIGEST: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `denoise` or `finetune`.
    pub stage: String,
    pub init_seed: u64,
    pub train_seed: u64,
    /// Epochs of this stage.
    pub epochs: usize,
    /// SHA-256 of the sense file trained on.
    pub corpus_sha256: String,
    /// SHA-256 of the checkpoint this stage started from.
    pub parent_sha256: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    tokenizer: Tokenizer,
    provenance: Provenance,
    params: Vec<ParamEntry>,
}

pub struct Checkpoint {
    pub model: Model<f32>,
    pub tokenizer: Tokenizer,
    pub provenance: Provenance,
}

fn corrupt(detail: impl Into<String>) -> CliError {
    CliError::new("checkpoint.corrupt", format!("corrupt checkpoint: {}", detail.into()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params: Vec<ParamEntry> =
            self.model.params().iter().map(|p| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec() }).collect();
        let header = Header {
            model: self.model.config().clone(),
            tokenizer: self.tokenizer.clone(),
            provenance: self.provenance.clone(),
            params,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n: usize = self.model.params().num_elements();
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * n + DIGEST);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.params().iter() {
            for x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        if bytes.len() < PREAMBLE + DIGEST || &bytes[..8] != MAGIC {
            return Err(corrupt("missing header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CliError::new(
                "checkpoint.version",
                format!("checkpoint format version {version}, this build reads version {VERSION}"),
            ));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified file)"));
        }
        let h = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = body.get(PREAMBLE..PREAMBLE.saturating_add(h)).ok_or_else(|| corrupt("header overruns file"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
        let mut data = &body[PREAMBLE + h..];
        let reference = Model::<f32>::new(header.model.clone(), 0).map_err(|e| CliError::new("checkpoint.shape", e.to_string()))?;
        let expected: Vec<(&str, &[usize])> = reference.params().iter().map(|p| (p.name.as_str(), p.value.shape())).collect();
        let found: Vec<(&str, &[usize])> = header.params.iter().map(|p| (p.name.as_str(), p.shape.as_slice())).collect();
        if expected != found {
            let diff = expected.iter().zip(&found).find(|(a, b)| a != b);
            let detail = match diff {
                Some((e, f)) => format!("parameter {} has shape {:?}, config implies {} {:?}", f.0, f.1, e.0, e.1),
                None => format!("{} parameters stored, config implies {}", found.len(), expected.len()),
            };
            return Err(CliError::new("checkpoint.shape", format!("shape mismatch: {detail}")));
        }
        let mut named = Vec::with_capacity(header.params.len());
        for p in &header.params {
            let n: usize = p.shape.iter().product();
            if data.len() < 4 * n {
                return Err(corrupt("parameter data shorter than its table"));
            }
            let (chunk, rest) = data.split_at(4 * n);
            let values = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            named.push((p.name.clone(), Array::new(p.shape.clone(), values).map_err(|e| corrupt(e.to_string()))?));
            data = rest;
        }
        if !data.is_empty() {
            return Err(corrupt(format!("{} trailing bytes after parameter data", data.len())));
        }
        let model = Model::from_named(header.model, named).map_err(|e| CliError::new("checkpoint.shape", e.to_string()))?;
        let ckpt = Self { model, tokenizer: header.tokenizer, provenance: header.provenance };
        ckpt.self_test()?;
        Ok(ckpt)
    }

    /// A forward pass on a canned input must produce finite logits.
    pub fn self_test(&self) -> CliResult<()> {
        if self.tokenizer.vocab_size() != self.model.config().vocab_size {
            return Err(CliError::new(
                "checkpoint.shape",
                format!("tokenizer has {} ids, model vocabulary {}", self.tokenizer.vocab_size(), self.model.config().vocab_size),
            ));
        }
        let mask = TargetMask::for_span(2, 0, 1)?;
        let v = self.model.semantic_vector(&[UNK, UNK], &mask)?;
        let out = self.model.decode_logits(&v, &[BOS])?;
        if !out.logits.all_finite() {
            return Err(corrupt("self-test forward produced non-finite logits"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> CliResult<String> {
        let bytes = self.to_bytes();
        atomic_write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
