//! Directory checkpoints: `meta.json` (version, kind, config, vocabulary,
//! labels, tensor shapes) next to `params.bin` (little-endian f64 data).

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use slu_augment_core::nn::{ParamSet, Tensor};
use slu_augment_core::{GeneratorConfig, GeneratorModel, ParseConfig, SluModel, Vocabulary};

use crate::io::{read_json, sha256_hex, write_json};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SLUAPRM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Generator,
    Slu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub vocab: Vocabulary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub acts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slots: Vec<String>,
    pub params: Vec<TensorMeta>,
    /// sha256 of `params.bin`.
    pub checkpoint_id: String,
}

pub fn encode_params(p: &ParamSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * p.num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(p.num_scalars() as u64).to_le_bytes());
    for (_, t) in p.iter() {
        for x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

fn decode_params(bytes: &[u8], shapes: &[TensorMeta]) -> Result<ParamSet> {
    ensure!(bytes.len() >= 16 && &bytes[..8] == MAGIC, "params.bin: bad header");
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let expected: usize = shapes.iter().map(|s| s.rows * s.cols).sum();
    ensure!(n == expected, "params.bin holds {n} scalars, meta.json describes {expected}");
    ensure!(bytes.len() == 16 + 8 * n, "params.bin: truncated or oversized");
    let mut floats = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut p = ParamSet::new();
    for s in shapes {
        ensure!(p.id(&s.name).is_none(), "duplicate tensor {:?}", s.name);
        let data: Vec<f64> = floats.by_ref().take(s.rows * s.cols).collect();
        p.add(&s.name, Tensor { rows: s.rows, cols: s.cols, data });
    }
    Ok(p)
}

/// Content hash of a parameter set, identical to the id of its checkpoint.
pub fn checkpoint_id(p: &ParamSet) -> String {
    sha256_hex(&encode_params(p))
}

fn save(dir: &Path, kind: ModelKind, config: serde_json::Value, vocab: &Vocabulary, labels: (&[String], &[String]), p: &ParamSet) -> Result<String> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let bin = encode_params(p);
    let id = sha256_hex(&bin);
    let meta = Meta {
        format_version: FORMAT_VERSION,
        kind,
        config,
        vocab: vocab.clone(),
        acts: labels.0.to_vec(),
        slots: labels.1.to_vec(),
        params: p.iter().map(|(name, t)| TensorMeta { name: name.into(), rows: t.rows, cols: t.cols }).collect(),
        checkpoint_id: id.clone(),
    };
    fs::write(dir.join("params.bin"), bin)?;
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(id)
}

fn load(dir: &Path, kind: ModelKind) -> Result<(Meta, ParamSet)> {
    let meta: Meta = read_json(&dir.join("meta.json"))?;
    if meta.format_version != FORMAT_VERSION {
        bail!("checkpoint format {} is not supported (expected {FORMAT_VERSION})", meta.format_version);
    }
    ensure!(meta.kind == kind, "{} holds a {:?} checkpoint, expected {:?}", dir.display(), meta.kind, kind);
    let bytes = fs::read(dir.join("params.bin")).with_context(|| format!("reading {}/params.bin", dir.display()))?;
    ensure!(sha256_hex(&bytes) == meta.checkpoint_id, "params.bin does not match its checkpoint id");
    let p = decode_params(&bytes, &meta.params)?;
    Ok((meta, p))
}

/// Writes a generator checkpoint and returns its id.
pub fn save_generator(dir: &Path, m: &GeneratorModel) -> Result<String> {
    save(dir, ModelKind::Generator, serde_json::to_value(m.config())?, m.vocab(), (&[], &[]), m.params())
}

pub fn load_generator(dir: &Path) -> Result<GeneratorModel> {
    let (meta, p) = load(dir, ModelKind::Generator)?;
    let cfg: GeneratorConfig = serde_json::from_value(meta.config)?;
    Ok(GeneratorModel::from_parts(cfg, meta.vocab, p)?)
}

pub fn save_slu(dir: &Path, m: &SluModel) -> Result<String> {
    save(dir, ModelKind::Slu, serde_json::to_value(m.config())?, m.vocab(), (m.acts(), m.slots()), m.params())
}

pub fn load_slu(dir: &Path) -> Result<SluModel> {
    let (meta, p) = load(dir, ModelKind::Slu)?;
    let cfg: ParseConfig = serde_json::from_value(meta.config)?;
    Ok(SluModel::from_parts(cfg, meta.vocab, meta.acts, meta.slots, p)?)
}
