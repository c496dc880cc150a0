// SPDX-License-Identifier: MIT OR Apache-2.0

//! Immutable model bundle and its on-disk directory format.
//!
//! A bundle directory holds three files:
//!
//! - `config.json`: every [`ModelConfig`] field plus an ordered `tensors`
//!   manifest of `{name, shape, offset}` records (offset in bytes),
//! - `vocab.json`: array of token strings, index = id,
//! - `weights.bin`: little-endian `f32`, row-major, concatenated in
//!   manifest order.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{is_norm_gain, ModelConfig};
use super::tokenizer::{TokenSeq, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::{tag, CounterRng};

/// Scale applied to the standard normal draws of synthesized weights.
pub const INIT_SCALE: f32 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    d_ff: usize,
    vocab_size: usize,
    max_seq: usize,
    norm_epsilon: f64,
    tensors: Vec<ManifestEntry>,
}

/// Indices into the tensor list for one transformer block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockSlots {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn_norm: usize,
    pub w_in: usize,
    pub w_out: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub token_embedding: usize,
    pub position_embedding: usize,
    pub blocks: Vec<BlockSlots>,
    pub final_norm: usize,
    pub unembedding: usize,
}

/// Config, weights and vocabulary. Immutable once built; every
/// constructor validates shapes, finiteness and vocabulary density.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    config: ModelConfig,
    tensors: Vec<Tensor>,
    vocab: Vocabulary,
    layout: Layout,
    hash: String,
}

impl PartialEq for ModelBundle {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors && self.vocab == other.vocab
    }
}

impl ModelBundle {
    /// Validate and assemble a bundle. `tensors` may be in any order; that
    /// order becomes the manifest order on save.
    pub fn from_parts(config: ModelConfig, vocab: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::VocabSize {
                expected: config.vocab_size,
                found: vocab.len(),
            });
        }
        let vocab = Vocabulary::new(vocab)?;
        let expected: HashMap<String, Vec<usize>> = config.tensor_specs().into_iter().collect();
        let mut seen = HashSet::new();
        for t in &tensors {
            let Some(shape) = expected.get(&t.name) else {
                return Err(Error::ExtraTensor(t.name.clone()));
            };
            if !seen.insert(t.name.as_str()) {
                return Err(Error::ShapeMismatch {
                    name: t.name.clone(),
                    reason: "listed twice".into(),
                });
            }
            if &t.shape != shape {
                return Err(Error::ShapeMismatch {
                    name: t.name.clone(),
                    reason: format!("expected {shape:?}, found {:?}", t.shape),
                });
            }
            if t.data.len() != t.numel() {
                return Err(Error::ShapeMismatch {
                    name: t.name.clone(),
                    reason: format!("shape {:?} needs {} values, found {}", t.shape, t.numel(), t.data.len()),
                });
            }
            if let Some(index) = t.data.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    name: t.name.clone(),
                    index,
                });
            }
        }
        for (name, _) in config.tensor_specs() {
            if !seen.contains(name.as_str()) {
                return Err(Error::MissingTensor(name));
            }
        }
        let layout = build_layout(&config, &tensors);
        let mut bundle = Self {
            config,
            tensors,
            vocab,
            layout,
            hash: String::new(),
        };
        bundle.hash = bundle.compute_hash();
        Ok(bundle)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// SHA-256 over the canonical serialized form.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        self.vocab.tokenize(text)
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        self.vocab.detokenize(ids)
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn data(&self, slot: usize) -> &[f32] {
        &self.tensors[slot].data
    }

    /// Return a copy with one tensor's values replaced (shape kept).
    pub fn with_tensor_data(&self, name: &str, data: Vec<f32>) -> Result<Self> {
        let mut tensors = self.tensors.clone();
        let t = tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::MissingTensor(name.to_owned()))?;
        t.data = data;
        Self::from_parts(self.config.clone(), self.vocab.tokens().to_vec(), tensors)
    }

    fn config_file(&self) -> ConfigFile {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let e = ManifestEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.numel() * 4;
                e
            })
            .collect();
        let c = &self.config;
        ConfigFile {
            n_layers: c.n_layers,
            d_model: c.d_model,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            vocab_size: c.vocab_size,
            max_seq: c.max_seq,
            norm_epsilon: c.norm_epsilon,
            tensors,
        }
    }

    fn serialized(&self) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let mut config = serde_json::to_vec_pretty(&self.config_file()).expect("config serializes");
        config.push(b'\n');
        let mut vocab = serde_json::to_vec_pretty(self.vocab.tokens()).expect("vocab serializes");
        vocab.push(b'\n');
        let total: usize = self.tensors.iter().map(Tensor::numel).sum();
        let mut weights = Vec::with_capacity(total * 4);
        for t in &self.tensors {
            for x in &t.data {
                weights.extend_from_slice(&x.to_le_bytes());
            }
        }
        (config, vocab, weights)
    }

    fn compute_hash(&self) -> String {
        let (config, vocab, weights) = self.serialized();
        let mut h = Sha256::new();
        for part in [&config, &vocab, &weights] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Write the bundle directory (created if absent).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (config, vocab, weights) = self.serialized();
        for (file, bytes) in [("config.json", config), ("vocab.json", vocab), ("weights.bin", weights)] {
            let path = dir.join(file);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn build_layout(config: &ModelConfig, tensors: &[Tensor]) -> Layout {
    let index: HashMap<&str, usize> = tensors.iter().enumerate().map(|(i, t)| (t.name.as_str(), i)).collect();
    let at = |name: &str| index[name];
    Layout {
        token_embedding: at("token_embedding"),
        position_embedding: at("position_embedding"),
        blocks: (0..config.n_layers)
            .map(|b| BlockSlots {
                attn_norm: at(&format!("blocks.{b}.attn_norm")),
                wq: at(&format!("blocks.{b}.wq")),
                wk: at(&format!("blocks.{b}.wk")),
                wv: at(&format!("blocks.{b}.wv")),
                wo: at(&format!("blocks.{b}.wo")),
                ffn_norm: at(&format!("blocks.{b}.ffn_norm")),
                w_in: at(&format!("blocks.{b}.w_in")),
                w_out: at(&format!("blocks.{b}.w_out")),
            })
            .collect(),
        final_norm: at("final_norm"),
        unembedding: at("unembedding"),
    }
}

/// Deterministic random bundle: identical `(seed, config, vocab)` gives
/// bit-identical tensors. Norm gains are one; every other weight is
/// `0.02 * N(0, 1)` keyed by `(seed, tensor name, element index)`.
pub fn synthesize_bundle(seed: u64, config: ModelConfig, vocab: Vec<String>) -> Result<ModelBundle> {
    config.validate()?;
    if vocab.len() != config.vocab_size {
        return Err(Error::VocabSize {
            expected: config.vocab_size,
            found: vocab.len(),
        });
    }
    let tensors = config
        .tensor_specs()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = if is_norm_gain(&name) {
                vec![1.0; n]
            } else {
                let rng = CounterRng::new(seed, tag(&name));
                (0..n as u64).map(|i| rng.normal(i) as f32 * INIT_SCALE).collect()
            };
            Tensor { name, shape, data }
        })
        .collect();
    ModelBundle::from_parts(config, vocab, tensors)
}

/// Load and fully validate a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let read = |file: &str| {
        let path = dir.join(file);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    };
    let cfg: ConfigFile = serde_json::from_slice(&read("config.json")?)
        .map_err(|e| Error::json(dir.join("config.json").display().to_string(), e))?;
    let vocab_raw: Vec<Option<String>> = serde_json::from_slice(&read("vocab.json")?)
        .map_err(|e| Error::json(dir.join("vocab.json").display().to_string(), e))?;
    let weights = read("weights.bin")?;

    let config = ModelConfig {
        n_layers: cfg.n_layers,
        d_model: cfg.d_model,
        n_heads: cfg.n_heads,
        d_ff: cfg.d_ff,
        vocab_size: cfg.vocab_size,
        max_seq: cfg.max_seq,
        norm_epsilon: cfg.norm_epsilon,
    };
    config.validate()?;

    // A null entry or a short array leaves an id without a token string.
    let mut vocab = Vec::with_capacity(vocab_raw.len());
    for (id, t) in vocab_raw.into_iter().enumerate() {
        vocab.push(t.ok_or(Error::VocabGap { id })?);
    }
    if vocab.len() < config.vocab_size {
        return Err(Error::VocabGap { id: vocab.len() });
    }

    let expected: HashMap<String, Vec<usize>> = config.tensor_specs().into_iter().collect();
    let listed: HashSet<&str> = cfg.tensors.iter().map(|e| e.name.as_str()).collect();
    for (name, _) in config.tensor_specs() {
        if !listed.contains(name.as_str()) {
            return Err(Error::MissingTensor(name));
        }
    }
    let mut cursor = 0usize;
    let mut tensors = Vec::with_capacity(cfg.tensors.len());
    for entry in cfg.tensors {
        let Some(shape) = expected.get(&entry.name) else {
            return Err(Error::ExtraTensor(entry.name));
        };
        if &entry.shape != shape {
            return Err(Error::ShapeMismatch {
                reason: format!("manifest shape {:?}, config implies {shape:?}", entry.shape),
                name: entry.name,
            });
        }
        if entry.offset != cursor {
            return Err(Error::ShapeMismatch {
                reason: format!("offset {} but previous tensors end at byte {cursor}", entry.offset),
                name: entry.name,
            });
        }
        let n: usize = entry.shape.iter().product();
        let end = cursor + n * 4;
        if end > weights.len() {
            return Err(Error::ShapeMismatch {
                reason: format!(
                    "needs bytes [{cursor}, {end}) but weights.bin has {} bytes",
                    weights.len()
                ),
                name: entry.name,
            });
        }
        let data = weights[cursor..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor {
            name: entry.name,
            shape: entry.shape,
            data,
        });
        cursor = end;
    }
    if cursor != weights.len() {
        let name = tensors.last().map_or_else(|| "weights.bin".to_owned(), |t| t.name.clone());
        return Err(Error::ShapeMismatch {
            name,
            reason: format!("weights.bin has {} trailing bytes", weights.len() - cursor),
        });
    }
    ModelBundle::from_parts(config, vocab, tensors)
}

/// Value gain used by `make-toy --fact`: keeps the final norm out of
/// saturation so subject noise can erase the fact.
pub const PLANT_VALUE_GAIN: f32 = 0.2;
/// Readout gain used by `make-toy --fact`.
pub const PLANT_READOUT_GAIN: f32 = 2.5;

/// Wire a subject -> answer association into a bundle.
///
/// The subject token's embedding is set to `unit` (a fixed direction), the
/// first block's value/output projections route that direction into every
/// later position, and the answer's unembedding column reads it back. The
/// result behaves like a model that "knows" the fact, which is what the
/// tracing and interpolation fixtures need.
///
/// `value_gain` sets how much of the subject direction reaches later
/// positions; it should stay small enough that the final norm does not
/// saturate, otherwise a noisy subject embedding still carries the fact.
/// `readout_gain` scales the answer logit.
pub fn plant_association(
    bundle: &ModelBundle,
    subject: u32,
    answer: u32,
    value_gain: f32,
    readout_gain: f32,
) -> Result<ModelBundle> {
    let c = bundle.config().clone();
    let (d, v) = (c.d_model, c.vocab_size);
    for id in [subject, answer] {
        if id as usize >= v {
            return Err(Error::OutOfRange(format!("token id {id} >= vocab_size {v}")));
        }
    }
    // Direction chosen per subject so several facts use distinct axes.
    let axis = (subject as usize * 7919) % d;

    let mut emb = bundle.tensor("token_embedding").expect("validated").data.clone();
    let row = &mut emb[subject as usize * d..(subject as usize + 1) * d];
    row.iter_mut().for_each(|x| *x = 0.0);
    row[axis] = 1.0;

    let mut wv = bundle.tensor("blocks.0.wv").expect("validated").data.clone();
    wv[axis * d + axis] += value_gain;
    let mut wo = bundle.tensor("blocks.0.wo").expect("validated").data.clone();
    wo[axis * d + axis] += 1.0;
    let mut unemb = bundle.tensor("unembedding").expect("validated").data.clone();
    unemb[axis * v + answer as usize] += readout_gain;

    bundle
        .with_tensor_data("token_embedding", emb)?
        .with_tensor_data("blocks.0.wv", wv)?
        .with_tensor_data("blocks.0.wo", wo)?
        .with_tensor_data("unembedding", unemb)
}
