// SPDX-License-Identifier: MIT OR Apache-2.0

//! Logit lens: read an intermediate residual-stream state as a next-token
//! distribution by pushing it through the final norm and the unembedding.
//!
//! The final normalization is applied to the state itself (`norm(h_l)`),
//! which makes the last row of a grid coincide with the model's output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{head_logits, softmax, Generation, ModelBundle};

pub const DEFAULT_TOP_K: usize = 5;

fn round6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((x * 1e6).round() / 1e6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: String,
    pub id: u32,
    /// Serialized rounded to six decimals.
    #[serde(serialize_with = "round6")]
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensCell {
    pub layer: usize,
    pub position: usize,
    pub top: Vec<TokenProb>,
}

impl LensCell {
    pub fn top1(&self) -> &str {
        self.top.first().map_or("", |t| t.token.as_str())
    }
}

/// Layer x generation-step matrix of decoded states.
///
/// Row `l` holds hook point `l` (0 = embeddings); column `s` decodes the
/// trace position whose prediction produced generated token `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensGrid {
    pub k: usize,
    pub prompt_len: usize,
    /// Trace position of each column.
    pub positions: Vec<usize>,
    pub generated_ids: Vec<u32>,
    pub generated_tokens: Vec<String>,
    pub rows: Vec<Vec<LensCell>>,
}

impl LensGrid {
    pub fn n_layers(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn n_columns(&self) -> usize {
        self.positions.len()
    }

    pub fn cell(&self, layer: usize, column: usize) -> &LensCell {
        &self.rows[layer][column]
    }

    /// Top-1 token strings of one row.
    pub fn top1_row(&self, layer: usize) -> Vec<&str> {
        self.rows[layer].iter().map(LensCell::top1).collect()
    }
}

/// The `k` most likely next tokens implied by `state`, ordered by logit
/// descending with ties to the lowest id.
pub fn lens_topk(bundle: &ModelBundle, state: &[f64], k: usize) -> Result<Vec<TokenProb>> {
    let v = bundle.config().vocab_size;
    if k == 0 || k > v {
        return Err(Error::OutOfRange(format!("k = {k} outside [1, {v}]")));
    }
    let logits = head_logits(bundle, state)?;
    let probs = softmax(&logits);
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| TokenProb {
            token: bundle.vocab().display(i as u32),
            id: i as u32,
            prob: probs[i],
        })
        .collect())
}

/// Decode every (layer, step) of a generation.
pub fn lens_grid(bundle: &ModelBundle, generation: &Generation, k: usize) -> Result<LensGrid> {
    if generation.bundle_hash != bundle.hash() {
        return Err(Error::BundleMismatch {
            expected: bundle.hash().to_owned(),
            found: generation.bundle_hash.clone(),
        });
    }
    let n_layers = bundle.n_layers();
    let steps = generation.generated.len();
    let positions: Vec<usize> = (0..steps).map(|s| generation.prediction_position(s)).collect();
    let trace = &generation.trace;
    let cells: Vec<LensCell> = (0..(n_layers + 1) * steps)
        .into_par_iter()
        .map(|i| {
            let (layer, step) = (i / steps, i % steps);
            let position = positions[step];
            Ok(LensCell {
                layer,
                position,
                top: lens_topk(bundle, trace.state(layer, position), k)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(n_layers + 1);
    let mut it = cells.into_iter();
    for _ in 0..=n_layers {
        rows.push(it.by_ref().take(steps).collect());
    }
    Ok(LensGrid {
        k,
        prompt_len: generation.prompt.len(),
        positions,
        generated_ids: generation.generated.ids.clone(),
        generated_tokens: generation
            .generated
            .ids
            .iter()
            .map(|&id| bundle.vocab().display(id))
            .collect(),
        rows,
    })
}
