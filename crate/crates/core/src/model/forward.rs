// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward pass with residual-stream capture and intervention hooks.
//!
//! Hook points: layer 0 is the embedding output (token + position), layer
//! `l >= 1` is the residual stream after block `l`. Every intervention
//! edits the stream at its hook point, in declared order, before the next
//! block reads it. `NoiseEmbedding` always targets layer 0.

use serde::{Deserialize, Serialize};

use super::bundle::ModelBundle;
use crate::error::{Error, Result};
use crate::rng::{tag, CounterRng};

/// Positions an intervention touches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSet {
    /// Explicit positions.
    Positions(Vec<usize>),
    /// Every position at or after the given one.
    From(usize),
    /// Only the final position of the sequence being run.
    Last,
    /// Every position from the prompt's final token onward. Generation
    /// resolves this to `From(prompt_len - 1)`; a bare forward treats it as
    /// [`PositionSet::Last`].
    AllGenerated,
}

impl PositionSet {
    pub fn resolve(&self, seq_len: usize) -> Result<Vec<usize>> {
        let positions = match self {
            Self::Positions(p) => p.clone(),
            Self::From(start) => (*start..seq_len).collect(),
            Self::Last | Self::AllGenerated => vec![seq_len - 1],
        };
        if let Some(&p) = positions.iter().find(|&&p| p >= seq_len) {
            return Err(Error::Intervention(format!(
                "position {p} outside sequence of length {seq_len}"
            )));
        }
        Ok(positions)
    }
}

/// Declarative edit of the forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intervention {
    /// `h_l += gamma * vector` at each selected position.
    AddVector {
        layer: usize,
        positions: PositionSet,
        vector: Vec<f64>,
        gamma: f64,
    },
    /// Overwrite `h_l` at each position with the matching payload row.
    ReplaceState {
        layer: usize,
        positions: Vec<usize>,
        states: Vec<Vec<f64>>,
    },
    /// Isotropic Gaussian noise on the embedding rows, keyed by
    /// `(seed, position, dim)`.
    NoiseEmbedding {
        positions: Vec<usize>,
        sigma: f64,
        seed: u64,
    },
}

impl Intervention {
    pub fn layer(&self) -> usize {
        match self {
            Self::AddVector { layer, .. } | Self::ReplaceState { layer, .. } => *layer,
            Self::NoiseEmbedding { .. } => 0,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::AddVector { .. } => "add_vector",
            Self::ReplaceState { .. } => "replace_state",
            Self::NoiseEmbedding { .. } => "noise_embedding",
        }
    }

    fn validate(&self, n_layers: usize, d: usize, seq_len: usize) -> Result<Vec<usize>> {
        if self.layer() > n_layers {
            return Err(Error::Intervention(format!(
                "layer {} outside [0, {n_layers}]",
                self.layer()
            )));
        }
        match self {
            Self::AddVector {
                positions,
                vector,
                gamma,
                ..
            } => {
                if vector.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: vector.len(),
                    });
                }
                if !gamma.is_finite() {
                    return Err(Error::Intervention(format!("gamma {gamma} is not finite")));
                }
                positions.resolve(seq_len)
            }
            Self::ReplaceState { positions, states, .. } => {
                if positions.len() != states.len() {
                    return Err(Error::Intervention(format!(
                        "{} positions but {} replacement states",
                        positions.len(),
                        states.len()
                    )));
                }
                if let Some(s) = states.iter().find(|s| s.len() != d) {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: s.len(),
                    });
                }
                PositionSet::Positions(positions.clone()).resolve(seq_len)
            }
            Self::NoiseEmbedding { positions, sigma, .. } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::Intervention(format!("sigma {sigma} must be finite and >= 0")));
                }
                PositionSet::Positions(positions.clone()).resolve(seq_len)
            }
        }
    }
}

/// Record of an intervention as it was applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedIntervention {
    pub kind: String,
    pub layer: usize,
    pub positions: Vec<usize>,
}

/// Residual stream at every hook point plus final logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    n_layers: usize,
    seq_len: usize,
    d_model: usize,
    vocab_size: usize,
    states: Vec<f64>,
    logits: Vec<f64>,
    applied: Vec<AppliedIntervention>,
    bundle_hash: String,
}

impl ForwardTrace {
    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn bundle_hash(&self) -> &str {
        &self.bundle_hash
    }

    /// `h_layer` at `position`.
    pub fn state(&self, layer: usize, position: usize) -> &[f64] {
        let start = (layer * self.seq_len + position) * self.d_model;
        &self.states[start..start + self.d_model]
    }

    /// All positions at one hook point, `seq_len * d_model` values.
    pub fn layer_states(&self, layer: usize) -> &[f64] {
        let n = self.seq_len * self.d_model;
        &self.states[layer * n..(layer + 1) * n]
    }

    pub fn logits(&self, position: usize) -> &[f64] {
        &self.logits[position * self.vocab_size..(position + 1) * self.vocab_size]
    }

    pub fn last_logits(&self) -> &[f64] {
        self.logits(self.seq_len - 1)
    }

    pub fn applied(&self) -> &[AppliedIntervention] {
        &self.applied
    }
}

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

/// `out = x (rows x in) * w (in x out)`, `w` row-major.
fn matmul(x: &[f64], rows: usize, w: &[f32], in_dim: usize, out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * out_dim];
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let yr = &mut out[r * out_dim..(r + 1) * out_dim];
        for (i, &xi) in xr.iter().enumerate() {
            let wr = &w[i * out_dim..(i + 1) * out_dim];
            for (y, &wij) in yr.iter_mut().zip(wr) {
                *y += xi * f64::from(wij);
            }
        }
    }
    out
}

/// RMS norm of one row with a learned gain.
pub(crate) fn rms_norm(x: &[f64], gain: &[f32], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let scale = 1.0 / (ms + eps).sqrt();
    x.iter().zip(gain).map(|(v, &g)| v * scale * f64::from(g)).collect()
}

/// GELU, tanh approximation.
pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Final norm followed by unembedding. The same routine serves the model
/// head and the logit lens, so both read identical numbers.
pub fn head_logits(bundle: &ModelBundle, state: &[f64]) -> Result<Vec<f64>> {
    let c = bundle.config();
    if state.len() != c.d_model {
        return Err(Error::DimensionMismatch {
            expected: c.d_model,
            found: state.len(),
        });
    }
    let lay = bundle.layout();
    let normed = rms_norm(state, bundle.data(lay.final_norm), c.norm_epsilon);
    Ok(matmul(&normed, 1, bundle.data(lay.unembedding), c.d_model, c.vocab_size))
}

fn block(bundle: &ModelBundle, b: usize, input: &[f64], seq_len: usize) -> Vec<f64> {
    let c = bundle.config();
    let (d, heads, hd) = (c.d_model, c.n_heads, c.head_dim());
    let slots = bundle.layout().blocks[b];
    let eps = c.norm_epsilon;

    let normed: Vec<f64> = input
        .chunks_exact(d)
        .flat_map(|row| rms_norm(row, bundle.data(slots.attn_norm), eps))
        .collect();
    let q = matmul(&normed, seq_len, bundle.data(slots.wq), d, d);
    let k = matmul(&normed, seq_len, bundle.data(slots.wk), d, d);
    let v = matmul(&normed, seq_len, bundle.data(slots.wv), d, d);

    let scale = 1.0 / (hd as f64).sqrt();
    let mut ctx = vec![0.0; seq_len * d];
    let mut scores = Vec::with_capacity(seq_len);
    for h in 0..heads {
        let off = h * hd;
        for t in 0..seq_len {
            let qt = &q[t * d + off..t * d + off + hd];
            scores.clear();
            // Causal: only keys at or before t.
            for j in 0..=t {
                let kj = &k[j * d + off..j * d + off + hd];
                scores.push(qt.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale);
            }
            let weights = softmax(&scores);
            let out = &mut ctx[t * d + off..t * d + off + hd];
            for (j, w) in weights.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + hd];
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
        }
    }
    let attn_out = matmul(&ctx, seq_len, bundle.data(slots.wo), d, d);
    let mut resid: Vec<f64> = input.iter().zip(&attn_out).map(|(a, b)| a + b).collect();

    let normed: Vec<f64> = resid
        .chunks_exact(d)
        .flat_map(|row| rms_norm(row, bundle.data(slots.ffn_norm), eps))
        .collect();
    let mut hidden = matmul(&normed, seq_len, bundle.data(slots.w_in), d, c.d_ff);
    hidden.iter_mut().for_each(|x| *x = gelu(*x));
    let ffn_out = matmul(&hidden, seq_len, bundle.data(slots.w_out), c.d_ff, d);
    resid.iter_mut().zip(&ffn_out).for_each(|(r, f)| *r += f);
    resid
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

struct Checked<'a> {
    intervention: &'a Intervention,
    positions: Vec<usize>,
}

fn check_all<'a>(
    bundle: &ModelBundle,
    seq_len: usize,
    interventions: &'a [Intervention],
) -> Result<Vec<Checked<'a>>> {
    let c = bundle.config();
    interventions
        .iter()
        .map(|iv| {
            let positions = iv.validate(c.n_layers, c.d_model, seq_len)?;
            Ok(Checked {
                intervention: iv,
                positions,
            })
        })
        .collect()
}

fn apply_hooks(layer: usize, states: &mut [f64], d: usize, checked: &[Checked<'_>], applied: &mut Vec<AppliedIntervention>) {
    for ch in checked.iter().filter(|c| c.intervention.layer() == layer) {
        match ch.intervention {
            Intervention::AddVector { vector, gamma, .. } => {
                for &p in &ch.positions {
                    let row = &mut states[p * d..(p + 1) * d];
                    for (x, v) in row.iter_mut().zip(vector) {
                        *x += gamma * v;
                    }
                }
            }
            Intervention::ReplaceState { states: payload, .. } => {
                for (&p, s) in ch.positions.iter().zip(payload) {
                    states[p * d..(p + 1) * d].copy_from_slice(s);
                }
            }
            Intervention::NoiseEmbedding { sigma, seed, .. } => {
                let rng = CounterRng::new(*seed, tag("embedding-noise"));
                for &p in &ch.positions {
                    let stream = rng.fork(p as u64);
                    let row = &mut states[p * d..(p + 1) * d];
                    for (i, x) in row.iter_mut().enumerate() {
                        *x += sigma * stream.normal(i as u64);
                    }
                }
            }
        }
        applied.push(AppliedIntervention {
            kind: ch.intervention.kind().to_owned(),
            layer,
            positions: ch.positions.clone(),
        });
    }
}

fn check_tokens(bundle: &ModelBundle, ids: &[u32]) -> Result<()> {
    let c = bundle.config();
    if ids.is_empty() {
        return Err(Error::EmptySequence("forward needs at least one token".into()));
    }
    if ids.len() > c.max_seq {
        return Err(Error::SequenceTooLong {
            len: ids.len(),
            max: c.max_seq,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= c.vocab_size) {
        return Err(Error::OutOfRange(format!("token id {id} >= vocab_size {}", c.vocab_size)));
    }
    Ok(())
}

/// Run the model over `ids`, applying `interventions` at their hook points.
pub fn forward(bundle: &ModelBundle, ids: &[u32], interventions: &[Intervention]) -> Result<ForwardTrace> {
    check_tokens(bundle, ids)?;
    let c = bundle.config();
    let (d, t) = (c.d_model, ids.len());
    let lay = bundle.layout();
    let tok = bundle.data(lay.token_embedding);
    let pos = bundle.data(lay.position_embedding);
    let mut embed = vec![0.0; t * d];
    for (p, &id) in ids.iter().enumerate() {
        let row = &mut embed[p * d..(p + 1) * d];
        let te = &tok[id as usize * d..(id as usize + 1) * d];
        let pe = &pos[p * d..(p + 1) * d];
        for ((x, &a), &b) in row.iter_mut().zip(te).zip(pe) {
            *x = f64::from(a) + f64::from(b);
        }
    }
    run_from(bundle, 0, embed, &[], t, interventions, Vec::new())
}

/// Re-run from hook point `layer` of `base`, keeping `base`'s states up to
/// and including that layer, then applying `interventions` (all of which
/// must target `layer` or later). Equal bit-for-bit to a full forward with
/// `base`'s edits followed by `interventions`.
pub fn forward_from(
    bundle: &ModelBundle,
    base: &ForwardTrace,
    layer: usize,
    interventions: &[Intervention],
) -> Result<ForwardTrace> {
    if base.bundle_hash != bundle.hash() {
        return Err(Error::BundleMismatch {
            expected: bundle.hash().to_owned(),
            found: base.bundle_hash.clone(),
        });
    }
    if layer > base.n_layers {
        return Err(Error::OutOfRange(format!("resume layer {layer} > {}", base.n_layers)));
    }
    if let Some(iv) = interventions.iter().find(|iv| iv.layer() < layer) {
        return Err(Error::Intervention(format!(
            "cannot apply a layer-{} edit when resuming at layer {layer}",
            iv.layer()
        )));
    }
    let n = base.seq_len * base.d_model;
    let prefix = &base.states[..layer * n];
    let start = base.layer_states(layer).to_vec();
    let applied: Vec<AppliedIntervention> = base.applied.iter().filter(|a| a.layer <= layer).cloned().collect();
    run_from(bundle, layer, start, prefix, base.seq_len, interventions, applied)
}

fn run_from(
    bundle: &ModelBundle,
    start_layer: usize,
    start_states: Vec<f64>,
    prefix: &[f64],
    seq_len: usize,
    interventions: &[Intervention],
    mut applied: Vec<AppliedIntervention>,
) -> Result<ForwardTrace> {
    let c = bundle.config();
    let d = c.d_model;
    let checked = check_all(bundle, seq_len, interventions)?;
    let n = seq_len * d;
    let mut states = Vec::with_capacity((c.n_layers + 1) * n);
    states.extend_from_slice(prefix);
    states.extend_from_slice(&start_states);
    apply_hooks(start_layer, &mut states[start_layer * n..], d, &checked, &mut applied);
    for l in start_layer + 1..=c.n_layers {
        let next = block(bundle, l - 1, &states[(l - 1) * n..l * n], seq_len);
        states.extend_from_slice(&next);
        apply_hooks(l, &mut states[l * n..], d, &checked, &mut applied);
    }
    let last = &states[c.n_layers * n..];
    let mut logits = Vec::with_capacity(seq_len * c.vocab_size);
    for row in last.chunks_exact(d) {
        logits.extend(head_logits(bundle, row)?);
    }
    Ok(ForwardTrace {
        n_layers: c.n_layers,
        seq_len,
        d_model: d,
        vocab_size: c.vocab_size,
        states,
        logits,
        applied,
        bundle_hash: bundle.hash().to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize_bundle, toy_vocabulary, ModelConfig};

    fn bundle() -> ModelBundle {
        let vocab = toy_vocabulary(&["water", "lake"]);
        let cfg = ModelConfig {
            n_layers: 3,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            vocab_size: vocab.len(),
            max_seq: 16,
            norm_epsilon: 1e-5,
        };
        synthesize_bundle(11, cfg, vocab).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let b = bundle();
        let ids = b.tokenize("the water").ids;
        let tr = forward(&b, &ids, &[]).unwrap();
        for t in 0..tr.seq_len() {
            let s: f64 = softmax(tr.logits(t)).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gamma_is_identity() {
        let b = bundle();
        let ids = b.tokenize("water lake").ids;
        let clean = forward(&b, &ids, &[]).unwrap();
        let iv = Intervention::AddVector {
            layer: 1,
            positions: PositionSet::From(0),
            vector: vec![1.0; 32],
            gamma: 0.0,
        };
        let steered = forward(&b, &ids, &[iv]).unwrap();
        assert_eq!(clean.states, steered.states);
        assert_eq!(clean.logits, steered.logits);
    }

    #[test]
    fn replace_with_own_state_is_identity() {
        let b = bundle();
        let ids = b.tokenize("water lake").ids;
        let clean = forward(&b, &ids, &[]).unwrap();
        let last = ids.len() - 1;
        let iv = Intervention::ReplaceState {
            layer: 3,
            positions: vec![last],
            states: vec![clean.state(3, last).to_vec()],
        };
        let again = forward(&b, &ids, &[iv]).unwrap();
        assert_eq!(clean.logits, again.logits);
    }

    #[test]
    fn intervention_locality() {
        let b = bundle();
        let ids = b.tokenize("water lake water").ids;
        let clean = forward(&b, &ids, &[]).unwrap();
        let iv = Intervention::AddVector {
            layer: 2,
            positions: PositionSet::Last,
            vector: vec![0.5; 32],
            gamma: 3.0,
        };
        let edited = forward(&b, &ids, &[iv]).unwrap();
        for l in 0..2 {
            assert_eq!(clean.layer_states(l), edited.layer_states(l));
        }
        assert_ne!(clean.layer_states(2), edited.layer_states(2));
    }

    #[test]
    fn forward_from_matches_full_forward() {
        let b = bundle();
        let ids = b.tokenize("lake water").ids;
        let noise = Intervention::NoiseEmbedding {
            positions: vec![0],
            sigma: 0.5,
            seed: 4,
        };
        let base = forward(&b, &ids, std::slice::from_ref(&noise)).unwrap();
        let replace = Intervention::ReplaceState {
            layer: 2,
            positions: vec![1],
            states: vec![vec![0.25; 32]],
        };
        let resumed = forward_from(&b, &base, 2, std::slice::from_ref(&replace)).unwrap();
        let full = forward(&b, &ids, &[noise, replace]).unwrap();
        assert_eq!(resumed.states, full.states);
        assert_eq!(resumed.logits, full.logits);
    }

    #[test]
    fn rejects_bad_interventions() {
        let b = bundle();
        let ids = b.tokenize("water").ids;
        let bad_layer = Intervention::AddVector {
            layer: 4,
            positions: PositionSet::Last,
            vector: vec![0.0; 32],
            gamma: 1.0,
        };
        assert!(matches!(forward(&b, &ids, &[bad_layer]), Err(Error::Intervention(_))));
        let bad_dim = Intervention::AddVector {
            layer: 1,
            positions: PositionSet::Last,
            vector: vec![0.0; 31],
            gamma: 1.0,
        };
        assert!(matches!(forward(&b, &ids, &[bad_dim]), Err(Error::DimensionMismatch { .. })));
        let bad_pos = Intervention::NoiseEmbedding {
            positions: vec![5],
            sigma: 1.0,
            seed: 0,
        };
        assert!(matches!(forward(&b, &ids, &[bad_pos]), Err(Error::Intervention(_))));
    }

    #[test]
    fn too_long_rejected() {
        let b = bundle();
        let ids = vec![3u32; 17];
        assert!(matches!(forward(&b, &ids, &[]), Err(Error::SequenceTooLong { len: 17, max: 16 })));
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }
}
