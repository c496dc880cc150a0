// SPDX-License-Identifier: MIT OR Apache-2.0

//! Causal tracing.
//!
//! 1. Corrupt: add isotropic Gaussian noise to the embedding rows of the
//!    subject tokens and measure `p[answer]` at the final position.
//! 2. Restore: for one (layer, position) cell, copy the clean state back
//!    into the corrupted run and push it through the remaining blocks.
//! 3. The indirect effect of the cell is `p[answer | restored] -
//!    p[answer | corrupted]`, averaged over noise seeds.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, forward_from, softmax, ForwardTrace, Intervention, ModelBundle};
use crate::rng::derive_seed;

pub const DEFAULT_THRESHOLD_RATIO: f64 = 0.2;
pub const DEFAULT_N_SEEDS: usize = 10;
pub const DEFAULT_MAX_ATTEMPTS: usize = 10;
/// Auto noise scale is this multiple of the token-embedding std.
pub const SIGMA_EMBEDDING_MULTIPLE: f64 = 3.0;
/// Growth of sigma between corruption attempts.
pub const SIGMA_GROWTH: f64 = 1.5;

/// A prompt, which tokens name the subject, and the expected answer token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactProbe {
    pub prompt: String,
    pub tokens: Vec<u32>,
    pub subject_span: Range<usize>,
    pub answer_token: u32,
}

impl FactProbe {
    pub fn new(bundle: &ModelBundle, prompt: &str, subject_span: Range<usize>, answer_token: u32) -> Result<Self> {
        let tokens = bundle.tokenize(prompt).ids;
        if subject_span.is_empty() {
            return Err(Error::EmptyInput("subject span".into()));
        }
        if subject_span.end > tokens.len() {
            return Err(Error::OutOfRange(format!(
                "subject span {subject_span:?} outside prompt of {} tokens",
                tokens.len()
            )));
        }
        if answer_token as usize >= bundle.config().vocab_size {
            return Err(Error::OutOfRange(format!("answer token {answer_token} not in vocabulary")));
        }
        Ok(Self {
            prompt: prompt.to_owned(),
            tokens,
            subject_span,
            answer_token,
        })
    }

    /// Locate `subject` (last occurrence) in `prompt` and take the first
    /// token of `answer` as the target.
    pub fn from_text(bundle: &ModelBundle, prompt: &str, subject: &str, answer: &str) -> Result<Self> {
        let start = prompt
            .rfind(subject)
            .filter(|_| !subject.is_empty())
            .ok_or_else(|| Error::EmptyInput(format!("subject {subject:?} not found in prompt {prompt:?}")))?;
        let seq = bundle.tokenize(prompt);
        let span = seq.span_for_bytes(start..start + subject.len());
        let answer_token = *bundle
            .tokenize(answer)
            .ids
            .first()
            .ok_or_else(|| Error::EmptyInput("answer string".into()))?;
        Self::new(bundle, prompt, span, answer_token)
    }
}

fn answer_prob(trace: &ForwardTrace, answer: u32) -> f64 {
    softmax(trace.last_logits())[answer as usize]
}

fn noise(probe: &FactProbe, sigma: f64, seed: u64) -> Intervention {
    Intervention::NoiseEmbedding {
        positions: probe.subject_span.clone().collect(),
        sigma,
        seed,
    }
}

pub fn clean_run(bundle: &ModelBundle, probe: &FactProbe) -> Result<(ForwardTrace, f64)> {
    let trace = forward(bundle, &probe.tokens, &[])?;
    let p = answer_prob(&trace, probe.answer_token);
    Ok((trace, p))
}

/// Forward with noise on the subject embeddings; returns the trace and
/// `p[answer]` at the final position.
pub fn corrupt_run(bundle: &ModelBundle, probe: &FactProbe, sigma: f64, seed: u64) -> Result<(ForwardTrace, f64)> {
    if probe.subject_span.is_empty() {
        return Err(Error::EmptyInput("subject span".into()));
    }
    let trace = forward(bundle, &probe.tokens, &[noise(probe, sigma, seed)])?;
    let p = answer_prob(&trace, probe.answer_token);
    Ok((trace, p))
}

/// Population standard deviation of the token-embedding matrix.
pub fn embedding_std(bundle: &ModelBundle) -> f64 {
    let data = &bundle.tensor("token_embedding").expect("validated bundle").data;
    let n = data.len() as f64;
    let mean = data.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = data.iter().map(|&x| (f64::from(x) - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

pub fn default_sigma(bundle: &ModelBundle) -> f64 {
    SIGMA_EMBEDDING_MULTIPLE * embedding_std(bundle)
}

/// Noise configuration accepted by [`ensure_corrupted`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub sigma: f64,
    pub seeds: Vec<u64>,
    pub attempts: usize,
    pub p_clean: f64,
    pub p_corrupted: Vec<f64>,
}

/// Grow sigma from `sigma0` by 1.5x per attempt until every seed gives
/// `p_corrupted < threshold_ratio * p_clean`.
pub fn ensure_corrupted(
    bundle: &ModelBundle,
    probe: &FactProbe,
    sigma0: f64,
    threshold_ratio: f64,
    max_attempts: usize,
    seeds: &[u64],
) -> Result<Corruption> {
    if !(threshold_ratio > 0.0 && threshold_ratio < 1.0) {
        return Err(Error::OutOfRange(format!("threshold_ratio {threshold_ratio} outside (0, 1)")));
    }
    if !(sigma0.is_finite() && sigma0 >= 0.0) {
        return Err(Error::OutOfRange(format!("sigma0 {sigma0} must be finite and >= 0")));
    }
    if seeds.is_empty() {
        return Err(Error::EmptyInput("noise seeds".into()));
    }
    let (_, p_clean) = clean_run(bundle, probe)?;
    let mut sigma = sigma0;
    for attempt in 1..=max_attempts {
        let p_corrupted = seeds
            .par_iter()
            .map(|&s| corrupt_run(bundle, probe, sigma, s).map(|(_, p)| p))
            .collect::<Result<Vec<f64>>>()?;
        if p_corrupted.iter().all(|&p| p < threshold_ratio * p_clean) {
            return Ok(Corruption {
                sigma,
                seeds: seeds.to_vec(),
                attempts: attempt,
                p_clean,
                p_corrupted,
            });
        }
        if attempt < max_attempts {
            sigma *= SIGMA_GROWTH;
        }
    }
    Err(Error::InsufficientCorruption {
        attempts: max_attempts,
        last_sigma: sigma,
        threshold_ratio,
    })
}

fn check_cell(probe: &FactProbe, n_layers: usize, layer: usize, position: usize) -> Result<()> {
    if layer > n_layers || position >= probe.tokens.len() {
        return Err(Error::OutOfRange(format!(
            "cell ({layer}, {position}) outside grid {}x{}",
            n_layers + 1,
            probe.tokens.len()
        )));
    }
    Ok(())
}

/// Effect of restoring one clean cell into an already corrupted run.
pub fn restore_cell(
    bundle: &ModelBundle,
    probe: &FactProbe,
    clean: &ForwardTrace,
    corrupted: &ForwardTrace,
    p_corrupted: f64,
    layer: usize,
    position: usize,
) -> Result<f64> {
    check_cell(probe, bundle.n_layers(), layer, position)?;
    let restore = Intervention::ReplaceState {
        layer,
        positions: vec![position],
        states: vec![clean.state(layer, position).to_vec()],
    };
    let restored = forward_from(bundle, corrupted, layer, &[restore])?;
    Ok(answer_prob(&restored, probe.answer_token) - p_corrupted)
}

/// `p[answer | restored at (layer, position)] - p[answer | corrupted]` for
/// one noise seed.
pub fn restore_and_measure(
    bundle: &ModelBundle,
    probe: &FactProbe,
    clean: &ForwardTrace,
    sigma: f64,
    seed: u64,
    layer: usize,
    position: usize,
) -> Result<f64> {
    check_cell(probe, bundle.n_layers(), layer, position)?;
    let (corrupted, p_corrupted) = corrupt_run(bundle, probe, sigma, seed)?;
    restore_cell(bundle, probe, clean, &corrupted, p_corrupted, layer, position)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// `None` = three times the token-embedding std.
    pub sigma0: Option<f64>,
    pub threshold_ratio: f64,
    pub n_seeds: usize,
    pub max_attempts: usize,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            sigma0: None,
            threshold_ratio: DEFAULT_THRESHOLD_RATIO,
            n_seeds: DEFAULT_N_SEEDS,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            seed: 0,
            parallel: true,
        }
    }
}

/// Average indirect effect per (layer, prompt position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceGrid {
    /// `(L + 1) x T`; row 0 is the embedding layer.
    pub aie: Vec<Vec<f64>>,
    pub p_clean: f64,
    pub p_corrupted_mean: f64,
    pub n_seeds: usize,
    pub sigma: f64,
    pub seeds: Vec<u64>,
    pub attempts: usize,
    pub subject_span: Range<usize>,
    pub tokens: Vec<String>,
    pub answer: String,
}

pub fn trace_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(base, i)).collect()
}

/// Corrupt (escalating sigma as needed), then restore every cell for
/// every seed and average in seed order.
pub fn trace_grid(bundle: &ModelBundle, probe: &FactProbe, config: &TraceConfig) -> Result<TraceGrid> {
    if config.n_seeds == 0 {
        return Err(Error::EmptyInput("n_seeds must be >= 1".into()));
    }
    let seeds = trace_seeds(config.seed, config.n_seeds);
    let sigma0 = config.sigma0.unwrap_or_else(|| default_sigma(bundle));
    let corruption = ensure_corrupted(bundle, probe, sigma0, config.threshold_ratio, config.max_attempts, &seeds)?;
    let (clean, p_clean) = clean_run(bundle, probe)?;

    let n_layers = bundle.n_layers();
    let t = probe.tokens.len();
    let per_seed = |seed: u64| -> Result<(Vec<f64>, f64)> {
        let (corrupted, p_corr) = corrupt_run(bundle, probe, corruption.sigma, seed)?;
        let cell = |i: usize| restore_cell(bundle, probe, &clean, &corrupted, p_corr, i / t, i % t);
        let cells = if config.parallel {
            (0..(n_layers + 1) * t).into_par_iter().map(cell).collect::<Result<Vec<_>>>()?
        } else {
            (0..(n_layers + 1) * t).map(cell).collect::<Result<Vec<_>>>()?
        };
        Ok((cells, p_corr))
    };
    let results: Vec<(Vec<f64>, f64)> = if config.parallel {
        seeds.par_iter().map(|&s| per_seed(s)).collect::<Result<_>>()?
    } else {
        seeds.iter().map(|&s| per_seed(s)).collect::<Result<_>>()?
    };

    // Fixed reduction order: seed index ascending.
    let n = seeds.len() as f64;
    let mut sums = vec![0.0; (n_layers + 1) * t];
    let mut p_sum = 0.0;
    for (cells, p) in &results {
        for (s, c) in sums.iter_mut().zip(cells) {
            *s += c;
        }
        p_sum += p;
    }
    let aie = sums.chunks(t).map(|row| row.iter().map(|s| s / n).collect()).collect();
    Ok(TraceGrid {
        aie,
        p_clean,
        p_corrupted_mean: p_sum / n,
        n_seeds: seeds.len(),
        sigma: corruption.sigma,
        seeds,
        attempts: corruption.attempts,
        subject_span: probe.subject_span.clone(),
        tokens: probe.tokens.iter().map(|&id| bundle.vocab().display(id)).collect(),
        answer: bundle.vocab().display(probe.answer_token),
    })
}
