// SPDX-License-Identifier: MIT OR Apache-2.0

//! Greedy decoding.

use serde::{Deserialize, Serialize};

use super::bundle::ModelBundle;
use super::forward::{argmax, forward, ForwardTrace, Intervention, PositionSet};
use super::tokenizer::TokenSeq;
use crate::error::{Error, Result};

/// Output of [`generate`].
///
/// `trace` is the forward pass over `prompt + generated[..n-1]`, the
/// sequence whose last position predicted the final generated token.
/// Attention is causal, so its states at position `prompt.len() - 1 + s`
/// are exactly the states that produced generated token `s`.
#[derive(Debug, Clone)]
pub struct Generation {
    pub prompt_text: String,
    pub prompt: TokenSeq,
    pub generated: TokenSeq,
    pub text: String,
    pub trace: ForwardTrace,
    /// Interventions as applied (with `AllGenerated` resolved).
    pub interventions: Vec<Intervention>,
    pub stopped_on_eot: bool,
    pub bundle_hash: String,
}

impl Generation {
    /// Trace position whose next-token prediction produced generated token `step`.
    pub fn prediction_position(&self, step: usize) -> usize {
        self.prompt.len() - 1 + step
    }
}

/// Serializable summary of a generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub prompt_ids: Vec<u32>,
    pub generated_ids: Vec<u32>,
    pub generated_tokens: Vec<String>,
    pub text: String,
    pub stopped_on_eot: bool,
}

impl GenerationRecord {
    pub fn new(bundle: &ModelBundle, g: &Generation) -> Self {
        Self {
            prompt: g.prompt_text.clone(),
            prompt_ids: g.prompt.ids.clone(),
            generated_ids: g.generated.ids.clone(),
            generated_tokens: g.generated.ids.iter().map(|&id| bundle.vocab().display(id)).collect(),
            text: g.text.clone(),
            stopped_on_eot: g.stopped_on_eot,
        }
    }
}

fn resolve(interventions: &[Intervention], prompt_len: usize) -> Vec<Intervention> {
    interventions
        .iter()
        .map(|iv| match iv {
            Intervention::AddVector {
                layer,
                positions: PositionSet::AllGenerated,
                vector,
                gamma,
            } => Intervention::AddVector {
                layer: *layer,
                positions: PositionSet::From(prompt_len - 1),
                vector: vector.clone(),
                gamma: *gamma,
            },
            other => other.clone(),
        })
        .collect()
}

/// Greedy decoding from a text prompt.
pub fn generate(bundle: &ModelBundle, prompt: &str, max_steps: usize, interventions: &[Intervention]) -> Result<Generation> {
    let tokens = bundle.tokenize(prompt);
    generate_tokens(bundle, prompt, tokens, max_steps, interventions)
}

/// Greedy decoding from an already tokenized prompt.
///
/// Each step re-runs the whole sequence with the interventions, takes the
/// argmax (lowest id on ties) of the final position, and stops after
/// `max_steps` tokens, on `<eot>`, or when the context is full.
pub fn generate_tokens(
    bundle: &ModelBundle,
    prompt_text: &str,
    prompt: TokenSeq,
    max_steps: usize,
    interventions: &[Intervention],
) -> Result<Generation> {
    if max_steps == 0 {
        return Err(Error::OutOfRange("max_steps must be >= 1".into()));
    }
    if prompt.is_empty() {
        return Err(Error::EmptySequence("prompt tokenizes to nothing".into()));
    }
    let max_seq = bundle.config().max_seq;
    if prompt.len() > max_seq {
        return Err(Error::SequenceTooLong {
            len: prompt.len(),
            max: max_seq,
        });
    }
    let resolved = resolve(interventions, prompt.len());
    let eot = bundle.vocab().eot();
    let mut seq = prompt.ids.clone();
    let mut generated = Vec::new();
    let mut stopped_on_eot = false;
    let mut last_trace = None;
    for _ in 0..max_steps {
        if seq.len() > max_seq {
            break;
        }
        let trace = forward(bundle, &seq, &resolved)?;
        let next = argmax(trace.last_logits()) as u32;
        last_trace = Some(trace);
        generated.push(next);
        seq.push(next);
        if Some(next) == eot {
            stopped_on_eot = true;
            break;
        }
    }
    let trace = last_trace.expect("max_steps >= 1 and prompt fits, so one step ran");

    let mut offsets = Vec::with_capacity(generated.len());
    let mut cursor = 0;
    for &id in &generated {
        let n = bundle.vocab().detokenize_bytes(&[id]).len();
        offsets.push(cursor..cursor + n);
        cursor += n;
    }
    let text = bundle.detokenize(&generated);
    Ok(Generation {
        prompt_text: prompt_text.to_owned(),
        prompt,
        generated: TokenSeq {
            ids: generated,
            offsets,
        },
        text,
        trace,
        interventions: resolved,
        stopped_on_eot,
        bundle_hash: bundle.hash().to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize_bundle, toy_vocabulary, ModelConfig};

    fn bundle() -> ModelBundle {
        let vocab = toy_vocabulary(&["water", "lake", "sun"]);
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 2,
            d_ff: 64,
            vocab_size: vocab.len(),
            max_seq: 24,
            norm_epsilon: 1e-5,
        };
        synthesize_bundle(5, cfg, vocab).unwrap()
    }

    #[test]
    fn one_step_is_argmax_of_prompt() {
        let b = bundle();
        let g = generate(&b, "the water", 1, &[]).unwrap();
        let tr = forward(&b, &b.tokenize("the water").ids, &[]).unwrap();
        assert_eq!(g.generated.ids, vec![argmax(tr.last_logits()) as u32]);
    }

    #[test]
    fn deterministic() {
        let b = bundle();
        let a = generate(&b, "sun lake", 6, &[]).unwrap();
        let c = generate(&b, "sun lake", 6, &[]).unwrap();
        assert_eq!(a.generated, c.generated);
        assert_eq!(a.text, c.text);
    }

    #[test]
    fn stops_at_context_limit() {
        let b = bundle();
        let prompt = "water ".repeat(10);
        let g = generate(&b, &prompt, 100, &[]).unwrap();
        assert!(g.prompt.len() + g.generated.len() <= 25);
        assert_eq!(g.trace.seq_len(), g.prompt.len() + g.generated.len() - 1);
    }

    #[test]
    fn errors() {
        let b = bundle();
        assert!(generate(&b, "water", 0, &[]).is_err());
        assert!(matches!(generate(&b, "", 3, &[]), Err(Error::EmptySequence(_))));
        let long = "x".repeat(30);
        assert!(matches!(generate(&b, &long, 3, &[]), Err(Error::SequenceTooLong { .. })));
    }
}
