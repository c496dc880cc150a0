// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hidden-state interpolation between two prompts that state the same fact
//! in different languages.
//!
//! For each `alpha` the blended state `alpha h_A + (1 - alpha) h_B` at one
//! layer and the final prompt position replaces the host prompt's own state
//! there, and the host is decoded greedily from that point.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, generate, ForwardTrace, Intervention, ModelBundle};
use crate::routing::{normalize, segment_words, Segmenter};

/// Whose context receives the blended state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Host {
    #[default]
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSpec {
    pub prompt_a: String,
    pub prompt_b: String,
    pub layer: usize,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub host: Host,
    /// Language -> accepted answer forms.
    pub answer_sets: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub instruction_prefix: Option<String>,
}

impl InterpolationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::EmptyInput("no alphas".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::OutOfRange(format!("alpha {a} outside [0, 1]")));
        }
        if self.answer_sets.is_empty() || self.answer_sets.values().any(|s| s.iter().all(|f| normalize(f).is_empty())) {
            return Err(Error::EmptyInput("every answer set needs at least one form".into()));
        }
        Ok(())
    }

    /// Prompts with the instruction prefix applied.
    pub fn full_prompts(&self) -> (String, String) {
        let pre = self.instruction_prefix.as_deref().unwrap_or("");
        (format!("{pre}{}", self.prompt_a), format!("{pre}{}", self.prompt_b))
    }
}

/// Blend of the final-position states of two traces at `layer`.
pub fn interpolate_state(trace_a: &ForwardTrace, trace_b: &ForwardTrace, layer: usize, alpha: f64) -> Result<Vec<f64>> {
    if trace_a.bundle_hash() != trace_b.bundle_hash() {
        return Err(Error::BundleMismatch {
            expected: trace_a.bundle_hash().to_owned(),
            found: trace_b.bundle_hash().to_owned(),
        });
    }
    if layer > trace_a.n_layers() {
        return Err(Error::OutOfRange(format!("layer {layer} outside [0, {}]", trace_a.n_layers())));
    }
    let a = trace_a.state(layer, trace_a.seq_len() - 1);
    let b = trace_b.state(layer, trace_b.seq_len() - 1);
    Ok(a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect())
}

/// Result of language identification.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageLabel {
    Language(String),
    Ambiguous,
    Other,
}

impl LanguageLabel {
    pub fn key(&self) -> &str {
        match self {
            Self::Language(l) => l,
            Self::Ambiguous => "ambiguous",
            Self::Other => "other",
        }
    }
}

/// Language -> normalized word set.
pub type LanguageLexicons = BTreeMap<String, HashSet<String>>;

/// Count, per language, the words of `text` found in its lexicon.
pub fn language_votes(text: &str, lexicons: &LanguageLexicons, segmenter: &Segmenter) -> BTreeMap<String, usize> {
    let words: Vec<String> = segment_words(text, segmenter).iter().map(|w| normalize(&w.surface)).collect();
    lexicons
        .iter()
        .map(|(lang, lex)| (lang.clone(), words.iter().filter(|w| lex.contains(*w)).count()))
        .collect()
}

/// Majority vote; a tie for first is ambiguous, no hits at all is other.
pub fn classify_language(text: &str, lexicons: &LanguageLexicons, segmenter: &Segmenter) -> Result<LanguageLabel> {
    if lexicons.is_empty() {
        return Err(Error::EmptyInput("no language lexicons".into()));
    }
    Ok(label_from_votes(&language_votes(text, lexicons, segmenter)))
}

fn label_from_votes(votes: &BTreeMap<String, usize>) -> LanguageLabel {
    let best = votes.values().copied().max().unwrap_or(0);
    if best == 0 {
        return LanguageLabel::Other;
    }
    let mut winners = votes.iter().filter(|(_, &v)| v == best);
    match (winners.next(), winners.next()) {
        (Some((lang, _)), None) => LanguageLabel::Language(lang.clone()),
        _ => LanguageLabel::Ambiguous,
    }
}

/// Whether any accepted form appears in `text` as a contiguous word sequence.
pub fn contains_answer(text: &str, forms: &[String], segmenter: &Segmenter) -> bool {
    let words: Vec<String> = segment_words(text, segmenter).iter().map(|w| normalize(&w.surface)).collect();
    forms.iter().any(|f| {
        let needle: Vec<String> = segment_words(f, segmenter).iter().map(|w| normalize(&w.surface)).collect();
        !needle.is_empty() && words.windows(needle.len()).any(|w| w == needle.as_slice())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationPoint {
    pub alpha: f64,
    pub output_text: String,
    pub generated_ids: Vec<u32>,
    pub correct: bool,
    pub answer_language: LanguageLabel,
    pub votes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCurve {
    pub spec: InterpolationSpec,
    pub points: Vec<InterpolationPoint>,
    pub accuracy: f64,
    /// Fraction of points per language label (plus `ambiguous` and `other`).
    pub propensity: BTreeMap<String, f64>,
}

/// One point of the curve.
pub fn interpolation_point(
    bundle: &ModelBundle,
    spec: &InterpolationSpec,
    traces: (&ForwardTrace, &ForwardTrace),
    alpha: f64,
    lexicons: &LanguageLexicons,
    segmenter: &Segmenter,
    max_steps: usize,
) -> Result<InterpolationPoint> {
    let (prompt_a, prompt_b) = spec.full_prompts();
    let state = interpolate_state(traces.0, traces.1, spec.layer, alpha)?;
    let (host_prompt, host_trace) = match spec.host {
        Host::A => (&prompt_a, traces.0),
        Host::B => (&prompt_b, traces.1),
    };
    let patch = Intervention::ReplaceState {
        layer: spec.layer,
        positions: vec![host_trace.seq_len() - 1],
        states: vec![state],
    };
    let g = generate(bundle, host_prompt, max_steps, &[patch])?;
    let all_forms: Vec<String> = spec.answer_sets.values().flatten().cloned().collect();
    let votes = language_votes(&g.text, lexicons, segmenter);
    Ok(InterpolationPoint {
        alpha,
        correct: contains_answer(&g.text, &all_forms, segmenter),
        answer_language: label_from_votes(&votes),
        votes,
        generated_ids: g.generated.ids,
        output_text: g.text,
    })
}

/// Clean traces of both (prefixed) prompts.
pub fn clean_traces(bundle: &ModelBundle, spec: &InterpolationSpec) -> Result<(ForwardTrace, ForwardTrace)> {
    let (a, b) = spec.full_prompts();
    let ta = forward(bundle, &bundle.tokenize(&a).ids, &[])?;
    let tb = forward(bundle, &bundle.tokenize(&b).ids, &[])?;
    Ok((ta, tb))
}

pub fn interpolation_curve(
    bundle: &ModelBundle,
    spec: &InterpolationSpec,
    lexicons: &LanguageLexicons,
    segmenter: &Segmenter,
    max_steps: usize,
) -> Result<InterpolationCurve> {
    spec.validate()?;
    if lexicons.is_empty() {
        return Err(Error::EmptyInput("no language lexicons".into()));
    }
    let (ta, tb) = clean_traces(bundle, spec)?;
    let points: Vec<InterpolationPoint> = spec
        .alphas
        .par_iter()
        .map(|&alpha| interpolation_point(bundle, spec, (&ta, &tb), alpha, lexicons, segmenter, max_steps))
        .collect::<Result<_>>()?;
    let n = points.len() as f64;
    let accuracy = points.iter().filter(|p| p.correct).count() as f64 / n;
    let mut propensity: BTreeMap<String, f64> = lexicons.keys().map(|k| (k.clone(), 0.0)).collect();
    propensity.insert("ambiguous".into(), 0.0);
    propensity.insert("other".into(), 0.0);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &points {
        *counts.entry(p.answer_language.key()).or_default() += 1;
    }
    for (k, c) in counts {
        propensity.insert(k.to_owned(), c as f64 / n);
    }
    Ok(InterpolationCurve {
        spec: spec.clone(),
        points,
        accuracy,
        propensity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize_bundle, toy_config, toy_vocabulary, TOY_WORDS};

    fn lexicons() -> LanguageLexicons {
        let mut m = LanguageLexicons::new();
        m.insert("nl".into(), ["het", "water", "is", "koud"].iter().map(|s| s.to_string()).collect());
        m.insert("en".into(), ["the", "water", "is", "cold"].iter().map(|s| s.to_string()).collect());
        m
    }

    #[test]
    fn language_examples() {
        let seg = Segmenter::Whitespace;
        let lex = lexicons();
        assert_eq!(
            classify_language("het water is koud", &lex, &seg).unwrap(),
            LanguageLabel::Language("nl".into())
        );
        assert_eq!(classify_language("", &lex, &seg).unwrap(), LanguageLabel::Other);
        assert_eq!(classify_language("water", &lex, &seg).unwrap(), LanguageLabel::Ambiguous);
        assert!(classify_language("x", &LanguageLexicons::new(), &seg).is_err());
    }

    #[test]
    fn answer_containment() {
        let seg = Segmenter::Whitespace;
        let forms = vec!["Ottawa".to_owned(), "New York".to_owned()];
        assert!(contains_answer(" Ottawa.", &forms, &seg));
        assert!(contains_answer("in new york!", &forms, &seg));
        assert!(!contains_answer("Ottawan", &forms, &seg));
    }

    fn spec(host: Host, alphas: Vec<f64>) -> InterpolationSpec {
        InterpolationSpec {
            prompt_a: "The capital of Canada is".into(),
            prompt_b: "De hoofdstad van Canada is".into(),
            layer: 2,
            alphas,
            host,
            answer_sets: [("en".to_owned(), vec!["Ottawa".to_owned()])].into_iter().collect(),
            instruction_prefix: None,
        }
    }

    #[test]
    fn endpoints_match_unpatched() {
        let vocab = toy_vocabulary(TOY_WORDS);
        let b = synthesize_bundle(3, toy_config(vocab.len()), vocab).unwrap();
        let lex = lexicons();
        let seg = Segmenter::Whitespace;
        let c = interpolation_curve(&b, &spec(Host::A, vec![1.0]), &lex, &seg, 5).unwrap();
        let plain = generate(&b, "The capital of Canada is", 5, &[]).unwrap();
        assert_eq!(c.points[0].generated_ids, plain.generated.ids);
        let c = interpolation_curve(&b, &spec(Host::B, vec![0.0]), &lex, &seg, 5).unwrap();
        let plain = generate(&b, "De hoofdstad van Canada is", 5, &[]).unwrap();
        assert_eq!(c.points[0].generated_ids, plain.generated.ids);
        let sum: f64 = c.propensity.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(spec(Host::A, vec![1.5]).validate().is_err());
        assert!(spec(Host::A, vec![]).validate().is_err());
        let mut s = spec(Host::A, vec![0.5]);
        s.answer_sets.insert("nl".into(), vec![]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn blend_oracle() {
        let vocab = toy_vocabulary(TOY_WORDS);
        let b = synthesize_bundle(3, toy_config(vocab.len()), vocab).unwrap();
        let (ta, tb) = clean_traces(&b, &spec(Host::A, vec![0.5])).unwrap();
        let s = interpolate_state(&ta, &tb, 1, 0.3).unwrap();
        let a = ta.state(1, ta.seq_len() - 1);
        let bb = tb.state(1, tb.seq_len() - 1);
        for i in 0..s.len() {
            assert!((s[i] - (0.3 * a[i] + 0.7 * bb[i])).abs() < 1e-15);
        }
        assert_eq!(interpolate_state(&ta, &tb, 1, 1.0).unwrap(), a);
        assert!(interpolate_state(&ta, &tb, 9, 1.0).is_err());
    }
}
