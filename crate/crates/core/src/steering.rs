// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation steering: mean-difference concept vectors added to the
//! residual stream during generation, plus success evaluation, layer/gamma
//! sweeps and cross-language vector geometry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, generate, Generation, Intervention, ModelBundle, PositionSet};
use crate::routing::{normalize, segment_words, Segmenter};

pub const DEFAULT_TOPIC_GAMMA: f64 = 5.0;
pub const DEFAULT_LANGUAGE_GAMMA: f64 = 10.0;
pub const TOPIC_LAYER_STRIDE: usize = 5;
pub const LANGUAGE_LAYER_STRIDE: usize = 2;

/// Longest repeated n-gram checked by the collapse detector.
pub const COLLAPSE_MAX_NGRAM: usize = 4;
/// Consecutive repeats of one n-gram that count as stuttering.
pub const COLLAPSE_REPEATS: usize = 4;
pub const COLLAPSE_WINDOW: usize = 32;
pub const COLLAPSE_MIN_DISTINCT_RATIO: f64 = 0.25;

/// Which hidden state stands for a sentence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRule {
    #[default]
    FinalPosition,
    MeanOverPositions,
}

/// Per-layer direction `v_l`, one row per hook point (`L + 1` rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub concept: String,
    pub language: String,
    pub rule: ExtractionRule,
    pub n_positive: usize,
    pub n_negative: usize,
    pub per_layer: Vec<Vec<f64>>,
}

impl SteeringVector {
    pub fn n_layers(&self) -> usize {
        self.per_layer.len().saturating_sub(1)
    }

    pub fn d_model(&self) -> usize {
        self.per_layer.first().map_or(0, Vec::len)
    }

    pub fn layer(&self, l: usize) -> Result<&[f64]> {
        self.per_layer
            .get(l)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::OutOfRange(format!("layer {l} outside [0, {}]", self.n_layers())))
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.per_layer.len() != other.per_layer.len() {
            return Err(Error::DimensionMismatch {
                expected: self.per_layer.len(),
                found: other.per_layer.len(),
            });
        }
        if self.d_model() != other.d_model() {
            return Err(Error::DimensionMismatch {
                expected: self.d_model(),
                found: other.d_model(),
            });
        }
        Ok(())
    }
}

/// Sum of the extracted per-layer states over `sentences`.
fn summed_states(bundle: &ModelBundle, sentences: &[String], rule: ExtractionRule) -> Result<Vec<Vec<f64>>> {
    let (n_layers, d) = (bundle.n_layers(), bundle.d_model());
    let per_sentence: Vec<Vec<Vec<f64>>> = sentences
        .par_iter()
        .map(|s| {
            let ids = bundle.tokenize(s).ids;
            if ids.is_empty() {
                return Err(Error::EmptySequence(format!("sentence {s:?} tokenizes to nothing")));
            }
            let trace = forward(bundle, &ids, &[])?;
            let t = ids.len();
            Ok((0..=n_layers)
                .map(|l| match rule {
                    ExtractionRule::FinalPosition => trace.state(l, t - 1).to_vec(),
                    ExtractionRule::MeanOverPositions => {
                        let mut acc = vec![0.0; d];
                        for p in 0..t {
                            for (a, x) in acc.iter_mut().zip(trace.state(l, p)) {
                                *a += x;
                            }
                        }
                        acc.iter().map(|a| a / t as f64).collect()
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut sum = vec![vec![0.0; d]; n_layers + 1];
    for states in &per_sentence {
        for (row, s) in sum.iter_mut().zip(states) {
            for (a, x) in row.iter_mut().zip(s) {
                *a += x;
            }
        }
    }
    Ok(sum)
}

/// `v_l = mean(positive) - mean(negative)` at every hook point.
pub fn build_steering_vector(
    bundle: &ModelBundle,
    concept: &str,
    language: &str,
    positive: &[String],
    negative: &[String],
    rule: ExtractionRule,
) -> Result<SteeringVector> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::EmptyInput("steering vector needs positive and negative sentences".into()));
    }
    let pos = summed_states(bundle, positive, rule)?;
    let neg = summed_states(bundle, negative, rule)?;
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    let per_layer = pos
        .iter()
        .zip(&neg)
        .map(|(p, n)| p.iter().zip(n).map(|(a, b)| a / np - b / nn).collect())
        .collect();
    Ok(SteeringVector {
        concept: concept.to_owned(),
        language: language.to_owned(),
        rule,
        n_positive: positive.len(),
        n_negative: negative.len(),
        per_layer,
    })
}

/// One active steering vector.
#[derive(Debug, Clone, Copy)]
pub struct Steer<'a> {
    pub vector: &'a SteeringVector,
    pub layer: usize,
    pub gamma: f64,
}

impl Steer<'_> {
    pub fn intervention(&self, bundle: &ModelBundle) -> Result<Intervention> {
        if self.vector.n_layers() != bundle.n_layers() {
            return Err(Error::DimensionMismatch {
                expected: bundle.n_layers() + 1,
                found: self.vector.per_layer.len(),
            });
        }
        Ok(Intervention::AddVector {
            layer: self.layer,
            positions: PositionSet::AllGenerated,
            vector: self.vector.layer(self.layer)?.to_vec(),
            gamma: self.gamma,
        })
    }
}

/// Greedy generation with `h_l += gamma v_l` at every position from the
/// prompt's last token on, re-applied at each step.
pub fn steer_generate(
    bundle: &ModelBundle,
    prompt: &str,
    topic: Steer<'_>,
    language: Option<Steer<'_>>,
    max_steps: usize,
) -> Result<Generation> {
    let mut interventions = vec![topic.intervention(bundle)?];
    if let Some(lang) = language {
        interventions.push(lang.intervention(bundle)?);
    }
    generate(bundle, prompt, max_steps, &interventions)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteerOutcome {
    pub success: bool,
    pub target_form_found: Option<String>,
    pub collapsed: bool,
    pub output_text: String,
}

/// Repetition or low-diversity check over a word sequence.
pub fn is_collapsed<S: AsRef<str>>(words: &[S]) -> bool {
    let w: Vec<&str> = words.iter().map(AsRef::as_ref).collect();
    for n in 1..=COLLAPSE_MAX_NGRAM {
        for start in 0..w.len() {
            let mut reps = 1;
            while start + (reps + 1) * n <= w.len()
                && w[start + reps * n..start + (reps + 1) * n] == w[start..start + n]
            {
                reps += 1;
            }
            if reps >= COLLAPSE_REPEATS {
                return true;
            }
        }
    }
    let tail = &w[w.len().saturating_sub(COLLAPSE_WINDOW)..];
    if tail.is_empty() {
        return false;
    }
    let mut distinct = tail.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    (distinct.len() as f64) / (tail.len() as f64) < COLLAPSE_MIN_DISTINCT_RATIO
}

/// Success means some word of `output_text` equals a target form
/// (case-insensitive) and the text has not collapsed.
pub fn evaluate_steering(output_text: &str, target_forms: &[String], segmenter: &Segmenter) -> Result<SteerOutcome> {
    if target_forms.is_empty() {
        return Err(Error::EmptyInput("no target forms".into()));
    }
    let words: Vec<String> = segment_words(output_text, segmenter)
        .iter()
        .map(|w| normalize(&w.surface))
        .collect();
    let target_form_found = target_forms
        .iter()
        .find(|f| {
            let f = normalize(f);
            !f.is_empty() && words.contains(&f)
        })
        .cloned();
    let collapsed = is_collapsed(&words);
    Ok(SteerOutcome {
        success: target_form_found.is_some() && !collapsed,
        target_form_found,
        collapsed,
        output_text: output_text.to_owned(),
    })
}

/// Hook points `0, stride, 2 stride, ...` up to `n_layers`.
pub fn layer_grid(n_layers: usize, stride: usize) -> Vec<usize> {
    (0..=n_layers).step_by(stride.max(1)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub layer: usize,
    pub gamma: f64,
    pub n_success: usize,
    pub n_prompts: usize,
    pub rate: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Layer-major, then gamma, in the order given.
    pub cells: Vec<SweepCell>,
    pub best_layer: usize,
    pub best_gamma: f64,
    pub best_rate: f64,
}

/// Evaluate every (layer, gamma) on every holdout prompt.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    bundle: &ModelBundle,
    holdout_prompts: &[String],
    vector: &SteeringVector,
    layers: &[usize],
    gammas: &[f64],
    target_forms: &[String],
    segmenter: &Segmenter,
    max_steps: usize,
) -> Result<SweepResult> {
    if holdout_prompts.is_empty() || layers.is_empty() || gammas.is_empty() {
        return Err(Error::EmptyInput("sweep needs prompts, layers and gammas".into()));
    }
    if target_forms.is_empty() {
        return Err(Error::EmptyInput("no target forms".into()));
    }
    let jobs: Vec<(usize, f64, &String)> = layers
        .iter()
        .flat_map(|&l| gammas.iter().flat_map(move |&g| holdout_prompts.iter().map(move |p| (l, g, p))))
        .collect();
    let outcomes: Vec<SteerOutcome> = jobs
        .par_iter()
        .map(|&(layer, gamma, prompt)| {
            let g = steer_generate(bundle, prompt, Steer { vector, layer, gamma }, None, max_steps)?;
            evaluate_steering(&g.text, target_forms, segmenter)
        })
        .collect::<Result<_>>()?;
    let n = holdout_prompts.len();
    let cells: Vec<SweepCell> = jobs
        .chunks(n)
        .zip(outcomes.chunks(n))
        .map(|(job, out)| {
            let n_success = out.iter().filter(|o| o.success).count();
            SweepCell {
                layer: job[0].0,
                gamma: job[0].1,
                n_success,
                n_prompts: n,
                rate: n_success as f64 / n as f64,
                outputs: out.iter().map(|o| o.output_text.clone()).collect(),
            }
        })
        .collect();
    let best = cells
        .iter()
        .reduce(|best, c| {
            let better = c.rate > best.rate
                || (c.rate == best.rate
                    && (c.layer < best.layer || (c.layer == best.layer && c.gamma < best.gamma)));
            if better {
                c
            } else {
                best
            }
        })
        .expect("at least one cell");
    Ok(SweepResult {
        best_layer: best.layer,
        best_gamma: best.gamma,
        best_rate: best.rate,
        cells,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Cosine similarity per layer; `None` where either row is zero.
pub fn cosine_profile(a: &SteeringVector, b: &SteeringVector) -> Result<Vec<Option<f64>>> {
    a.check_shape(b)?;
    Ok(a.per_layer.iter().zip(&b.per_layer).map(|(x, y)| cosine(x, y)).collect())
}

/// Cosine between `a + beta * delta` and `b` per layer.
pub fn nudged_similarity(
    a: &SteeringVector,
    b: &SteeringVector,
    delta: &SteeringVector,
    beta: f64,
) -> Result<Vec<Option<f64>>> {
    a.check_shape(b)?;
    a.check_shape(delta)?;
    Ok(a.per_layer
        .iter()
        .zip(&b.per_layer)
        .zip(&delta.per_layer)
        .map(|((x, y), d)| {
            let nudged: Vec<f64> = x.iter().zip(d).map(|(x, d)| x + beta * d).collect();
            cosine(&nudged, y)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize_bundle, toy_vocabulary, ModelConfig};

    fn bundle() -> ModelBundle {
        let vocab = toy_vocabulary(&["love", "hate", "cat", "dog", "They", "adopted", "a"]);
        let cfg = ModelConfig {
            n_layers: 3,
            d_model: 24,
            n_heads: 3,
            d_ff: 48,
            vocab_size: vocab.len(),
            max_seq: 24,
            norm_epsilon: 1e-5,
        };
        synthesize_bundle(4, cfg, vocab).unwrap()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn sv(rows: Vec<Vec<f64>>) -> SteeringVector {
        SteeringVector {
            concept: "c".into(),
            language: "en".into(),
            rule: ExtractionRule::FinalPosition,
            n_positive: 1,
            n_negative: 1,
            per_layer: rows,
        }
    }

    #[test]
    fn singleton_difference() {
        let b = bundle();
        let v = build_steering_vector(&b, "love", "en", &s(&["love"]), &s(&["hate"]), ExtractionRule::FinalPosition)
            .unwrap();
        let hl = forward(&b, &b.tokenize("love").ids, &[]).unwrap();
        let hh = forward(&b, &b.tokenize("hate").ids, &[]).unwrap();
        for l in 0..=3 {
            let want: Vec<f64> = hl.state(l, 0).iter().zip(hh.state(l, 0)).map(|(a, b)| a - b).collect();
            assert_eq!(v.per_layer[l], want);
        }
    }

    #[test]
    fn same_sets_give_zero() {
        let b = bundle();
        let p = s(&["a cat", "They adopted a dog"]);
        let v = build_steering_vector(&b, "x", "en", &p, &p, ExtractionRule::MeanOverPositions).unwrap();
        assert!(v.per_layer.iter().flatten().all(|&x| x == 0.0));
        assert!(build_steering_vector(&b, "x", "en", &p, &[], ExtractionRule::FinalPosition).is_err());
    }

    #[test]
    fn zero_gamma_is_identity() {
        let b = bundle();
        let v = build_steering_vector(&b, "cat", "en", &s(&["cat"]), &s(&["dog"]), ExtractionRule::FinalPosition)
            .unwrap();
        let plain = generate(&b, "They adopted a", 6, &[]).unwrap();
        let steered = steer_generate(&b, "They adopted a", Steer { vector: &v, layer: 2, gamma: 0.0 }, None, 6).unwrap();
        assert_eq!(plain.generated, steered.generated);
        assert_eq!(plain.trace.logits(0), steered.trace.logits(0));
        let bad = Steer { vector: &v, layer: 9, gamma: 1.0 };
        assert!(steer_generate(&b, "a", bad, None, 2).is_err());
    }

    #[test]
    fn evaluation_examples() {
        let seg = Segmenter::Whitespace;
        let cat = s(&["cat", "cats"]);
        let o = evaluate_steering("They adopted a cat today", &cat, &seg).unwrap();
        assert!(o.success && !o.collapsed);
        assert_eq!(o.target_form_found.as_deref(), Some("cat"));
        let o = evaluate_steering("cat cat cat cat cat", &cat, &seg).unwrap();
        assert!(o.collapsed && !o.success);
        let o = evaluate_steering("They adopted a dog", &s(&["cat"]), &seg).unwrap();
        assert!(!o.success && !o.collapsed && o.target_form_found.is_none());
        assert!(evaluate_steering("x", &[], &seg).is_err());
    }

    #[test]
    fn collapse_rules() {
        assert!(is_collapsed(&["a", "b", "a", "b", "a", "b", "a", "b"]));
        assert!(!is_collapsed(&["a", "b", "a", "b", "a", "b", "c"]));
        assert!(is_collapsed(&["w", "x", "y", "z", "w", "x", "y", "z", "w", "x", "y", "z", "w", "x", "y", "z"]));
        assert!(!is_collapsed::<&str>(&[]));
        // 3 distinct words over 13 -> ratio 0.23, no run of four.
        let words = ["a", "b", "c", "a", "c", "b", "a", "b", "c", "c", "a", "a", "b"];
        assert!(is_collapsed(&words));
    }

    #[test]
    fn grids() {
        assert_eq!(layer_grid(12, 5), vec![0, 5, 10]);
        assert_eq!(layer_grid(4, 2), vec![0, 2, 4]);
    }

    #[test]
    fn cosine_cases() {
        let a = sv(vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![3.0, 4.0]]);
        let b = sv(vec![vec![0.0, 2.0], vec![1.0, 1.0], vec![3.0, 4.0]]);
        let c = cosine_profile(&a, &b).unwrap();
        assert_eq!(c[0], Some(0.0));
        assert_eq!(c[1], None);
        assert!((c[2].unwrap() - 1.0).abs() < 1e-12);
        let short = sv(vec![vec![1.0, 0.0]]);
        assert!(cosine_profile(&a, &short).is_err());
        assert_eq!(nudged_similarity(&a, &b, &a, 0.0).unwrap(), c);
    }

    #[test]
    fn sweep_single_cell_and_ties() {
        let b = bundle();
        let v = build_steering_vector(&b, "cat", "en", &s(&["cat"]), &s(&["dog"]), ExtractionRule::FinalPosition)
            .unwrap();
        let prompts = s(&["They adopted a"]);
        let forms = s(&["zzz"]);
        let r = sweep(&b, &prompts, &v, &[2], &[5.0], &forms, &Segmenter::Whitespace, 3).unwrap();
        assert_eq!((r.best_layer, r.best_gamma), (2, 5.0));
        // All-zero rates: ties resolve to the lowest layer, then gamma.
        let r = sweep(&b, &prompts, &v, &[3, 1], &[2.0, 1.0], &forms, &Segmenter::Whitespace, 3).unwrap();
        assert_eq!(r.cells.len(), 4);
        assert_eq!((r.cells[0].layer, r.cells[0].gamma), (3, 2.0));
        assert_eq!((r.best_layer, r.best_gamma), (1, 1.0));
    }
}
