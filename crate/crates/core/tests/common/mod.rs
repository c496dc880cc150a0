// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared fixtures and the reference forward pass used by the integration
//! tests.

#![allow(dead_code)]

use std::path::PathBuf;

use lingualens::lens::{LensCell, LensGrid, TokenProb};
use lingualens::model::{
    plant_association, synthesize_bundle, toy_config, toy_vocabulary, ModelBundle, ModelConfig, PLANT_READOUT_GAIN,
    PLANT_VALUE_GAIN, TOY_WORDS,
};
use lingualens::routing::{Lexicon, LexiconEntry, WordSpan};
use lingualens::tracing::FactProbe;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// ---------------------------------------------------------------------------
// Reference forward pass
// ---------------------------------------------------------------------------

/// Row-major `[rows][cols]` view of a named tensor, widened to f64.
fn matrix(b: &ModelBundle, name: &str) -> Vec<Vec<f64>> {
    let t = b.tensor(name).unwrap_or_else(|| panic!("tensor {name}"));
    let cols = *t.shape.last().unwrap();
    t.data.chunks(cols).map(|r| r.iter().map(|&x| x as f64).collect()).collect()
}

fn vector(b: &ModelBundle, name: &str) -> Vec<f64> {
    b.tensor(name).unwrap().data.iter().map(|&x| x as f64).collect()
}

fn vec_mat(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let out_dim = w[0].len();
    let mut y = vec![0.0; out_dim];
    for j in 0..out_dim {
        let mut s = 0.0;
        for i in 0..x.len() {
            s += x[i] * w[i][j];
        }
        y[j] = s;
    }
    y
}

fn rms(x: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let mut ms = 0.0;
    for v in x {
        ms += v * v;
    }
    ms /= x.len() as f64;
    let r = (ms + eps).sqrt();
    (0..x.len()).map(|i| x[i] / r * g[i]).collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

/// Straight-line forward pass: `states[layer][position]` and
/// `logits[position]`.
pub fn naive_forward(b: &ModelBundle, ids: &[u32]) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let c = b.config();
    let (d, nh) = (c.d_model, c.n_heads);
    let hd = d / nh;
    let eps = c.norm_epsilon;
    let tok = matrix(b, "token_embedding");
    let pos = matrix(b, "position_embedding");
    let mut h: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(t, &id)| (0..d).map(|i| tok[id as usize][i] + pos[t][i]).collect())
        .collect();
    let mut states = vec![h.clone()];
    for blk in 0..c.n_layers {
        let p = |n: &str| format!("blocks.{blk}.{n}");
        let (wq, wk, wv, wo) = (matrix(b, &p("wq")), matrix(b, &p("wk")), matrix(b, &p("wv")), matrix(b, &p("wo")));
        let (w_in, w_out) = (matrix(b, &p("w_in")), matrix(b, &p("w_out")));
        let (g1, g2) = (vector(b, &p("attn_norm")), vector(b, &p("ffn_norm")));
        let n1: Vec<Vec<f64>> = h.iter().map(|x| rms(x, &g1, eps)).collect();
        let q: Vec<Vec<f64>> = n1.iter().map(|x| vec_mat(x, &wq)).collect();
        let k: Vec<Vec<f64>> = n1.iter().map(|x| vec_mat(x, &wk)).collect();
        let v: Vec<Vec<f64>> = n1.iter().map(|x| vec_mat(x, &wv)).collect();
        let mut ctx = vec![vec![0.0; d]; ids.len()];
        for head in 0..nh {
            let r = head * hd..(head + 1) * hd;
            for t in 0..ids.len() {
                let scores: Vec<f64> = (0..=t)
                    .map(|j| r.clone().map(|i| q[t][i] * k[j][i]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..=t {
                    for i in r.clone() {
                        ctx[t][i] += e[j] / z * v[j][i];
                    }
                }
            }
        }
        for t in 0..ids.len() {
            let a = vec_mat(&ctx[t], &wo);
            for i in 0..d {
                h[t][i] += a[i];
            }
            let n2 = rms(&h[t], &g2, eps);
            let hidden: Vec<f64> = vec_mat(&n2, &w_in).into_iter().map(gelu).collect();
            let f = vec_mat(&hidden, &w_out);
            for i in 0..d {
                h[t][i] += f[i];
            }
        }
        states.push(h.clone());
    }
    let gf = vector(b, "final_norm");
    let un = matrix(b, "unembedding");
    let logits = h.iter().map(|x| vec_mat(&rms(x, &gf, eps), &un)).collect();
    (states, logits)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

/// Small random architecture drawn from `seed` (L <= 6, d <= 128, V <= 512).
pub fn random_bundle(seed: u64) -> ModelBundle {
    let heads = [1, 2, 4][(seed % 3) as usize];
    let d = heads * [8, 16, 32][((seed / 3) % 3) as usize];
    let vocab = toy_vocabulary(&TOY_WORDS[..(seed as usize * 7) % TOY_WORDS.len()]);
    let cfg = ModelConfig {
        n_layers: 1 + (seed % 6) as usize,
        d_model: d,
        n_heads: heads,
        d_ff: 2 * d,
        vocab_size: vocab.len(),
        max_seq: 64,
        norm_epsilon: 1e-5,
    };
    synthesize_bundle(seed, cfg, vocab).unwrap()
}

pub fn toy_bundle(seed: u64) -> ModelBundle {
    let vocab = toy_vocabulary(TOY_WORDS);
    synthesize_bundle(seed, toy_config(vocab.len()), vocab).unwrap()
}

/// Toy bundle where " Canada" -> " Ottawa" is stored in block 0.
pub fn planted_bundle() -> ModelBundle {
    let b = toy_bundle(9);
    let id = |w: &str| b.vocab().id(w).unwrap();
    plant_association(&b, id(" Canada"), id(" Ottawa"), PLANT_VALUE_GAIN, PLANT_READOUT_GAIN).unwrap()
}

pub fn probe(b: &ModelBundle, prompt: &str, subject: &str, answer: &str) -> FactProbe {
    FactProbe::from_text(b, prompt, subject, answer).unwrap()
}

// ---------------------------------------------------------------------------
// Routing grid fixture
// ---------------------------------------------------------------------------

/// One column per word: rows are layers 0..=3 of top-1 tokens.
pub fn grid_from_columns(columns: &[[&str; 4]]) -> LensGrid {
    let n = columns.len();
    LensGrid {
        k: 1,
        prompt_len: 1,
        positions: (0..n).collect(),
        generated_ids: vec![0; n],
        generated_tokens: columns.iter().map(|c| c[3].to_owned()).collect(),
        rows: (0..4)
            .map(|l| {
                columns
                    .iter()
                    .enumerate()
                    .map(|(c, col)| LensCell {
                        layer: l,
                        position: c,
                        top: vec![TokenProb {
                            token: col[l].to_owned(),
                            id: 0,
                            prob: 0.5,
                        }],
                    })
                    .collect()
            })
            .collect(),
    }
}

fn entry(exact: &[&str], syn: &[&str]) -> LexiconEntry {
    LexiconEntry {
        exact: exact.iter().map(|s| s.to_string()).collect(),
        synonyms: syn.iter().map(|s| s.to_string()).collect(),
    }
}

pub fn routing_lexicon() -> Lexicon {
    Lexicon::new(
        "fr",
        [
            ("eau", entry(&["water"], &[])),
            ("lac", entry(&["lake"], &["pond"])),
            ("soleil", entry(&["sun"], &[])),
            ("bateau", entry(&["boat"], &["ship"])),
            ("calme", entry(&["calm"], &[])),
            ("douceur", entry(&["gentleness"], &["softness"])),
            ("naviguait", entry(&["sailed"], &["navigated"])),
            ("chat", entry(&["cat"], &[])),
            ("animal", entry(&["animal"], &[])),
            ("sur", entry(&["on"], &[])),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v)),
        Some(vec!["haine".into()]),
    )
    .unwrap()
}

/// Ten words: six routed (exact, synonym and prefix matches), one
/// homograph ("animal") and three with no English match.
pub fn routing_fixture() -> (LensGrid, Vec<WordSpan>) {
    let cols: [[&str; 4]; 10] = [
        ["x", " water", "eau", "eau"],      // routed, exact
        ["x", "pond", "lac", "lac"],        // routed, synonym
        ["sun", "x", "x", "soleil"],        // routed, exact at layer 0
        ["x", "boa", "x", "bateau"],        // routed, prefix
        ["x", "x", "Calm", "calme"],        // routed, exact (case)
        ["x", "sailed", "x", "naviguait"],  // routed, exact
        ["x", "animal", "x", "animal"],     // homograph
        ["x", "x", "x", "chat"],            // nothing
        ["x", "ge", "x", "douceur"],        // nothing: prefix too short
        ["x", "x", "x", "sur"],             // nothing
    ];
    let grid = grid_from_columns(&cols);
    let pos = ["NOUN", "NOUN", "NOUN", "NOUN", "ADJ", "VERB", "NOUN", "NOUN", "NOUN", "ADP"];
    let words = cols
        .iter()
        .enumerate()
        .map(|(i, c)| WordSpan::new(c[3], i..i + 1, Some(pos[i].into())))
        .collect();
    (grid, words)
}

// ---------------------------------------------------------------------------
// Malformed corpus and annotations
// ---------------------------------------------------------------------------

/// Load every file listed in `malformed/expected.json` with its loader and
/// check the error code and message. Returns the number of cases.
pub fn check_malformed_corpus() -> Result<usize, String> {
    use lingualens::data_io::datasets::{load_annotations, load_facts, load_insight, load_lexicon};
    use lingualens::data_io::report::read_report;

    let dir = fixture("malformed");
    let text = std::fs::read_to_string(dir.join("expected.json")).map_err(|e| e.to_string())?;
    let expected: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for (file, want) in &expected {
        let path = dir.join(file);
        let err = match want["loader"].as_str().unwrap() {
            "insight" => load_insight(&path).err(),
            "facts" => load_facts(&path).err(),
            "lexicon" => load_lexicon(&path).err(),
            "annotations" => load_annotations(&path).err(),
            "report" => read_report(&path).err(),
            other => return Err(format!("{file}: unknown loader {other}")),
        };
        let err = err.ok_or_else(|| format!("{file}: accepted"))?;
        let (code, contains) = (want["code"].as_str().unwrap(), want["contains"].as_str().unwrap());
        if err.code() != code || !err.to_string().contains(contains) {
            return Err(format!("{file}: got [{}] {err}, want [{code}] containing {contains:?}", err.code()));
        }
    }
    Ok(expected.len())
}

/// Annotate every alphabetic single-token word of each generation.
pub fn annotations_for(
    b: &ModelBundle,
    prompts: &[&str],
    steps: usize,
) -> lingualens::data_io::AnnotationsFile {
    use lingualens::data_io::{AnnotatedGeneration, AnnotatedWord, AnnotationsFile};
    let tags = ["NOUN", "VERB", "ADJ", "DET"];
    let generations = prompts
        .iter()
        .map(|p| {
            let g = lingualens::model::generate(b, p, steps, &[]).unwrap();
            let words = g
                .generated
                .ids
                .iter()
                .enumerate()
                .filter_map(|(i, &id)| {
                    let s = b.detokenize(&[id]).trim().to_owned();
                    (!s.is_empty() && s.chars().all(char::is_alphabetic)).then(|| AnnotatedWord {
                        surface: s,
                        pos: Some(tags[i % tags.len()].into()),
                        tokens: [i, i + 1],
                    })
                })
                .collect();
            AnnotatedGeneration {
                prompt: p.to_string(),
                words,
            }
        })
        .collect();
    AnnotationsFile {
        version: 1,
        max_steps: steps,
        generations,
    }
}
