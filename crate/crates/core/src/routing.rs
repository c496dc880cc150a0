// SPDX-License-Identifier: MIT OR Apache-2.0

//! English routing: does a generated non-English word pass through its
//! English equivalent in the logit lens before it is emitted?
//!
//! Words are matched against a translation lexicon instead of a semantic
//! judge, so only three grades of the usual 1-5 similarity scale occur:
//!
//! | score | meaning |
//! |-------|---------|
//! | 5 | decoded token equals an exact translation |
//! | 4 | decoded token equals a listed synonym, or is a prefix (>= 3 chars) of an exact translation |
//! | 1 | no match |
//!
//! A word is routed when some match scores 4 or more. When every such match
//! is spelled like the word itself, the word is a homograph and lands in
//! its own bucket instead.

use std::collections::{BTreeMap, HashSet};
use std::ops::{Range, RangeInclusive};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lens::LensGrid;
use crate::model::TokenSeq;

// ---------------------------------------------------------------------------
// Normalization and segmentation
// ---------------------------------------------------------------------------

/// Lowercase and strip surrounding non-alphanumeric characters (spaces,
/// word-boundary markers, punctuation).
pub fn normalize(s: &str) -> String {
    s.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

fn is_delimiter(c: char) -> bool {
    c.is_whitespace() || !c.is_alphanumeric()
}

/// How to split text into words.
#[derive(Debug, Clone, PartialEq)]
pub enum Segmenter {
    /// Split on whitespace and strip punctuation.
    Whitespace,
    /// Greedy longest match against a word list, single characters as
    /// fallback; for scripts written without spaces.
    Dictionary(Dictionary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    words: HashSet<String>,
    max_chars: usize,
}

impl Dictionary {
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: HashSet<String> = words.into_iter().map(Into::into).filter(|w| !w.is_empty()).collect();
        if words.is_empty() {
            return Err(Error::EmptyInput("dictionary segmenter needs at least one word".into()));
        }
        let max_chars = words.iter().map(|w| w.chars().count()).max().unwrap_or(1);
        Ok(Self { words, max_chars })
    }
}

/// A word of generated text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub surface: String,
    /// Byte range in the segmented text.
    pub bytes: Range<usize>,
    /// Generated-token indices (lens grid columns) that spell the word.
    pub token_positions: Range<usize>,
    pub pos_tag: Option<String>,
}

impl WordSpan {
    pub fn new(surface: impl Into<String>, token_positions: Range<usize>, pos_tag: Option<String>) -> Self {
        Self {
            surface: surface.into(),
            bytes: 0..0,
            token_positions,
            pos_tag,
        }
    }
}

pub fn segment_words(text: &str, segmenter: &Segmenter) -> Vec<WordSpan> {
    let spans = match segmenter {
        Segmenter::Whitespace => whitespace_spans(text),
        Segmenter::Dictionary(dict) => dictionary_spans(text, dict),
    };
    spans
        .into_iter()
        .map(|r| WordSpan {
            surface: text[r.clone()].to_owned(),
            bytes: r,
            token_positions: 0..0,
            pos_tag: None,
        })
        .collect()
}

fn whitespace_spans(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    let push = |s: usize, e: usize, out: &mut Vec<Range<usize>>| {
        let piece = &text[s..e];
        let lead = piece.len() - piece.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
        let trimmed = piece.trim_matches(|c: char| !c.is_alphanumeric());
        if !trimmed.is_empty() {
            out.push(s + lead..s + lead + trimmed.len());
        }
    };
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                push(s, i, &mut out);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s, text.len(), &mut out);
    }
    out
}

fn dictionary_spans(text: &str, dict: &Dictionary) -> Vec<Range<usize>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |k: usize| chars.get(k).map_or(text.len(), |&(b, _)| b);
    let mut out = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        if is_delimiter(chars[k].1) {
            k += 1;
            continue;
        }
        let mut run = k;
        while run < chars.len() && run - k < dict.max_chars && !is_delimiter(chars[run].1) {
            run += 1;
        }
        let start = chars[k].0;
        let len = (1..=run - k)
            .rev()
            .find(|&n| dict.words.contains(&text[start..end_of(k + n)]))
            .unwrap_or(1);
        out.push(start..end_of(k + len));
        k += len;
    }
    out
}

/// Fill `token_positions` from the byte spans of the generated tokens.
pub fn align_to_tokens(words: &mut [WordSpan], tokens: &TokenSeq) {
    for w in words {
        w.token_positions = tokens.span_for_bytes(w.bytes.clone());
    }
}

// ---------------------------------------------------------------------------
// Lexicon
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub exact: Vec<String>,
    pub synonyms: Vec<String>,
}

/// Target-language word form -> English forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub language: String,
    pub entries: BTreeMap<String, LexiconEntry>,
    pub flagged_terms: Option<Vec<String>>,
}

impl Lexicon {
    /// Normalize every form, drop duplicates within a list and reject
    /// entries whose exact and synonym lists overlap.
    pub fn new(
        language: impl Into<String>,
        entries: impl IntoIterator<Item = (String, LexiconEntry)>,
        flagged_terms: Option<Vec<String>>,
    ) -> Result<Self> {
        let mut out: BTreeMap<String, LexiconEntry> = BTreeMap::new();
        for (form, entry) in entries {
            let key = normalize(&form);
            if key.is_empty() {
                return Err(Error::Dataset(format!("lexicon form {form:?} is empty after normalization")));
            }
            let entry = LexiconEntry {
                exact: dedup_normalized(&entry.exact),
                synonyms: dedup_normalized(&entry.synonyms),
            };
            if let Some(overlap) = entry.exact.iter().find(|f| entry.synonyms.contains(f)) {
                return Err(Error::Dataset(format!(
                    "lexicon entry {key:?}: form {overlap:?} is listed as both exact and synonym"
                )));
            }
            match out.get(&key) {
                Some(prev) if prev != &entry => {
                    return Err(Error::Dataset(format!("lexicon entry {key:?} defined twice with different forms")));
                }
                Some(_) => {}
                None => {
                    out.insert(key, entry);
                }
            }
        }
        Ok(Self {
            language: language.into(),
            entries: out,
            flagged_terms: flagged_terms.map(|f| dedup_normalized(&f)),
        })
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.entries.get(&normalize(word))
    }

    /// Every exact English form, for highlighting.
    pub fn english_forms(&self) -> HashSet<String> {
        self.entries.values().flat_map(|e| e.exact.iter().cloned()).collect()
    }
}

fn dedup_normalized(forms: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(forms.len());
    for f in forms {
        let n = normalize(f);
        if !n.is_empty() && !out.contains(&n) {
            out.push(n);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

pub const SCORE_EXACT: u8 = 5;
pub const SCORE_SYNONYM: u8 = 4;
pub const SCORE_NONE: u8 = 1;
pub const MIN_PREFIX_CHARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingVerdict {
    pub routed: bool,
    pub homograph: bool,
    pub matched_token: Option<String>,
    pub matched_form: Option<String>,
    pub matched_layer: Option<usize>,
    pub matched_column: Option<usize>,
    pub score: u8,
}

/// Grade one decoded token against an entry. Returns `(score, form)`.
pub fn score_token(token: &str, entry: &LexiconEntry) -> Option<(u8, String)> {
    let t = normalize(token);
    if t.is_empty() {
        return None;
    }
    if let Some(f) = entry.exact.iter().find(|f| **f == t) {
        return Some((SCORE_EXACT, f.clone()));
    }
    if let Some(f) = entry.synonyms.iter().find(|f| **f == t) {
        return Some((SCORE_SYNONYM, f.clone()));
    }
    if t.chars().count() >= MIN_PREFIX_CHARS {
        if let Some(f) = entry.exact.iter().find(|f| f.starts_with(&t)) {
            return Some((SCORE_SYNONYM, f.clone()));
        }
    }
    None
}

struct Hit {
    score: u8,
    form: String,
    token: String,
    layer: usize,
    column: usize,
}

/// Look for the word's English equivalent in the top-1 lens tokens of its
/// own prediction columns over `layers`.
pub fn classify_word_routing(
    word: &WordSpan,
    grid: &LensGrid,
    lexicon: &Lexicon,
    layers: RangeInclusive<usize>,
) -> Result<RoutingVerdict> {
    let cols = word.token_positions.clone();
    if cols.is_empty() || cols.end > grid.n_columns() {
        return Err(Error::OutOfRange(format!(
            "word {:?} spans columns {cols:?}, grid has {}",
            word.surface,
            grid.n_columns()
        )));
    }
    let surface = normalize(&word.surface);
    let mut best_routed: Option<Hit> = None;
    let mut best_any: Option<Hit> = None;
    if let Some(entry) = lexicon.get(&word.surface) {
        let top = (*layers.end()).min(grid.n_layers());
        for layer in *layers.start()..=top {
            for column in cols.clone() {
                let token = grid.cell(layer, column).top1();
                let Some((score, form)) = score_token(token, entry) else {
                    continue;
                };
                let hit = Hit {
                    score,
                    form,
                    token: token.to_owned(),
                    layer,
                    column,
                };
                let slot = if hit.form == surface { &mut best_any } else { &mut best_routed };
                // Keep the highest score; earliest (layer, column) on ties.
                if slot.as_ref().is_none_or(|b| hit.score > b.score) {
                    *slot = Some(hit);
                }
            }
        }
    }
    let (routed, homograph, hit) = match (best_routed, best_any) {
        (Some(h), _) => (true, false, Some(h)),
        (None, Some(h)) => (false, true, Some(h)),
        (None, None) => (false, false, None),
    };
    Ok(RoutingVerdict {
        routed,
        homograph,
        score: hit.as_ref().map_or(SCORE_NONE, |h| h.score),
        matched_token: hit.as_ref().map(|h| h.token.clone()),
        matched_form: hit.as_ref().map(|h| h.form.clone()),
        matched_layer: hit.as_ref().map(|h| h.layer),
        matched_column: hit.map(|h| h.column),
    })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Counts for one bucket. `std_error` is the binomial standard error
/// `sqrt(p (1 - p) / n)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingCounts {
    pub n_words: usize,
    pub n_routed: usize,
    pub n_homograph: usize,
    pub proportion: f64,
    pub std_error: f64,
}

impl RoutingCounts {
    fn finish(&mut self) {
        let (k, n) = (self.n_routed as f64, self.n_words as f64);
        if self.n_words == 0 {
            self.proportion = 0.0;
            self.std_error = 0.0;
        } else {
            self.proportion = k / n;
            // k (n - k) / n^3 == p (1 - p) / n, with one rounding.
            self.std_error = ((k * (n - k)) / (n * n * n)).sqrt();
        }
    }

    fn add(&mut self, v: &RoutingVerdict) {
        self.n_words += 1;
        self.n_routed += usize::from(v.routed);
        self.n_homograph += usize::from(v.homograph);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub per_pos: BTreeMap<String, RoutingCounts>,
    pub overall: RoutingCounts,
    pub layer_range: [usize; 2],
    /// What the error column holds.
    pub error_bar: String,
}

/// One generation's lens grid with its annotated words.
#[derive(Debug, Clone, Copy)]
pub struct AnnotatedGrid<'a> {
    pub grid: &'a LensGrid,
    pub words: &'a [WordSpan],
}

pub fn routing_report(
    items: &[AnnotatedGrid<'_>],
    lexicon: &Lexicon,
    layers: RangeInclusive<usize>,
) -> Result<RoutingReport> {
    for item in items {
        if let Some(w) = item.words.iter().find(|w| w.pos_tag.is_none()) {
            return Err(Error::MissingPos {
                word: w.surface.clone(),
            });
        }
    }
    let mut per_pos: BTreeMap<String, RoutingCounts> = BTreeMap::new();
    let mut overall = RoutingCounts::default();
    for item in items {
        for w in item.words {
            let v = classify_word_routing(w, item.grid, lexicon, layers.clone())?;
            let tag = w.pos_tag.clone().unwrap_or_default();
            per_pos.entry(tag).or_default().add(&v);
            overall.add(&v);
        }
    }
    per_pos.values_mut().for_each(RoutingCounts::finish);
    overall.finish();
    Ok(RoutingReport {
        per_pos,
        overall,
        layer_range: [*layers.start(), *layers.end()],
        error_bar: "standard_error".into(),
    })
}

/// Percentage of lens cells (per grid) whose top-1 token is a flagged term.
pub fn flagged_term_report(grids: &[&LensGrid], flagged: Option<&[String]>) -> Result<Vec<f64>> {
    let flagged = flagged.ok_or_else(|| Error::EmptyInput("lexicon has no flagged_terms list".into()))?;
    let terms: HashSet<String> = flagged.iter().map(|t| normalize(t)).collect();
    Ok(grids
        .iter()
        .map(|g| {
            let cells: Vec<_> = g.rows.iter().flatten().collect();
            if cells.is_empty() {
                return 0.0;
            }
            let hits = cells.iter().filter(|c| terms.contains(&normalize(c.top1()))).count();
            hits as f64 / cells.len() as f64 * 100.0
        })
        .collect())
}

/// Check an annotation's surface against the tokens it claims to span.
pub fn check_surface(word: &WordSpan, grid: &LensGrid, detok: impl Fn(&[u32]) -> String) -> Result<()> {
    let cols = word.token_positions.clone();
    if cols.is_empty() || cols.end > grid.generated_ids.len() {
        return Err(Error::OutOfRange(format!("word {:?} token span {cols:?}", word.surface)));
    }
    let text = detok(&grid.generated_ids[cols]);
    if text.trim() != word.surface.trim() {
        return Err(Error::Dataset(format!(
            "annotation surface {:?} does not match detokenized span {:?}",
            word.surface, text
        )));
    }
    Ok(())
}
