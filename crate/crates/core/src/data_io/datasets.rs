// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset files: word/sentence sets, capital-city facts, translation
//! lexicons and part-of-speech annotations. All are JSON documents with a
//! top-level `version`; field names are listed in `docs/schema.md`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolation::LanguageLexicons;
use crate::model::ModelBundle;
use crate::routing::{normalize, Lexicon, LexiconEntry, WordSpan};
use crate::tracing::FactProbe;

pub const DATASET_VERSION: u32 = 1;
/// Sentences and prompts per word and language.
pub const ITEMS_PER_LANGUAGE: usize = 10;
/// Placeholder for the country in fact templates.
pub const COUNTRY_SLOT: &str = "{country}";

fn invalid(msg: impl Into<String>) -> Error {
    Error::Dataset(msg.into())
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(format!("{what} {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json("serialize dataset", e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_version(found: u32, what: &str) -> Result<()> {
    if found != DATASET_VERSION {
        return Err(invalid(format!("{what}: version {found}, expected {DATASET_VERSION}")));
    }
    Ok(())
}

fn check_languages(languages: &[String], what: &str) -> Result<()> {
    if languages.is_empty() {
        return Err(invalid(format!("{what}: language list is empty")));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = languages.iter().find(|l| !seen.insert(l.as_str())) {
        return Err(invalid(format!("{what}: language {dup:?} listed twice")));
    }
    Ok(())
}

/// Split a cell like `"苹果, 苹果树/果"` into its variants; each is an
/// accepted form.
pub fn split_variants(form: &str) -> Vec<String> {
    form.split([',', '，', '/', '、'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

// ---------------------------------------------------------------------------
// Word / sentence sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageRecord {
    pub forms: Vec<String>,
    pub sentences: Vec<String>,
    pub prompts: Vec<String>,
    /// Form used in each sentence.
    pub sentence_forms: Vec<String>,
    /// Form each prompt should lead to.
    pub prompt_forms: Vec<String>,
}

impl LanguageRecord {
    /// Every listed form with multi-variant cells split.
    pub fn accepted_forms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for f in self.forms.iter().flat_map(|f| split_variants(f)) {
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsightEntry {
    pub word_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    #[serde(default)]
    pub uses_counter_set: bool,
    pub languages: BTreeMap<String, LanguageRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsightDataset {
    pub version: u32,
    pub languages: Vec<String>,
    #[serde(default)]
    pub counter_set: BTreeMap<String, Vec<String>>,
    pub entries: Vec<InsightEntry>,
}

impl InsightDataset {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version, "insight dataset")?;
        check_languages(&self.languages, "insight dataset")?;
        let langs: BTreeSet<&str> = self.languages.iter().map(String::as_str).collect();
        for lang in self.counter_set.keys() {
            if !langs.contains(lang.as_str()) {
                return Err(invalid(format!("counter set has unlisted language {lang:?}")));
            }
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            let who = format!("word {:?}", e.word_id);
            if e.word_id.trim().is_empty() {
                return Err(invalid("entry with empty word_id"));
            }
            if !ids.insert(e.word_id.as_str()) {
                return Err(invalid(format!("{who} defined twice")));
            }
            for lang in &self.languages {
                if !e.languages.contains_key(lang) {
                    return Err(invalid(format!("{who}: missing language {lang:?}")));
                }
            }
            for (lang, rec) in &e.languages {
                let who = format!("{who} language {lang:?}");
                if !langs.contains(lang.as_str()) {
                    return Err(invalid(format!("{who}: language not in dataset list")));
                }
                validate_record(rec, &who)?;
                if e.uses_counter_set && self.counter_set.get(lang).is_none_or(Vec::is_empty) {
                    return Err(invalid(format!("{who}: uses the counter set but none is given")));
                }
            }
        }
        for e in &self.entries {
            let Some(pair) = &e.pair_id else { continue };
            if pair == &e.word_id {
                return Err(invalid(format!("word {:?} is paired with itself", e.word_id)));
            }
            let other = self
                .entry(pair)
                .ok_or_else(|| invalid(format!("word {:?}: pair {pair:?} not found", e.word_id)))?;
            if other.pair_id.as_deref() != Some(e.word_id.as_str()) {
                return Err(invalid(format!("word {:?}: pair {pair:?} is not symmetric", e.word_id)));
            }
        }
        Ok(())
    }

    pub fn entry(&self, word_id: &str) -> Option<&InsightEntry> {
        self.entries.iter().find(|e| e.word_id == word_id)
    }

    /// Contrast sentences for a word: the counter set when flagged,
    /// otherwise the paired word's sentences.
    pub fn negatives(&self, entry: &InsightEntry, language: &str) -> Result<Vec<String>> {
        if entry.uses_counter_set {
            return self
                .counter_set
                .get(language)
                .cloned()
                .ok_or_else(|| invalid(format!("no counter set for language {language:?}")));
        }
        if let Some(pair) = entry.pair_id.as_deref().and_then(|p| self.entry(p)) {
            return pair
                .languages
                .get(language)
                .map(|r| r.sentences.clone())
                .ok_or_else(|| invalid(format!("pair {:?} lacks language {language:?}", pair.word_id)));
        }
        match self.counter_set.get(language) {
            Some(c) if !c.is_empty() => Ok(c.clone()),
            _ => Err(invalid(format!(
                "word {:?} has neither a pair nor a counter set in {language:?}",
                entry.word_id
            ))),
        }
    }

    /// Normalized words seen in each language's sentences, prompts and forms.
    pub fn language_lexicons(&self) -> LanguageLexicons {
        let mut out = LanguageLexicons::new();
        for e in &self.entries {
            for (lang, rec) in &e.languages {
                let set = out.entry(lang.clone()).or_default();
                let texts = rec.sentences.iter().chain(&rec.prompts).chain(&rec.forms);
                set.extend(texts.flat_map(|t| t.split_whitespace().map(normalize)).filter(|w| !w.is_empty()));
            }
        }
        out
    }
}

fn validate_record(rec: &LanguageRecord, who: &str) -> Result<()> {
    let accepted = rec.accepted_forms();
    if accepted.is_empty() {
        return Err(invalid(format!("{who}: no forms")));
    }
    for (field, n) in [("sentences", rec.sentences.len()), ("prompts", rec.prompts.len())] {
        if n != ITEMS_PER_LANGUAGE {
            return Err(invalid(format!("{who}: expected {ITEMS_PER_LANGUAGE} {field}, found {n}")));
        }
    }
    for (field, n) in [("sentence_forms", rec.sentence_forms.len()), ("prompt_forms", rec.prompt_forms.len())] {
        if n != ITEMS_PER_LANGUAGE {
            return Err(invalid(format!("{who}: expected {ITEMS_PER_LANGUAGE} {field}, found {n}")));
        }
    }
    let known = |f: &str| accepted.iter().any(|a| a.to_lowercase() == f.to_lowercase());
    for (i, (s, f)) in rec.sentences.iter().zip(&rec.sentence_forms).enumerate() {
        if !known(f) {
            return Err(invalid(format!("{who}: sentence {i} uses unlisted form {f:?}")));
        }
        if !contains_ci(s, f) {
            return Err(invalid(format!("{who}: sentence {i} does not contain its form {f:?}")));
        }
    }
    for (i, f) in rec.prompt_forms.iter().enumerate() {
        if !known(f) {
            return Err(invalid(format!("{who}: prompt {i} targets unlisted form {f:?}")));
        }
    }
    Ok(())
}

pub fn load_insight(path: impl AsRef<Path>) -> Result<InsightDataset> {
    let ds: InsightDataset = read_json(path.as_ref(), "insight dataset")?;
    ds.validate()?;
    Ok(ds)
}

pub fn save_insight(path: impl AsRef<Path>, ds: &InsightDataset) -> Result<()> {
    ds.validate()?;
    write_json(path.as_ref(), ds)
}

// ---------------------------------------------------------------------------
// Facts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactEntry {
    pub id: String,
    pub country: BTreeMap<String, String>,
    /// Contains `{country}` exactly once.
    pub prompt_template: BTreeMap<String, String>,
    pub answer: BTreeMap<String, Vec<String>>,
}

impl FactEntry {
    fn field<'a, T>(&self, map: &'a BTreeMap<String, T>, lang: &str, what: &str) -> Result<&'a T> {
        map.get(lang)
            .ok_or_else(|| invalid(format!("fact {:?}: no {what} for language {lang:?}", self.id)))
    }

    pub fn prompt(&self, lang: &str) -> Result<String> {
        let t = self.field(&self.prompt_template, lang, "prompt_template")?;
        Ok(t.replacen(COUNTRY_SLOT, self.field(&self.country, lang, "country")?, 1))
    }

    /// Byte range of the country name inside [`FactEntry::prompt`].
    pub fn subject_bytes(&self, lang: &str) -> Result<Range<usize>> {
        let t = self.field(&self.prompt_template, lang, "prompt_template")?;
        let start = t
            .find(COUNTRY_SLOT)
            .ok_or_else(|| invalid(format!("fact {:?}: template lacks {COUNTRY_SLOT}", self.id)))?;
        Ok(start..start + self.field(&self.country, lang, "country")?.len())
    }

    /// Token range of the country after tokenizing the prompt.
    pub fn subject_span(&self, bundle: &ModelBundle, lang: &str) -> Result<Range<usize>> {
        let seq = bundle.tokenize(&self.prompt(lang)?);
        Ok(seq.span_for_bytes(self.subject_bytes(lang)?))
    }

    /// Accepted answers with variants split.
    pub fn answers(&self, lang: &str) -> Result<Vec<String>> {
        Ok(self.field(&self.answer, lang, "answer")?.iter().flat_map(|a| split_variants(a)).collect())
    }

    /// Tracing probe: subject = country tokens, target = first token of the
    /// first answer (with a leading space unless the prompt ends in one).
    pub fn probe(&self, bundle: &ModelBundle, lang: &str) -> Result<FactProbe> {
        let prompt = self.prompt(lang)?;
        let answer = self
            .answers(lang)?
            .into_iter()
            .next()
            .ok_or_else(|| invalid(format!("fact {:?}: empty answer for {lang:?}", self.id)))?;
        let spaced = if prompt.ends_with(char::is_whitespace) {
            answer
        } else {
            format!(" {answer}")
        };
        let answer_token = *bundle
            .tokenize(&spaced)
            .ids
            .first()
            .ok_or_else(|| invalid(format!("fact {:?}: answer tokenizes to nothing", self.id)))?;
        FactProbe::new(bundle, &prompt, self.subject_span(bundle, lang)?, answer_token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactsDataset {
    pub version: u32,
    pub languages: Vec<String>,
    pub entries: Vec<FactEntry>,
}

impl FactsDataset {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version, "facts dataset")?;
        check_languages(&self.languages, "facts dataset")?;
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(invalid(format!("fact {:?} defined twice", e.id)));
            }
            for lang in &self.languages {
                let country = e.field(&e.country, lang, "country")?;
                let template = e.field(&e.prompt_template, lang, "prompt_template")?;
                let answers = e.field(&e.answer, lang, "answer")?;
                if country.trim().is_empty() {
                    return Err(invalid(format!("fact {:?}: empty country for {lang:?}", e.id)));
                }
                if template.matches(COUNTRY_SLOT).count() != 1 {
                    return Err(invalid(format!(
                        "fact {:?}: template for {lang:?} must contain {COUNTRY_SLOT} exactly once",
                        e.id
                    )));
                }
                if answers.iter().all(|a| split_variants(a).is_empty()) {
                    return Err(invalid(format!("fact {:?}: empty answer for {lang:?}", e.id)));
                }
            }
            for map_langs in [
                e.country.keys().collect::<Vec<_>>(),
                e.prompt_template.keys().collect(),
                e.answer.keys().collect(),
            ] {
                if let Some(l) = map_langs.into_iter().find(|l| !self.languages.contains(l)) {
                    return Err(invalid(format!("fact {:?}: language {l:?} not in dataset list", e.id)));
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Option<&FactEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Words of each language's prompts and answers.
    pub fn language_lexicons(&self) -> LanguageLexicons {
        let mut out = LanguageLexicons::new();
        for e in &self.entries {
            for lang in &self.languages {
                let set = out.entry(lang.clone()).or_default();
                let texts = e.prompt(lang).into_iter().chain(e.answers(lang).unwrap_or_default());
                set.extend(
                    texts
                        .flat_map(|t| t.split_whitespace().map(normalize).collect::<Vec<_>>())
                        .filter(|w| !w.is_empty()),
                );
            }
        }
        out
    }
}

pub fn load_facts(path: impl AsRef<Path>) -> Result<FactsDataset> {
    let ds: FactsDataset = read_json(path.as_ref(), "facts dataset")?;
    ds.validate()?;
    Ok(ds)
}

pub fn save_facts(path: impl AsRef<Path>, ds: &FactsDataset) -> Result<()> {
    ds.validate()?;
    write_json(path.as_ref(), ds)
}

// ---------------------------------------------------------------------------
// Lexicon
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconRecord {
    pub form: String,
    pub exact: Vec<String>,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconFile {
    pub version: u32,
    pub language: String,
    pub entries: Vec<LexiconRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged_terms: Option<Vec<String>>,
}

impl LexiconFile {
    pub fn into_lexicon(self) -> Result<Lexicon> {
        check_version(self.version, "lexicon")?;
        if self.language.trim().is_empty() {
            return Err(invalid("lexicon: empty language"));
        }
        if let Some(r) = self.entries.iter().find(|r| r.exact.iter().all(|f| normalize(f).is_empty())) {
            return Err(invalid(format!("lexicon entry {:?} has no exact form", r.form)));
        }
        let entries = self.entries.into_iter().map(|r| {
            (
                r.form,
                LexiconEntry {
                    exact: r.exact.iter().flat_map(|f| split_variants(f)).collect(),
                    synonyms: r.synonyms.iter().flat_map(|f| split_variants(f)).collect(),
                },
            )
        });
        Lexicon::new(self.language, entries, self.flagged_terms)
    }

    pub fn from_lexicon(lex: &Lexicon) -> Self {
        Self {
            version: DATASET_VERSION,
            language: lex.language.clone(),
            entries: lex
                .entries
                .iter()
                .map(|(form, e)| LexiconRecord {
                    form: form.clone(),
                    exact: e.exact.clone(),
                    synonyms: e.synonyms.clone(),
                })
                .collect(),
            flagged_terms: lex.flagged_terms.clone(),
        }
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let file: LexiconFile = read_json(path.as_ref(), "lexicon")?;
    file.into_lexicon()
}

pub fn save_lexicon(path: impl AsRef<Path>, lex: &Lexicon) -> Result<()> {
    write_json(path.as_ref(), &LexiconFile::from_lexicon(lex))
}

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedWord {
    pub surface: String,
    /// Universal POS tag; `null` is loaded but rejected by the routing report.
    pub pos: Option<String>,
    /// Half-open generated-token range `[start, end)`.
    pub tokens: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedGeneration {
    pub prompt: String,
    pub words: Vec<AnnotatedWord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationsFile {
    pub version: u32,
    /// Generation length the token spans refer to.
    pub max_steps: usize,
    pub generations: Vec<AnnotatedGeneration>,
}

impl AnnotationsFile {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version, "annotations")?;
        if self.max_steps == 0 {
            return Err(invalid("annotations: max_steps must be >= 1"));
        }
        for (g, gen) in self.generations.iter().enumerate() {
            let mut prev_end = 0;
            for w in &gen.words {
                let [s, e] = w.tokens;
                if w.surface.trim().is_empty() {
                    return Err(invalid(format!("annotations: generation {g} has an empty word")));
                }
                if s >= e || e > self.max_steps {
                    return Err(invalid(format!(
                        "annotations: word {:?} has token span [{s}, {e}) outside [0, {}]",
                        w.surface, self.max_steps
                    )));
                }
                if s < prev_end {
                    return Err(invalid(format!("annotations: word {:?} overlaps the previous word", w.surface)));
                }
                prev_end = e;
            }
        }
        Ok(())
    }
}

impl AnnotatedGeneration {
    pub fn word_spans(&self) -> Vec<WordSpan> {
        self.words
            .iter()
            .map(|w| WordSpan::new(w.surface.clone(), w.tokens[0]..w.tokens[1], w.pos.clone()))
            .collect()
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationsFile> {
    let file: AnnotationsFile = read_json(path.as_ref(), "annotations")?;
    file.validate()?;
    Ok(file)
}

pub fn save_annotations(path: impl AsRef<Path>, file: &AnnotationsFile) -> Result<()> {
    file.validate()?;
    write_json(path.as_ref(), file)
}
