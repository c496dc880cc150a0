// SPDX-License-Identifier: MIT OR Apache-2.0

//! Vocabulary and greedy longest-match tokenizer.
//!
//! Token strings of the form `<0xHH>` are byte-fallback tokens: they are
//! never matched literally and detokenize to the raw byte. `<eot>` and
//! `<unk>` are control tokens and detokenize to nothing.

use std::borrow::Cow;
use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EOT_TOKEN: &str = "<eot>";
pub const UNK_TOKEN: &str = "<unk>";

/// Parse a `<0xHH>` byte-fallback token.
pub fn parse_byte_token(token: &str) -> Option<u8> {
    let hex = token.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

pub fn byte_token(byte: u8) -> String {
    format!("<0x{byte:02X}>")
}

fn is_control(token: &str) -> bool {
    token == EOT_TOKEN || token == UNK_TOKEN
}

/// Raw bytes a token string stands for.
pub fn token_bytes(token: &str) -> Cow<'_, [u8]> {
    if let Some(b) = parse_byte_token(token) {
        Cow::Owned(vec![b])
    } else if is_control(token) {
        Cow::Borrowed(&[])
    } else {
        Cow::Borrowed(token.as_bytes())
    }
}

/// Token-string <-> token-id bijection with dense ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    literal: HashMap<Vec<u8>, u32>,
    bytes: [Option<u32>; 256],
    max_literal_len: usize,
    eot: Option<u32>,
    unk: Option<u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocabulary {
    /// Build from an id-ordered token list. Rejects empty lists and
    /// duplicate strings.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::VocabGap { id: 0 });
        }
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if let Some(first) = seen.insert(t.as_str(), id) {
                return Err(Error::VocabDuplicate {
                    token: t.clone(),
                    first,
                    second: id,
                });
            }
        }
        let mut literal = HashMap::new();
        let mut bytes = [None; 256];
        let mut max_literal_len = 0;
        let (mut eot, mut unk) = (None, None);
        for (id, t) in tokens.iter().enumerate() {
            let id = id as u32;
            if let Some(b) = parse_byte_token(t) {
                bytes[b as usize] = Some(id);
            } else if t == EOT_TOKEN {
                eot = Some(id);
            } else if t == UNK_TOKEN {
                unk = Some(id);
            } else if !t.is_empty() {
                max_literal_len = max_literal_len.max(t.len());
                literal.insert(t.as_bytes().to_vec(), id);
            }
        }
        Ok(Self {
            tokens,
            literal,
            bytes,
            max_literal_len,
            eot,
            unk,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Id of a token string, literal or special.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.tokens.iter().position(|t| t == token).map(|i| i as u32)
    }

    pub fn eot(&self) -> Option<u32> {
        self.eot
    }

    /// Greedy longest match; byte tokens cover characters with no
    /// literal match, `<unk>` (or id 0) covers characters with neither.
    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let src = text.as_bytes();
        let mut ids = Vec::new();
        let mut offsets = Vec::new();
        let mut i = 0;
        while i < src.len() {
            let longest = self.max_literal_len.min(src.len() - i);
            let hit = (1..=longest)
                .rev()
                .find_map(|n| self.literal.get(&src[i..i + n]).map(|&id| (id, n)));
            if let Some((id, n)) = hit {
                ids.push(id);
                offsets.push(i..i + n);
                i += n;
                continue;
            }
            // `i` always sits on a char boundary: literal matches are whole
            // UTF-8 strings and fallbacks consume whole characters.
            let ch_len = text[i..].chars().next().map_or(1, char::len_utf8);
            let char_bytes = &src[i..i + ch_len];
            if char_bytes.iter().all(|&b| self.bytes[b as usize].is_some()) {
                for (k, &b) in char_bytes.iter().enumerate() {
                    ids.push(self.bytes[b as usize].unwrap_or(0));
                    offsets.push(i + k..i + k + 1);
                }
            } else {
                ids.push(self.unk.unwrap_or(0));
                offsets.push(i..i + ch_len);
            }
            i += ch_len;
        }
        TokenSeq { ids, offsets }
    }

    pub fn detokenize_bytes(&self, ids: &[u32]) -> Vec<u8> {
        let mut out = Vec::new();
        for &id in ids {
            if let Some(t) = self.token(id) {
                out.extend_from_slice(&token_bytes(t));
            }
        }
        out
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.detokenize_bytes(ids)).into_owned()
    }

    /// Readable form of a single token (byte tokens kept as `<0xHH>`).
    pub fn display(&self, id: u32) -> String {
        self.token(id).unwrap_or("<?>").to_owned()
    }
}

/// Token ids plus the byte span each token covers in its source text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub offsets: Vec<Range<usize>>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Token positions whose byte spans intersect `bytes`.
    pub fn span_for_bytes(&self, bytes: Range<usize>) -> Range<usize> {
        let hits: Vec<usize> = self
            .offsets
            .iter()
            .enumerate()
            .filter(|(_, o)| o.start < bytes.end && bytes.start < o.end)
            .map(|(i, _)| i)
            .collect();
        match (hits.first(), hits.last()) {
            (Some(&a), Some(&b)) => a..b + 1,
            _ => 0..0,
        }
    }
}

/// Vocabulary used by the toy bundles: control tokens, printable ASCII,
/// byte fallbacks for every other byte, then each word with and without a
/// leading space.
pub fn toy_vocabulary(words: &[&str]) -> Vec<String> {
    let mut tokens = vec![EOT_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
    for b in 0u8..=255 {
        if (0x20..=0x7E).contains(&b) {
            tokens.push((b as char).to_string());
        } else {
            tokens.push(byte_token(b));
        }
    }
    let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    for w in words {
        for t in [w.to_string(), format!(" {w}")] {
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        }
    }
    tokens
}

/// Multilingual word list for `make-toy` bundles.
pub const TOY_WORDS: &[&str] = &[
    "the", "The", "of", "is", "a", "and", "in", "on", "to", "water", "lake", "sun", "boat",
    "calm", "capital", "Canada", "Ottawa", "France", "Paris", "Germany", "Berlin", "city",
    "animal", "cat", "dog", "love", "hate", "fruit", "They", "adopted", "sailed", "Le",
    "la", "le", "du", "de", "l'", "eau", "lac", "soleil", "bateau", "naviguait", "en",
    "douceur", "sur", "au", "calme", "capitale", "est", "chat", "chien", "amour", "haine",
    "het", "een", "van", "Ze", "telen", "hun", "eigen", "hoofdstad", "meer", "zon", "kat",
    "hond", "liefde", "haat", "dier", "De", "Der", "die", "das", "ist", "Hauptstadt",
    "Wasser", "See", "Sonne", "Katze", "Hund", "Liebe", "Hass", "Tier", "von",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::new(toy_vocabulary(words)).unwrap()
    }

    #[test]
    fn single_word_is_one_token() {
        let v = vocab(&["water"]);
        let seq = v.tokenize("water");
        assert_eq!(seq.len(), 1);
        assert_eq!(v.token(seq.ids[0]), Some("water"));
    }

    #[test]
    fn greedy_split_offsets() {
        let v = vocab(&["water", "val"]);
        let seq = v.tokenize("waterval");
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.offsets, vec![0..5, 5..8]);
    }

    #[test]
    fn non_ascii_uses_byte_tokens() {
        let v = vocab(&[]);
        let seq = v.tokenize("é");
        assert_eq!(seq.len(), 2);
        assert_eq!(v.detokenize(&seq.ids), "é");
        assert_eq!(seq.offsets, vec![0..1, 1..2]);
    }

    #[test]
    fn uncovered_char_falls_back_to_unk() {
        let v = Vocabulary::new(vec![UNK_TOKEN.into(), "a".into()]).unwrap();
        let seq = v.tokenize("a€a");
        assert_eq!(seq.ids, vec![1, 0, 1]);
        assert_eq!(seq.offsets, vec![0..1, 1..4, 4..5]);
    }

    #[test]
    fn duplicates_rejected() {
        let err = Vocabulary::new(vec!["a".into(), "b".into(), "a".into()]).unwrap_err();
        assert!(matches!(err, Error::VocabDuplicate { first: 0, second: 2, .. }));
    }

    #[test]
    fn control_tokens_detokenize_empty() {
        let v = vocab(&[]);
        let eot = v.eot().unwrap();
        assert_eq!(v.detokenize(&[eot]), "");
    }

    #[test]
    fn span_for_bytes_finds_overlap() {
        let v = vocab(&["Canada", " Canada", "The", " capital", " of", " is"]);
        let text = "The capital of Canada is";
        let seq = v.tokenize(text);
        let start = text.find("Canada").unwrap();
        let span = seq.span_for_bytes(start..start + 6);
        assert_eq!(span.len(), 1);
        assert_eq!(v.token(seq.ids[span.start]), Some(" Canada"));
    }
}
