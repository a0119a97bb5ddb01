//! Text normalization shared by gold partitioning, prediction normalization
//! and present/absent classification.
//!
//! Text is lowercased, split on every maximal run of non-alphanumeric
//! characters, and each purely ASCII-alphabetic token is Porter-stemmed.
//! Other tokens (digits, mixed, non-Latin scripts) pass through lowercased.
//! A phrase is *present* in a source when its token sequence occurs
//! contiguously in the source's token sequence.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod porter;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextNormError {
    #[error("cannot test presence of a phrase with no alphanumeric content: {0:?}")]
    EmptyPhrase(String),
}

/// A keyphrase after lowercasing and stemming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedPhrase {
    /// The phrase exactly as generated or annotated.
    pub surface: String,
    /// Stemmed lowercase tokens joined by single spaces.
    pub normalized: String,
    /// Set by [`NormalizedPhrase::classify`]; `false` until then.
    pub is_present: bool,
}

impl NormalizedPhrase {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.normalized.split(' ').filter(|t| !t.is_empty())
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    /// Sets `is_present` against a stemmed source token list.
    pub fn classify(&mut self, source_tokens: &[String]) -> Result<bool, TextNormError> {
        self.is_present = is_present(self, source_tokens)?;
        Ok(self.is_present)
    }
}

fn normalize_token(token: &str) -> String {
    let lower = token.to_lowercase();
    if lower.bytes().all(|b| b.is_ascii_lowercase()) {
        porter::stem(&lower)
    } else {
        lower
    }
}

/// Lowercased, stemmed tokens of `text`.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(normalize_token)
        .collect()
}

pub fn normalize_phrase(phrase: &str) -> NormalizedPhrase {
    NormalizedPhrase {
        surface: phrase.to_string(),
        normalized: normalize_tokens(phrase).join(" "),
        is_present: false,
    }
}

/// True iff the phrase's tokens occur contiguously in `source_tokens`.
pub fn is_present(phrase: &NormalizedPhrase, source_tokens: &[String]) -> Result<bool, TextNormError> {
    let needle: Vec<&str> = phrase.tokens().collect();
    if needle.is_empty() {
        return Err(TextNormError::EmptyPhrase(phrase.surface.clone()));
    }
    Ok(contains_sequence(source_tokens, &needle))
}

pub(crate) fn contains_sequence(haystack: &[String], needle: &[&str]) -> bool {
    if needle.len() > haystack.len() {
        return false;
    }
    haystack
        .windows(needle.len())
        .any(|w| w.iter().zip(needle).all(|(a, b)| a == b))
}

/// Keeps the first phrase of every distinct normalized form and drops
/// phrases that normalize to nothing.
pub fn dedup_preserve_order(phrases: Vec<NormalizedPhrase>) -> Vec<NormalizedPhrase> {
    let mut seen = HashSet::new();
    phrases
        .into_iter()
        .filter(|p| !p.is_empty() && seen.insert(p.normalized.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(text: &str) -> Vec<String> {
        normalize_tokens(text)
    }

    #[test]
    fn tokenizes_and_stems() {
        assert_eq!(toks("Graph Coloring-based TDMA"), ["graph", "color", "base", "tdma"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("networks"), ["network"]);
        assert_eq!(toks("distance-2 coloring"), ["distanc", "2", "color"]);
    }

    #[test]
    fn non_ascii_and_mixed_tokens_pass_through() {
        assert_eq!(toks("MP3 Überraschung"), ["mp3", "überraschung"]);
    }

    #[test]
    fn normalizes_phrases() {
        assert_eq!(normalize_phrase("Wireless Sensor Networks").normalized, "wireless sensor network");
        assert_eq!(normalize_phrase("TDMA").normalized, "tdma");
        let blank = normalize_phrase("  ---  ");
        assert_eq!(blank.normalized, "");
        assert_eq!(blank.surface, "  ---  ");
    }

    #[test]
    fn presence_is_token_sequence_containment() {
        let src = toks("a distributed graph coloring based scheme");
        assert!(is_present(&normalize_phrase("graph coloring"), &src).unwrap());
        assert!(!is_present(&normalize_phrase("graph coloring"), &[]).unwrap());
        let rev = toks("network of sensors reversed order");
        assert!(!is_present(&normalize_phrase("sensor network"), &rev).unwrap());
        // no substring matches inside tokens
        assert!(!is_present(&normalize_phrase("art"), &toks("an artifact")).unwrap());
        assert_eq!(
            is_present(&normalize_phrase("--"), &src),
            Err(TextNormError::EmptyPhrase("--".into()))
        );
    }

    #[test]
    fn dedup_keeps_first_surface() {
        let out = dedup_preserve_order(
            ["a", "b", "a", "c"].iter().map(|s| normalize_phrase(s)).collect(),
        );
        let forms: Vec<_> = out.iter().map(|p| p.normalized.as_str()).collect();
        assert_eq!(forms, ["a", "b", "c"]);

        let out = dedup_preserve_order(vec![normalize_phrase("Networks"), normalize_phrase("network")]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].surface, "Networks");
        assert!(dedup_preserve_order(vec![]).is_empty());
        assert!(dedup_preserve_order(vec![normalize_phrase("!!")]).is_empty());
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(text in "[A-Za-z0-9 ,.'-]{0,60}") {
            let once = normalize_phrase(&text);
            let twice = normalize_phrase(&once.normalized);
            prop_assert_eq!(&once.normalized, &twice.normalized);
            let has_alnum = text.chars().any(char::is_alphanumeric);
            prop_assert_eq!(once.normalized.is_empty(), !has_alnum);
        }

        #[test]
        fn presence_survives_extension(
            phrase in "[a-d]{1,3}( [a-d]{1,3}){0,2}",
            src in proptest::collection::vec("[a-d]{1,3}", 0..12),
            pre in proptest::collection::vec("[a-d]{1,3}", 0..4),
            post in proptest::collection::vec("[a-d]{1,3}", 0..4),
        ) {
            let p = normalize_phrase(&phrase);
            let src = toks(&src.join(" "));
            if is_present(&p, &src).unwrap() {
                let mut ext = toks(&pre.join(" "));
                ext.extend(src.iter().cloned());
                ext.extend(toks(&post.join(" ")));
                prop_assert!(is_present(&p, &ext).unwrap());
            }
        }

        #[test]
        fn dedup_output_distinct_subsequence(words in proptest::collection::vec("[a-c]{1,2}s?", 0..15)) {
            let input: Vec<_> = words.iter().map(|w| normalize_phrase(w)).collect();
            let out = dedup_preserve_order(input.clone());
            let forms: HashSet<_> = out.iter().map(|p| &p.normalized).collect();
            prop_assert_eq!(forms.len(), out.len());
            let mut it = input.iter();
            for p in &out {
                prop_assert!(it.any(|q| q == p));
            }
        }
    }
}
