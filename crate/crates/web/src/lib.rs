//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Each export takes plain strings and returns a JSON string, so the page
//! needs no bindings beyond `JSON.parse`.

use std::collections::HashSet;

use kpagg_core::aggregation::{predict_from_set, rank_samples_with};
use kpagg_core::metrics::{score_at_k, score_at_m};
use kpagg_core::textnorm::{normalize_phrase, normalize_tokens};
use kpagg_core::{parse_sample, AggregationStrategy, NormalizedPhrase, ParsedSample, Perplexity};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
pub struct PhraseView {
    pub surface: String,
    pub normalized: String,
    pub present: bool,
}

impl From<&NormalizedPhrase> for PhraseView {
    fn from(p: &NormalizedPhrase) -> Self {
        PhraseView {
            surface: p.surface.clone(),
            normalized: p.normalized.clone(),
            present: p.is_present,
        }
    }
}

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

/// Stems each phrase (one per line) and tests it against the document.
pub fn normalize_phrases(phrases: &str, document: &str) -> Vec<PhraseView> {
    let source = normalize_tokens(document);
    lines(phrases)
        .map(|l| {
            let mut p = normalize_phrase(l);
            if !p.is_empty() {
                p.is_present = p.classify(&source).unwrap_or(false);
            }
            PhraseView::from(&p)
        })
        .collect()
}

#[derive(Serialize)]
pub struct StrategyView {
    pub strategy: &'static str,
    pub present: Vec<PhraseView>,
    pub absent: Vec<PhraseView>,
    pub m_pre: usize,
    pub m_abs: usize,
}

#[derive(Serialize)]
pub struct AggregateView {
    pub samples: Vec<Vec<String>>,
    pub fallbacks: usize,
    pub strategies: Vec<StrategyView>,
}

/// Parses samples (one completion per line, in rank order) and runs every
/// aggregation strategy with dynamic selection.
pub fn aggregate_samples(samples: &str, document: &str) -> AggregateView {
    let parsed: Vec<ParsedSample> = lines(samples)
        .map(|l| parse_sample(l, false).with_perplexity(Perplexity::Unknown))
        .collect();
    let set = rank_samples_with(&parsed, &normalize_tokens(document));
    let strategies = AggregationStrategy::ALL
        .into_iter()
        .map(|s| {
            let pred = predict_from_set(&set, s);
            StrategyView {
                strategy: s.name(),
                present: pred.present.iter().map(PhraseView::from).collect(),
                absent: pred.absent.iter().map(PhraseView::from).collect(),
                m_pre: pred.m_pre,
                m_abs: pred.m_abs,
            }
        })
        .collect();
    AggregateView {
        fallbacks: parsed.iter().filter(|p| p.fallback).count(),
        samples: parsed.into_iter().map(|p| p.phrases).collect(),
        strategies,
    }
}

#[derive(Serialize, Debug, PartialEq)]
pub struct ScoreView {
    pub f1_at_m: Option<f64>,
    pub f1_at_5: Option<f64>,
    pub r_at_10: Option<f64>,
    pub r_at_inf: Option<f64>,
    pub matched: Vec<String>,
}

/// Scores a ranked prediction against gold (both one phrase per line) after
/// normalization; the whole prediction counts as the selected set.
pub fn score_lists(predicted: &str, gold: &str) -> ScoreView {
    let mut seen = HashSet::new();
    let pred: Vec<String> = lines(predicted)
        .map(|l| normalize_phrase(l).normalized)
        .filter(|f| !f.is_empty() && seen.insert(f.clone()))
        .collect();
    let gold: HashSet<String> = lines(gold)
        .map(|l| normalize_phrase(l).normalized)
        .filter(|f| !f.is_empty())
        .collect();
    ScoreView {
        f1_at_m: score_at_m(&pred, &gold).map(|s| s.f1),
        f1_at_5: score_at_k(&pred, &gold, 5, true).map(|s| s.f1),
        r_at_10: score_at_k(&pred, &gold, 10, false).map(|s| s.recall),
        r_at_inf: score_at_m(&pred, &gold).map(|s| s.recall),
        matched: pred.iter().filter(|p| gold.contains(*p)).cloned().collect(),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("view types serialize")
}

#[wasm_bindgen]
pub fn normalize(phrases: &str, document: &str) -> String {
    to_json(&normalize_phrases(phrases, document))
}

#[wasm_bindgen]
pub fn aggregate(samples: &str, document: &str) -> String {
    to_json(&aggregate_samples(samples, document))
}

#[wasm_bindgen]
pub fn score(predicted: &str, gold: &str) -> String {
    to_json(&score_lists(predicted, gold))
}
