//! Multi-sample keyphrase aggregation.
//!
//! The pipeline for one document:
//!
//! 1. [`rank_samples`]: normalize every sample's phrases, classify each as
//!    present/absent against the document, deduplicate within the sample, and
//!    stably sort samples by ascending perplexity (unknown perplexity last).
//! 2. Aggregate the ranked samples with one [`AggregationStrategy`].
//! 3. [`dynamic_select`]: keep the first `M_pre` present and `M_abs` absent
//!    phrases, where `M` is the ceiling of the per-sample average count.
//!
//! | Strategy | Order of the aggregated list |
//! |----------|------------------------------|
//! | `union` | lexicographic by normalized form (the set carries no order) |
//! | `union-concat` | samples concatenated in rank order, first occurrence wins |
//! | `union-interleaf` | all first phrases, then all second phrases, ..., first occurrence wins |
//! | `frequency` | number of samples containing the phrase, descending; ties in interleaf order |
//!
//! `single` skips aggregation and selection and returns the top-ranked sample.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::sample::{ParsedSample, Perplexity};
use crate::textnorm::{dedup_preserve_order, normalize_phrase, NormalizedPhrase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationStrategy {
    Single,
    Union,
    UnionConcat,
    UnionInterleaf,
    #[serde(rename = "frequency")]
    FrequencyOrder,
}

impl AggregationStrategy {
    pub const ALL: [AggregationStrategy; 5] = [
        AggregationStrategy::Single,
        AggregationStrategy::Union,
        AggregationStrategy::UnionConcat,
        AggregationStrategy::UnionInterleaf,
        AggregationStrategy::FrequencyOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationStrategy::Single => "single",
            AggregationStrategy::Union => "union",
            AggregationStrategy::UnionConcat => "union-concat",
            AggregationStrategy::UnionInterleaf => "union-interleaf",
            AggregationStrategy::FrequencyOrder => "frequency",
        }
    }
}

impl fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AggregationStrategy::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                format!("unknown aggregation {s:?} (expected single|union|union-concat|union-interleaf|frequency)")
            })
    }
}

/// One sample after normalization, classification and in-sample dedup.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedSample {
    pub phrases: Vec<NormalizedPhrase>,
    pub perplexity: Perplexity,
    /// Position of the sample in the input (request order).
    pub original_index: usize,
}

impl RankedSample {
    pub fn present_count(&self) -> usize {
        self.phrases.iter().filter(|p| p.is_present).count()
    }

    pub fn absent_count(&self) -> usize {
        self.phrases.len() - self.present_count()
    }
}

/// Samples in rank order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampleSet {
    pub samples: Vec<RankedSample>,
}

impl SampleSet {
    pub fn n(&self) -> usize {
        self.samples.len()
    }
}

/// Indices of `perplexities` in rank order: ascending, unknown last, stable.
pub fn rank_order(perplexities: &[Perplexity]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..perplexities.len()).collect();
    order.sort_by(|&a, &b| perplexities[a].rank_cmp(&perplexities[b]));
    order
}

/// Normalizes, classifies against `source_tokens`, dedups and ranks.
pub fn rank_samples_with(parsed: &[ParsedSample], source_tokens: &[String]) -> SampleSet {
    let perplexities: Vec<Perplexity> = parsed.iter().map(|p| p.perplexity).collect();
    let samples = rank_order(&perplexities)
        .into_iter()
        .map(|i| {
            let normalized = parsed[i].phrases.iter().map(|s| normalize_phrase(s)).collect();
            let mut phrases = dedup_preserve_order(normalized);
            for p in &mut phrases {
                // dedup removed every empty phrase
                p.is_present = p.classify(source_tokens).unwrap_or(false);
            }
            RankedSample {
                phrases,
                perplexity: parsed[i].perplexity,
                original_index: i,
            }
        })
        .collect();
    SampleSet { samples }
}

pub fn rank_samples(parsed: &[ParsedSample], doc: &Document) -> SampleSet {
    rank_samples_with(parsed, &doc.source_tokens())
}

fn first_occurrences<'a>(phrases: impl Iterator<Item = &'a NormalizedPhrase>) -> Vec<NormalizedPhrase> {
    let mut seen = HashSet::new();
    phrases
        .filter(|p| seen.insert(p.normalized.as_str()))
        .cloned()
        .collect()
}

/// Set union, emitted in lexicographic order of the normalized form. The
/// surface form kept is the first one met in rank order.
pub fn aggregate_union(ss: &SampleSet) -> Vec<NormalizedPhrase> {
    let mut by_form: BTreeMap<&str, &NormalizedPhrase> = BTreeMap::new();
    for p in ss.samples.iter().flat_map(|s| &s.phrases) {
        by_form.entry(p.normalized.as_str()).or_insert(p);
    }
    by_form.into_values().cloned().collect()
}

pub fn aggregate_union_concat(ss: &SampleSet) -> Vec<NormalizedPhrase> {
    first_occurrences(ss.samples.iter().flat_map(|s| &s.phrases))
}

/// Round-robin by position across samples, then first-occurrence dedup.
pub fn aggregate_union_interleaf(ss: &SampleSet) -> Vec<NormalizedPhrase> {
    let longest = ss.samples.iter().map(|s| s.phrases.len()).max().unwrap_or(0);
    let interleaved = (0..longest).flat_map(|pos| ss.samples.iter().filter_map(move |s| s.phrases.get(pos)));
    first_occurrences(interleaved)
}

/// Number of samples containing each normalized form.
pub fn sample_frequencies(ss: &SampleSet) -> HashMap<&str, usize> {
    let mut freq = HashMap::new();
    for sample in &ss.samples {
        let distinct: HashSet<&str> = sample.phrases.iter().map(|p| p.normalized.as_str()).collect();
        for form in distinct {
            *freq.entry(form).or_insert(0) += 1;
        }
    }
    freq
}

/// Descending sample frequency; ties keep their union-interleaf order.
pub fn aggregate_frequency_order(ss: &SampleSet) -> Vec<NormalizedPhrase> {
    let freq = sample_frequencies(ss);
    let mut out = aggregate_union_interleaf(ss);
    // stable sort preserves interleaf order among equal frequencies
    out.sort_by_cached_key(|p| std::cmp::Reverse(freq[p.normalized.as_str()]));
    out
}

pub fn aggregate(ss: &SampleSet, strategy: AggregationStrategy) -> Vec<NormalizedPhrase> {
    match strategy {
        AggregationStrategy::Single => ss.samples.first().map(|s| s.phrases.clone()).unwrap_or_default(),
        AggregationStrategy::Union => aggregate_union(ss),
        AggregationStrategy::UnionConcat => aggregate_union_concat(ss),
        AggregationStrategy::UnionInterleaf => aggregate_union_interleaf(ss),
        AggregationStrategy::FrequencyOrder => aggregate_frequency_order(ss),
    }
}

/// Final ranked prediction for one document.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Prediction {
    /// First `m_pre` present phrases of the aggregated list.
    pub present: Vec<NormalizedPhrase>,
    /// First `m_abs` absent phrases of the aggregated list.
    pub absent: Vec<NormalizedPhrase>,
    pub m_pre: usize,
    pub m_abs: usize,
    /// Every present phrase of the aggregated list, untruncated.
    pub ranked_present: Vec<NormalizedPhrase>,
    /// Every absent phrase of the aggregated list, untruncated.
    pub ranked_absent: Vec<NormalizedPhrase>,
}

fn ceil_div(num: usize, den: usize) -> usize {
    num.div_ceil(den)
}

/// Per-sample average present and absent counts, rounded up.
pub fn selection_sizes(ss: &SampleSet) -> (usize, usize) {
    let n = ss.n();
    if n == 0 {
        return (0, 0);
    }
    let present: usize = ss.samples.iter().map(RankedSample::present_count).sum();
    let absent: usize = ss.samples.iter().map(RankedSample::absent_count).sum();
    (ceil_div(present, n), ceil_div(absent, n))
}

fn split_by_presence(aggregated: &[NormalizedPhrase]) -> (Vec<NormalizedPhrase>, Vec<NormalizedPhrase>) {
    aggregated.iter().cloned().partition(|p| p.is_present)
}

/// Truncates the aggregated list to the dynamically chosen sizes.
pub fn dynamic_select(aggregated: &[NormalizedPhrase], ss: &SampleSet) -> Prediction {
    if ss.n() == 0 {
        return Prediction::default();
    }
    let (m_pre, m_abs) = selection_sizes(ss);
    let (ranked_present, ranked_absent) = split_by_presence(aggregated);
    Prediction {
        present: ranked_present.iter().take(m_pre).cloned().collect(),
        absent: ranked_absent.iter().take(m_abs).cloned().collect(),
        m_pre,
        m_abs,
        ranked_present,
        ranked_absent,
    }
}

/// The top-ranked sample split by presence, without truncation.
pub fn single_prediction(ss: &SampleSet) -> Prediction {
    let Some(top) = ss.samples.first() else {
        return Prediction::default();
    };
    let (present, absent) = split_by_presence(&top.phrases);
    Prediction {
        m_pre: present.len(),
        m_abs: absent.len(),
        ranked_present: present.clone(),
        ranked_absent: absent.clone(),
        present,
        absent,
    }
}

pub fn predict_from_set(ss: &SampleSet, strategy: AggregationStrategy) -> Prediction {
    match strategy {
        AggregationStrategy::Single => single_prediction(ss),
        other => dynamic_select(&aggregate(ss, other), ss),
    }
}

/// rank → aggregate → select.
pub fn predict(parsed: &[ParsedSample], doc: &Document, strategy: AggregationStrategy) -> Prediction {
    predict_from_set(&rank_samples(parsed, doc), strategy)
}
