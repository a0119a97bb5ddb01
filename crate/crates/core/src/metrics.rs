//! Keyphrase evaluation: F1@M, F1@5, R@10 and R@Inf, macro-averaged per
//! partition.
//!
//! All matching is exact equality of normalized forms. Present metrics use
//! only present-flagged predictions and present gold, absent metrics likewise.
//! F1@M scores the dynamically selected prediction; F1@5, R@10 and R@Inf rank
//! over the full aggregated list of the partition.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::Prediction;
use crate::corpus::GoldPartition;
use crate::textnorm::NormalizedPhrase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Present,
    Absent,
}

impl Partition {
    pub const ALL: [Partition; 2] = [Partition::Present, Partition::Absent];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Present => "present",
            Partition::Absent => "absent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "f1@m")]
    F1AtM,
    #[serde(rename = "f1@5")]
    F1At5,
    #[serde(rename = "r@10")]
    RAt10,
    #[serde(rename = "r@inf")]
    RAtInf,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::F1AtM, Metric::F1At5, Metric::RAt10, Metric::RAtInf];

    pub fn name(self) -> &'static str {
        match self {
            Metric::F1AtM => "f1@m",
            Metric::F1At5 => "f1@5",
            Metric::RAt10 => "r@10",
            Metric::RAtInf => "r@inf",
        }
    }
}

/// What to do with a document whose gold list for a partition is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyGoldPolicy {
    /// Leave it out of that partition's averages.
    #[default]
    Exclude,
    /// Score it as 0 on every metric.
    Zero,
}

impl FromStr for EmptyGoldPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exclude" => Ok(EmptyGoldPolicy::Exclude),
            "zero" => Ok(EmptyGoldPolicy::Zero),
            _ => Err(format!("unknown empty-gold policy {s:?} (expected exclude|zero)")),
        }
    }
}

impl fmt::Display for EmptyGoldPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmptyGoldPolicy::Exclude => "exclude",
            EmptyGoldPolicy::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_counts(matches: usize, predicted: usize, gold: usize) -> Prf {
        let precision = if predicted == 0 { 0.0 } else { matches as f64 / predicted as f64 };
        let recall = matches as f64 / gold as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

fn matches<S: AsRef<str>>(pred: &[S], gold: &HashSet<String>) -> usize {
    pred.iter().filter(|p| gold.contains(p.as_ref())).count()
}

/// P/R/F1 of a duplicate-free prediction; `None` when gold is empty.
pub fn score_at_m<S: AsRef<str>>(pred: &[S], gold: &HashSet<String>) -> Option<Prf> {
    if gold.is_empty() {
        return None;
    }
    Some(Prf::from_counts(matches(pred, gold), pred.len(), gold.len()))
}

/// P/R/F1 over the first `k` predictions. With `pad`, a short prediction is
/// filled with never-matching dummies so precision divides by `k`.
pub fn score_at_k<S: AsRef<str>>(pred: &[S], gold: &HashSet<String>, k: usize, pad: bool) -> Option<Prf> {
    assert!(k >= 1, "k must be positive");
    if gold.is_empty() {
        return None;
    }
    let top = &pred[..pred.len().min(k)];
    let denom = if pad { k } else { top.len() };
    Some(Prf::from_counts(matches(top, gold), denom, gold.len()))
}

/// Recall of the untruncated list; `None` when gold is empty.
pub fn recall_at_inf<S: AsRef<str>>(all: &[S], gold: &HashSet<String>) -> Option<f64> {
    score_at_m(all, gold).map(|prf| prf.recall)
}

/// One document's score on one (partition, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocScore {
    pub doc_id: String,
    pub partition: Partition,
    pub metric: Metric,
    /// `None` for recall-only metrics.
    pub precision: Option<f64>,
    pub recall: f64,
    /// `None` for recall-only metrics.
    pub f1: Option<f64>,
}

impl DocScore {
    /// The number that gets averaged: F1 for F1 metrics, recall otherwise.
    pub fn value(&self) -> f64 {
        self.f1.unwrap_or(self.recall)
    }
}

fn forms(phrases: &[NormalizedPhrase]) -> Vec<&str> {
    phrases.iter().map(|p| p.normalized.as_str()).collect()
}

/// All metric scores of one document. Partitions with empty gold are
/// omitted under [`EmptyGoldPolicy::Exclude`] and zero-scored otherwise.
pub fn score_document(doc_id: &str, pred: &Prediction, gold: &GoldPartition, policy: EmptyGoldPolicy) -> Vec<DocScore> {
    let mut out = Vec::with_capacity(8);
    for partition in Partition::ALL {
        let (selected, ranked, gold_set) = match partition {
            Partition::Present => (forms(&pred.present), forms(&pred.ranked_present), gold.present_forms()),
            Partition::Absent => (forms(&pred.absent), forms(&pred.ranked_absent), gold.absent_forms()),
        };
        if gold_set.is_empty() && policy == EmptyGoldPolicy::Exclude {
            continue;
        }
        for metric in Metric::ALL {
            let scored = match metric {
                Metric::F1AtM => score_at_m(&selected, &gold_set),
                Metric::F1At5 => score_at_k(&ranked, &gold_set, 5, true),
                Metric::RAt10 => score_at_k(&ranked, &gold_set, 10, false),
                Metric::RAtInf => score_at_m(&ranked, &gold_set),
            }
            .unwrap_or(Prf::ZERO);
            let f1_metric = matches!(metric, Metric::F1AtM | Metric::F1At5);
            out.push(DocScore {
                doc_id: doc_id.to_string(),
                partition,
                metric,
                precision: f1_metric.then_some(scored.precision),
                recall: scored.recall,
                f1: f1_metric.then_some(scored.f1),
            });
        }
    }
    out
}

/// A macro-averaged value and the number of documents behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    /// `None` when no document was evaluated.
    pub value: Option<f64>,
    pub count: usize,
}

/// Arithmetic mean of `scores`, which must share one (partition, metric).
pub fn macro_average(scores: &[DocScore]) -> Cell {
    debug_assert!(scores
        .windows(2)
        .all(|w| w[0].partition == w[1].partition && w[0].metric == w[1].metric));
    if scores.is_empty() {
        return Cell { value: None, count: 0 };
    }
    let sum: f64 = scores.iter().map(DocScore::value).sum();
    Cell {
        value: Some(sum / scores.len() as f64),
        count: scores.len(),
    }
}

/// Macro-averaged results of one (corpus, variant, strategy) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub corpus: String,
    pub variant: String,
    pub strategy: String,
    pub cells: BTreeMap<(Partition, Metric), Cell>,
}

pub const CSV_HEADER: &str = "corpus,variant,strategy,partition,metric,value,count";

impl MetricReport {
    /// Folds document scores in the order given; callers pass them sorted
    /// by document so the floating-point sums are reproducible.
    pub fn from_scores(corpus: &str, variant: &str, strategy: &str, scores: &[DocScore]) -> Self {
        let mut cells = BTreeMap::new();
        for partition in Partition::ALL {
            for metric in Metric::ALL {
                let subset: Vec<DocScore> = scores
                    .iter()
                    .filter(|s| s.partition == partition && s.metric == metric)
                    .cloned()
                    .collect();
                cells.insert((partition, metric), macro_average(&subset));
            }
        }
        MetricReport {
            corpus: corpus.to_string(),
            variant: variant.to_string(),
            strategy: strategy.to_string(),
            cells,
        }
    }

    pub fn get(&self, partition: Partition, metric: Metric) -> Cell {
        self.cells[&(partition, metric)]
    }

    /// CSV rows without header.
    pub fn csv_rows(&self) -> Vec<String> {
        self.cells
            .iter()
            .map(|((partition, metric), cell)| {
                let value = cell.value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
                format!(
                    "{},{},{},{},{},{value},{}",
                    csv_field(&self.corpus),
                    csv_field(&self.variant),
                    csv_field(&self.strategy),
                    partition.name(),
                    metric.name(),
                    cell.count
                )
            })
            .collect()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for report in reports {
        for row in report.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

/// Aligned text table: one row per (variant, strategy), and for every corpus
/// the present F1@M/F1@5 and absent F1@M/F1@5/R@10/R@Inf, in percent.
pub fn render_table(reports: &[MetricReport]) -> String {
    const COLUMNS: [(Partition, Metric, &str); 6] = [
        (Partition::Present, Metric::F1AtM, "P F1@M"),
        (Partition::Present, Metric::F1At5, "P F1@5"),
        (Partition::Absent, Metric::F1AtM, "A F1@M"),
        (Partition::Absent, Metric::F1At5, "A F1@5"),
        (Partition::Absent, Metric::RAt10, "A R@10"),
        (Partition::Absent, Metric::RAtInf, "A R@Inf"),
    ];
    let corpora: BTreeSet<&str> = reports.iter().map(|r| r.corpus.as_str()).collect();
    let mut rows: Vec<(String, String)> = Vec::new();
    for r in reports {
        let key = (r.variant.clone(), r.strategy.clone());
        if !rows.contains(&key) {
            rows.push(key);
        }
    }
    let label_width = rows
        .iter()
        .map(|(v, s)| v.len() + s.len() + 3)
        .chain(std::iter::once(18))
        .max()
        .unwrap_or(18);
    let col = 8;

    let mut out = format!("{:<label_width$}", "");
    for corpus in &corpora {
        let width = col * COLUMNS.len();
        out.push_str(&format!(" | {corpus:^width$}"));
    }
    out.push('\n');
    out.push_str(&format!("{:<label_width$}", "variant / strategy"));
    for _ in &corpora {
        out.push_str(" | ");
        for (_, _, name) in COLUMNS {
            out.push_str(&format!("{name:>col$}"));
        }
    }
    out.push('\n');
    out.push_str(&"-".repeat(out.lines().last().map_or(0, str::len)));
    out.push('\n');
    for (variant, strategy) in &rows {
        out.push_str(&format!("{:<label_width$}", format!("{variant} / {strategy}")));
        for corpus in &corpora {
            out.push_str(" | ");
            let report = reports
                .iter()
                .find(|r| r.corpus == *corpus && &r.variant == variant && &r.strategy == strategy);
            for (partition, metric, _) in COLUMNS {
                let cell = report
                    .and_then(|r| r.get(partition, metric).value)
                    .map_or_else(|| "-".to_string(), |v| format!("{:.1}", v * 100.0));
                out.push_str(&format!("{cell:>col$}"));
            }
        }
        out.push('\n');
    }
    out
}
