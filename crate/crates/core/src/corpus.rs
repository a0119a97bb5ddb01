//! Benchmark corpus loading, gold partitioning and dataset statistics.
//!
//! Corpora are JSON-lines files, one document per line:
//!
//! ```text
//! {"id": "...", "title": "...", "abstract": "...", "keyphrases": ["..."], "domain": "scientific"}
//! ```
//!
//! `domain` is optional and falls back to the loader's default.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textnorm::{self, dedup_preserve_order, normalize_phrase, NormalizedPhrase};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus {0} contains no valid records")]
    NoRecords(PathBuf),
    #[error("statistics need at least one document")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Scientific,
    News,
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scientific" => Ok(Domain::Scientific),
            "news" => Ok(Domain::News),
            other => Err(format!("unknown domain {other:?} (expected scientific|news)")),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Scientific => "scientific",
            Domain::News => "news",
        })
    }
}

/// One benchmark record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    /// Abstract or article body.
    pub body: String,
    /// Gold keyphrases as annotated, in file order.
    pub gold: Vec<String>,
    pub domain: Domain,
}

impl Document {
    /// Stemmed tokens of title and body, the source every presence test runs against.
    pub fn source_tokens(&self) -> Vec<String> {
        textnorm::normalize_tokens(&format!("{} {}", self.title, self.body))
    }

    pub fn to_record(&self) -> Record {
        Record {
            id: self.id.clone(),
            title: self.title.clone(),
            body: self.body.clone(),
            keyphrases: self.gold.clone(),
            domain: Some(self.domain),
        }
    }
}

/// Wire form of a corpus line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub body: String,
    pub keyphrases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
}

/// A line that was skipped during loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub skipped: Vec<SkippedLine>,
}

/// Loads documents in file order, truncated to `limit` valid records.
///
/// Malformed lines (bad JSON, missing fields, empty or duplicate ids) are
/// skipped and reported; blank lines are ignored silently.
pub fn load_corpus(path: &Path, limit: Option<usize>, default_domain: Domain) -> Result<LoadedCorpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut documents = Vec::new();
    let mut skipped = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let skip = |reason: String| SkippedLine { line: i + 1, reason };
        match serde_json::from_str::<Record>(&line) {
            Ok(rec) if rec.id.is_empty() => skipped.push(skip("empty id".into())),
            Ok(rec) if ids.contains(&rec.id) => skipped.push(skip(format!("duplicate id {:?}", rec.id))),
            Ok(rec) => {
                ids.insert(rec.id.clone());
                documents.push(Document {
                    id: rec.id,
                    title: rec.title,
                    body: rec.body,
                    gold: rec.keyphrases,
                    domain: rec.domain.unwrap_or(default_domain),
                });
            }
            Err(e) => skipped.push(skip(e.to_string())),
        }
    }
    if documents.is_empty() {
        return Err(CorpusError::NoRecords(path.to_path_buf()));
    }
    if let Some(limit) = limit {
        documents.truncate(limit);
    }
    Ok(LoadedCorpus { documents, skipped })
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for doc in docs {
        serde_json::to_writer(&mut out, &doc.to_record())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Gold keyphrases split by presence in the document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldPartition {
    pub present: Vec<NormalizedPhrase>,
    pub absent: Vec<NormalizedPhrase>,
}

impl GoldPartition {
    pub fn present_forms(&self) -> HashSet<String> {
        self.present.iter().map(|p| p.normalized.clone()).collect()
    }

    pub fn absent_forms(&self) -> HashSet<String> {
        self.absent.iter().map(|p| p.normalized.clone()).collect()
    }
}

/// Normalizes, deduplicates and splits the gold list of `doc`.
pub fn partition_gold(doc: &Document) -> GoldPartition {
    partition_gold_with(doc, &doc.source_tokens())
}

/// As [`partition_gold`], reusing already computed source tokens.
pub fn partition_gold_with(doc: &Document, source_tokens: &[String]) -> GoldPartition {
    let phrases = dedup_preserve_order(doc.gold.iter().map(|g| normalize_phrase(g)).collect());
    let mut partition = GoldPartition::default();
    for mut phrase in phrases {
        // dedup dropped empty phrases, so classification cannot fail
        if phrase.classify(source_tokens).unwrap_or(false) {
            partition.present.push(phrase);
        } else {
            partition.absent.push(phrase);
        }
    }
    partition
}

/// Descriptive statistics of a corpus.
///
/// Word counts use whitespace splitting of the raw text. Per-keyphrase
/// averages are `None` when the corpus has no keyphrase in that partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub avg_input_words: f64,
    pub avg_words_per_present_kp: Option<f64>,
    pub avg_words_per_absent_kp: Option<f64>,
    pub avg_present_per_doc: f64,
    pub avg_absent_per_doc: f64,
}

pub fn corpus_stats(docs: &[Document]) -> Result<CorpusStats, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    // integer sums keep the result independent of document order
    let mut input_words = 0u64;
    let (mut present_kps, mut present_words) = (0u64, 0u64);
    let (mut absent_kps, mut absent_words) = (0u64, 0u64);
    for doc in docs {
        input_words += (doc.title.split_whitespace().count() + doc.body.split_whitespace().count()) as u64;
        let partition = partition_gold(doc);
        present_kps += partition.present.len() as u64;
        present_words += partition
            .present
            .iter()
            .map(|p| p.surface.split_whitespace().count() as u64)
            .sum::<u64>();
        absent_kps += partition.absent.len() as u64;
        absent_words += partition
            .absent
            .iter()
            .map(|p| p.surface.split_whitespace().count() as u64)
            .sum::<u64>();
    }
    let n = docs.len() as f64;
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Ok(CorpusStats {
        documents: docs.len(),
        avg_input_words: input_words as f64 / n,
        avg_words_per_present_kp: ratio(present_words, present_kps),
        avg_words_per_absent_kp: ratio(absent_words, absent_kps),
        avg_present_per_doc: present_kps as f64 / n,
        avg_absent_per_doc: absent_kps as f64 / n,
    })
}

impl CorpusStats {
    fn rows(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("Average words in title + abstract", Some(self.avg_input_words)),
            ("Average words per present keyphrase", self.avg_words_per_present_kp),
            ("Average words per absent keyphrase", self.avg_words_per_absent_kp),
            ("Average present keyphrases per input", Some(self.avg_present_per_doc)),
            ("Average absent keyphrases per input", Some(self.avg_absent_per_doc)),
        ]
    }

    /// Two-column aligned text table.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<40}{:>10}\n", "Documents", self.documents);
        for (name, value) in self.rows() {
            let cell = value.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
            out.push_str(&format!("{name:<40}{cell:>10}\n"));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("statistic,value\n");
        out.push_str(&format!("documents,{}\n", self.documents));
        let keys = [
            "avg_input_words",
            "avg_words_per_present_kp",
            "avg_words_per_absent_kp",
            "avg_present_per_doc",
            "avg_absent_per_doc",
        ];
        for (key, (_, value)) in keys.iter().zip(self.rows()) {
            let cell = value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!("{key},{cell}\n"));
        }
        out
    }
}
