//! End-to-end runs: corpus → prompts → samples (cached) → predictions →
//! metrics, and grids of such runs.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt, TryStreamExt};
use kpagg_core::aggregation::predict;
use kpagg_core::corpus::{load_corpus, partition_gold, CorpusError};
use kpagg_core::metrics::{reports_to_csv, score_document, EmptyGoldPolicy};
use kpagg_core::prompting::PromptError;
use kpagg_core::sample::{perplexity_with, PerplexityMode};
use kpagg_core::{
    build_prompt, parse_sample, AggregationStrategy, Document, Domain, MetricReport, PromptConfig, PromptVariant,
    RawSample,
};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{cache_path, CacheKey, SampleCache};
use crate::client::{Client, ClientConfig, ClientError, RequestMode, RetryPolicy, SampleRequest};

pub const API_KEY_ENV: &str = "KPAGG_API_KEY";
pub const ENDPOINT_ENV: &str = "KPAGG_ENDPOINT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything that determines a run. Serialized next to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Report label and cache directory name; defaults to the corpus file stem.
    pub corpus_name: Option<String>,
    pub variant: PromptVariant,
    pub strategy: AggregationStrategy,
    pub n_samples: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model: String,
    pub endpoint: Option<String>,
    pub limit: Option<usize>,
    /// Picks the `limit` subset; without it the first `limit` documents are used.
    pub seed: Option<u64>,
    pub cache_dir: PathBuf,
    pub empty_gold: EmptyGoldPolicy,
    pub out: Option<PathBuf>,
    /// Send an assistant turn holding `[` for the model to continue.
    pub prefill: bool,
    pub request_mode: RequestMode,
    pub perplexity: PerplexityMode,
    pub in_flight: usize,
    /// Serve from cache only; a missing sample marks its document errored.
    pub offline: bool,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    pub prompts: Option<PathBuf>,
    /// Domain for records that do not name one.
    pub domain: Domain,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::new(),
            corpus_name: None,
            variant: PromptVariant::Baseline,
            strategy: AggregationStrategy::Single,
            n_samples: 10,
            temperature: 0.8,
            max_tokens: 500,
            model: "default".to_string(),
            endpoint: None,
            limit: None,
            seed: None,
            cache_dir: PathBuf::from("cache"),
            empty_gold: EmptyGoldPolicy::Exclude,
            out: None,
            prefill: false,
            request_mode: RequestMode::Multi,
            perplexity: PerplexityMode::Mean,
            in_flight: 4,
            offline: false,
            retry: RetryPolicy::default(),
            timeout_secs: 120,
            prompts: None,
            domain: Domain::Scientific,
        }
    }
}

impl RunConfig {
    pub fn corpus_label(&self) -> String {
        self.corpus_name.clone().unwrap_or_else(|| {
            self.corpus
                .file_stem()
                .map_or_else(|| "corpus".to_string(), |s| s.to_string_lossy().into_owned())
        })
    }

    pub fn cache_file(&self) -> PathBuf {
        cache_path(&self.cache_dir, &self.corpus_label(), self.variant.name(), &self.model)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.corpus.as_os_str().is_empty() {
            return fail("no corpus given");
        }
        if self.n_samples == 0 {
            return fail("n_samples must be at least 1");
        }
        if !(self.temperature >= 0.0) {
            return fail("temperature must be non-negative");
        }
        if self.in_flight == 0 {
            return fail("in_flight must be at least 1");
        }
        if self.limit == Some(0) {
            return fail("limit must be at least 1");
        }
        if !self.offline && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return fail("no endpoint: pass --endpoint, set KPAGG_ENDPOINT, or run --offline against a warm cache");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocError {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub attempted: usize,
    pub processed: usize,
    pub errored: usize,
    pub parse_fallbacks: usize,
    pub failed_samples: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub retries: u64,
    pub requests: u64,
    pub skipped_corpus_lines: usize,
    pub corrupt_cache_lines: usize,
    pub wall_time: Duration,
    pub errors: Vec<DocError>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        format!(
            "documents: {} attempted, {} processed, {} errored\n\
             samples: {} parse fallbacks, {} failed samples\n\
             cache: {} hits, {} misses, {} corrupt lines\n\
             network: {} requests, {} retries\n\
             corpus lines skipped: {}\n\
             wall time: {:.2}s",
            self.attempted,
            self.processed,
            self.errored,
            self.parse_fallbacks,
            self.failed_samples,
            self.cache_hits,
            self.cache_misses,
            self.corrupt_cache_lines,
            self.requests,
            self.retries,
            self.skipped_corpus_lines,
            self.wall_time.as_secs_f64()
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricReport,
    pub summary: RunSummary,
}

/// `limit` documents: the first ones, or a seeded sample kept in corpus order.
pub fn select_subset(docs: Vec<Document>, limit: Option<usize>, seed: Option<u64>) -> Vec<Document> {
    let Some(k) = limit.filter(|&k| k < docs.len()) else {
        return docs;
    };
    match seed {
        None => docs.into_iter().take(k).collect(),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, docs.len(), k).into_vec();
            picked.sort_unstable();
            let mut slots: Vec<Option<Document>> = docs.into_iter().map(Some).collect();
            picked.into_iter().filter_map(|i| slots[i].take()).collect()
        }
    }
}

enum Fetched {
    Samples(Vec<RawSample>),
    Errored(String),
}

struct Counters {
    hits: AtomicUsize,
    misses: AtomicUsize,
}

async fn fetch_document(
    doc: &Document,
    config: &RunConfig,
    prompts: &PromptConfig,
    cache: &SampleCache,
    client: Option<&Client>,
    counters: &Counters,
) -> Result<Fetched, HarnessError> {
    let prompt = build_prompt(doc, config.variant, config.prefill, prompts);
    let mut samples = Vec::with_capacity(config.n_samples);
    let mut missing = Vec::new();
    for sample_index in 0..config.n_samples {
        let key = CacheKey {
            doc_id: doc.id.clone(),
            prompt_hash: prompt.prompt_hash.clone(),
            sample_index,
        };
        match cache.get(&key) {
            Some(s) => samples.push(s),
            None => missing.push(sample_index),
        }
    }
    counters.hits.fetch_add(samples.len(), Ordering::Relaxed);
    counters.misses.fetch_add(missing.len(), Ordering::Relaxed);
    if !missing.is_empty() {
        let Some(client) = client else {
            return Ok(Fetched::Errored(format!("{} samples not cached (offline)", missing.len())));
        };
        let req = SampleRequest {
            doc_id: &doc.id,
            prompt: &prompt,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        };
        for sample in client.sample_completions(&req, &missing).await? {
            cache.put(&sample).map_err(io_err(cache.path()))?;
            samples.push(sample);
        }
    }
    samples.sort_by_key(|s| s.sample_index);
    Ok(Fetched::Samples(samples))
}

/// Runs one configuration to completion. Blocks; must not be called from
/// inside an async runtime.
pub fn run(config: &RunConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io_err(Path::new("<tokio runtime>")))?;
    runtime.block_on(run_async(config))
}

async fn run_async(config: &RunConfig) -> Result<RunOutput, HarnessError> {
    let started = Instant::now();
    let prompts = match &config.prompts {
        Some(path) => PromptConfig::load(path)?,
        None => PromptConfig::default(),
    };
    let loaded = load_corpus(&config.corpus, None, config.domain)?;
    for skip in &loaded.skipped {
        warn!("{}:{}: skipped record: {}", config.corpus.display(), skip.line, skip.reason);
    }
    let docs = select_subset(loaded.documents, config.limit, config.seed);
    let cache_file = config.cache_file();
    let cache = SampleCache::open(&cache_file).map_err(io_err(&cache_file))?;
    let client = if config.offline {
        None
    } else {
        Some(Client::new(ClientConfig {
            endpoint: config.endpoint.clone().unwrap_or_default(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            model: config.model.clone(),
            mode: config.request_mode,
            retry: config.retry,
            timeout: Duration::from_secs(config.timeout_secs),
        })?)
    };
    let counters = Counters {
        hits: AtomicUsize::new(0),
        misses: AtomicUsize::new(0),
    };
    info!(
        "{} documents, {} {} n={}, cache {}",
        docs.len(),
        config.variant,
        config.strategy,
        config.n_samples,
        cache_file.display()
    );

    let fetched: Vec<Fetched> = stream::iter(docs.iter())
        .map(|doc| fetch_document(doc, config, &prompts, &cache, client.as_ref(), &counters))
        .buffered(config.in_flight)
        .try_collect()
        .await?;

    let mut summary = RunSummary {
        attempted: docs.len(),
        skipped_corpus_lines: loaded.skipped.len(),
        corrupt_cache_lines: cache.corrupt_lines(),
        ..RunSummary::default()
    };
    let mut scores = Vec::new();
    for (doc, fetched) in docs.iter().zip(fetched) {
        let samples = match fetched {
            Fetched::Samples(s) => s,
            Fetched::Errored(reason) => {
                summary.errors.push(DocError {
                    doc_id: doc.id.clone(),
                    reason,
                });
                continue;
            }
        };
        let (failed, usable): (Vec<RawSample>, Vec<RawSample>) = samples.into_iter().partition(RawSample::is_failed);
        summary.failed_samples += failed.len();
        if usable.is_empty() {
            summary.errors.push(DocError {
                doc_id: doc.id.clone(),
                reason: "every sample request failed".to_string(),
            });
            continue;
        }
        let parsed: Vec<_> = usable
            .iter()
            .map(|raw| parse_sample(&raw.text, config.prefill).with_perplexity(perplexity_with(raw, config.perplexity)))
            .collect();
        summary.parse_fallbacks += parsed.iter().filter(|p| p.fallback).count();
        let prediction = predict(&parsed, doc, config.strategy);
        scores.extend(score_document(&doc.id, &prediction, &partition_gold(doc), config.empty_gold));
        summary.processed += 1;
    }
    summary.errored = summary.errors.len();
    summary.cache_hits = counters.hits.load(Ordering::Relaxed);
    summary.cache_misses = counters.misses.load(Ordering::Relaxed);
    if let Some(client) = &client {
        summary.retries = client.retries();
        summary.requests = client.requests();
    }
    summary.wall_time = started.elapsed();

    let report = MetricReport::from_scores(&config.corpus_label(), config.variant.name(), config.strategy.name(), &scores);
    if let Some(out) = &config.out {
        write_report(out, std::slice::from_ref(&report), std::slice::from_ref(config))?;
    }
    Ok(RunOutput { report, summary })
}

/// Sidecar path holding the configurations behind a report.
pub fn provenance_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".config.json");
    out.with_file_name(name)
}

fn write_report(out: &Path, reports: &[MetricReport], configs: &[RunConfig]) -> Result<(), HarnessError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(out, reports_to_csv(reports)).map_err(io_err(out))?;
    let side = provenance_path(out);
    let json = serde_json::to_string_pretty(&serde_json::json!({ "runs": configs })).expect("config serializes");
    fs::write(&side, json + "\n").map_err(io_err(&side))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    defaults: toml::Table,
    /// Combined CSV of every run.
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    run: Vec<toml::Table>,
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub runs: Vec<RunConfig>,
    pub out: Option<PathBuf>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl GridSpec {
    /// Parses a grid file: `[defaults]` merged under every `[[run]]` table.
    /// Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let file: GridFile = toml::from_str(text).map_err(|e| HarnessError::Config(format!("grid file: {e}")))?;
        let mut runs = Vec::with_capacity(file.run.len());
        for (i, table) in file.run.into_iter().enumerate() {
            let mut merged = file.defaults.clone();
            merged.extend(table);
            let mut config: RunConfig = toml::Value::Table(merged)
                .try_into()
                .map_err(|e| HarnessError::Config(format!("grid run {}: {e}", i + 1)))?;
            resolve(base, &mut config.corpus);
            resolve(base, &mut config.cache_dir);
            for p in [&mut config.out, &mut config.prompts].into_iter().flatten() {
                resolve(base, p);
            }
            runs.push(config);
        }
        let mut out = file.out;
        if let Some(p) = &mut out {
            resolve(base, p);
        }
        Ok(GridSpec { runs, out })
    }

    /// Rejects empty grids, invalid runs and clashing output files before
    /// anything executes.
    pub fn check(&self) -> Result<(), HarnessError> {
        if self.runs.is_empty() {
            return Err(HarnessError::Config("grid has no runs".into()));
        }
        let mut seen: HashSet<PathBuf> = HashSet::new();
        let outs = self.runs.iter().filter_map(|r| r.out.as_ref()).chain(self.out.as_ref());
        for out in outs {
            if !seen.insert(out.clone()) || !seen.insert(provenance_path(out)) {
                return Err(HarnessError::Config(format!("output path {} used more than once", out.display())));
            }
        }
        for (i, run) in self.runs.iter().enumerate() {
            run.validate()
                .map_err(|e| HarnessError::Config(format!("grid run {}: {e}", i + 1)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub reports: Vec<MetricReport>,
    pub summaries: Vec<RunSummary>,
}

/// Runs every configuration in order. Runs that share corpus, variant and
/// model share a cache file, so repeated prompts are fetched once.
pub fn grid(spec: &GridSpec) -> Result<GridOutput, HarnessError> {
    spec.check()?;
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    for config in &spec.runs {
        let out = run(config)?;
        reports.push(out.report);
        summaries.push(out.summary);
    }
    if let Some(out) = &spec.out {
        write_report(out, &reports, &spec.runs)?;
    }
    Ok(GridOutput { reports, summaries })
}
