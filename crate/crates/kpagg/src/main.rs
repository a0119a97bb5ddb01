use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kpagg::client::{RequestMode, RetryPolicy};
use kpagg::harness::ENDPOINT_ENV;
use kpagg::mock::{Fixture, MockServer};
use kpagg::{GridSpec, RunConfig};
use kpagg_core::corpus::{corpus_stats, load_corpus};
use kpagg_core::metrics::{render_table, EmptyGoldPolicy};
use kpagg_core::sample::PerplexityMode;
use kpagg_core::{AggregationStrategy, Domain, PromptVariant};

/// Zero-shot keyphrase generation with multi-sample aggregation.
///
/// The API key is read from KPAGG_API_KEY only.
#[derive(Parser)]
#[command(name = "kpagg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample, aggregate and score one configuration.
    Run(RunArgs),
    /// Print corpus statistics.
    Stats(StatsArgs),
    /// Execute every run of a TOML grid file and print one merged table.
    Grid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the fixture-driven mock chat-completions endpoint.
    Mock {
        /// JSON fixture; without one every reply is synthesized.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long, default_value_t = 8089)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Label used in reports and cache paths (default: corpus file stem).
    #[arg(long)]
    corpus_name: Option<String>,
    /// baseline | present | absent | order | length | combined
    #[arg(long, default_value = "baseline")]
    variant: PromptVariant,
    /// single | union | union-concat | union-interleaf | frequency
    #[arg(long, visible_alias = "strategy", default_value = "single")]
    aggregate: AggregationStrategy,
    #[arg(long, default_value_t = 10)]
    n_samples: usize,
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    #[arg(long, default_value_t = 500)]
    max_tokens: u32,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    #[arg(long)]
    limit: Option<usize>,
    /// Chooses the --limit subset. A remote model stays nondeterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "cache")]
    cache_dir: PathBuf,
    /// CSV report; a .config.json with the run configuration is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// exclude | zero
    #[arg(long, default_value = "exclude")]
    empty_gold: EmptyGoldPolicy,
    /// Open the assistant turn with "[" for the model to continue.
    #[arg(long)]
    prefill: bool,
    /// multi (one n-choice request) | single (n one-choice requests)
    #[arg(long, default_value = "multi")]
    request_mode: RequestMode,
    /// mean | sum
    #[arg(long, default_value = "mean")]
    perplexity: PerplexityMode,
    #[arg(long, default_value_t = 4)]
    in_flight: usize,
    /// Never touch the network; uncached documents are reported as errored.
    #[arg(long)]
    offline: bool,
    #[arg(long, default_value_t = RetryPolicy::default().max_retries)]
    max_retries: u32,
    #[arg(long, default_value_t = RetryPolicy::default().base_delay_ms)]
    retry_base_ms: u64,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// TOML file overriding the bundled prompt strings.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Domain for records without one: scientific | news
    #[arg(long, default_value = "scientific")]
    domain: Domain,
}

impl RunArgs {
    fn into_config(self) -> RunConfig {
        RunConfig {
            corpus: self.corpus,
            corpus_name: self.corpus_name,
            variant: self.variant,
            strategy: self.aggregate,
            n_samples: self.n_samples,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            model: self.model,
            endpoint: self.endpoint,
            limit: self.limit,
            seed: self.seed,
            cache_dir: self.cache_dir,
            empty_gold: self.empty_gold,
            out: self.out,
            prefill: self.prefill,
            request_mode: self.request_mode,
            perplexity: self.perplexity,
            in_flight: self.in_flight,
            offline: self.offline,
            retry: RetryPolicy {
                max_retries: self.max_retries,
                base_delay_ms: self.retry_base_ms,
                ..RetryPolicy::default()
            },
            timeout_secs: self.timeout_secs,
            prompts: self.prompts,
            domain: self.domain,
        }
    }
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    limit: Option<usize>,
    /// Emit CSV instead of a table.
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let config = args.into_config();
            let out = kpagg::run(&config)?;
            print!("{}", render_table(std::slice::from_ref(&out.report)));
            eprintln!("{}", out.summary.render());
            for e in &out.summary.errors {
                eprintln!("  {}: {}", e.doc_id, e.reason);
            }
        }
        Command::Stats(args) => {
            let loaded = load_corpus(&args.corpus, args.limit, Domain::Scientific)?;
            if !loaded.skipped.is_empty() {
                eprintln!("skipped {} malformed or duplicate records", loaded.skipped.len());
            }
            let stats = corpus_stats(&loaded.documents)?;
            print!("{}", if args.csv { stats.to_csv() } else { stats.to_table() });
        }
        Command::Grid { config } => {
            let spec = GridSpec::load(&config)?;
            let out = kpagg::grid(&spec)?;
            print!("{}", render_table(&out.reports));
            for (run, summary) in spec.runs.iter().zip(&out.summaries) {
                eprintln!("[{} / {}]\n{}", run.variant, run.strategy, summary.render());
            }
        }
        Command::Mock { fixture, port, seed } => {
            let fixture = match fixture {
                Some(path) => Fixture::load(&path).with_context(|| format!("reading fixture {}", path.display()))?,
                None => Fixture::default(),
            };
            let server = MockServer::bind(fixture, seed, SocketAddr::from(([127, 0, 0, 1], port)))
                .with_context(|| format!("binding port {port}"))?;
            println!("mock endpoint listening on {}", server.url());
            server.wait();
        }
    }
    Ok(())
}
