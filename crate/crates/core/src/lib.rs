//! Zero-shot keyphrase generation pipeline.
//!
//! The crate covers everything that does not touch the network:
//!
//! * [`textnorm`]: tokenization, Porter stemming, phrase normalization and the
//!   token-sequence presence test shared by gold and predicted keyphrases.
//! * [`corpus`]: JSON-lines benchmark loading, present/absent gold partitioning
//!   and descriptive statistics.
//! * [`prompting`]: the six prompt variants rendered into chat messages.
//! * [`sample`]: raw completions, perplexity and keyphrase-list parsing.
//! * [`aggregation`]: perplexity ranking, the four multi-sample aggregation
//!   strategies and dynamic keyphrase-number selection.
//! * [`metrics`]: F1@M, F1@5, R@10, R@Inf and macro averaging.

pub mod aggregation;
pub mod corpus;
pub mod metrics;
pub mod prompting;
pub mod sample;
pub mod textnorm;

pub use aggregation::{predict, AggregationStrategy, Prediction, SampleSet};
pub use corpus::{Document, Domain, GoldPartition};
pub use metrics::{MetricReport, Partition};
pub use prompting::{build_prompt, PromptConfig, PromptVariant, RenderedPrompt};
pub use sample::{parse_sample, perplexity, ParsedSample, Perplexity, RawSample};
pub use textnorm::NormalizedPhrase;
