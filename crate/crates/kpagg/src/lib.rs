//! Keyphrase generation harness around `kpagg-core`: an OpenAI-compatible
//! sampling client, a replay cache, a mock endpoint and the run/grid drivers
//! behind the `kpagg` binary.

pub mod cache;
pub mod client;
pub mod harness;
pub mod mock;

pub use harness::{grid, run, GridSpec, HarnessError, RunConfig, RunOutput, RunSummary};
