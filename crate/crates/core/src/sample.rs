//! Raw completions, perplexity and keyphrase-list parsing.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One completion as returned by the endpoint (or replayed from cache).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub doc_id: String,
    pub prompt_hash: String,
    pub sample_index: usize,
    pub text: String,
    /// Natural-log probability of each generated token.
    #[serde(default)]
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: String,
}

/// `finish_reason` recorded for a sample whose request failed after retries.
pub const FINISH_FAILED: &str = "request_failed";

impl RawSample {
    pub fn is_failed(&self) -> bool {
        self.finish_reason == FINISH_FAILED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Perplexity {
    Known(f64),
    Unknown,
}

impl Perplexity {
    pub fn value(self) -> Option<f64> {
        match self {
            Perplexity::Known(v) => Some(v),
            Perplexity::Unknown => None,
        }
    }

    /// Ranking order: ascending known values, unknown after all of them.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Perplexity::Known(a), Perplexity::Known(b)) => a.total_cmp(b),
            (Perplexity::Known(_), Perplexity::Unknown) => Ordering::Less,
            (Perplexity::Unknown, Perplexity::Known(_)) => Ordering::Greater,
            (Perplexity::Unknown, Perplexity::Unknown) => Ordering::Equal,
        }
    }
}

impl From<Option<f64>> for Perplexity {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Perplexity::Unknown, Perplexity::Known)
    }
}

/// How token log-likelihoods are reduced before exponentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerplexityMode {
    /// exp of the mean negative log-likelihood.
    #[default]
    Mean,
    /// exp of the summed negative log-likelihood.
    Sum,
}

impl FromStr for PerplexityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(PerplexityMode::Mean),
            "sum" => Ok(PerplexityMode::Sum),
            _ => Err(format!("unknown perplexity mode {s:?} (expected mean|sum)")),
        }
    }
}

impl fmt::Display for PerplexityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerplexityMode::Mean => "mean",
            PerplexityMode::Sum => "sum",
        })
    }
}

pub fn perplexity_from_logprobs(logprobs: &[f64], mode: PerplexityMode) -> Perplexity {
    if logprobs.is_empty() {
        return Perplexity::Unknown;
    }
    let nll: f64 = -logprobs.iter().sum::<f64>();
    match mode {
        PerplexityMode::Mean => Perplexity::Known((nll / logprobs.len() as f64).exp()),
        PerplexityMode::Sum => Perplexity::Known(nll.exp()),
    }
}

/// exp(-mean(token_logprobs)); unknown without log-probabilities.
pub fn perplexity(sample: &RawSample) -> Perplexity {
    perplexity_with(sample, PerplexityMode::Mean)
}

pub fn perplexity_with(sample: &RawSample, mode: PerplexityMode) -> Perplexity {
    match &sample.token_logprobs {
        Some(lp) => perplexity_from_logprobs(lp, mode),
        None => Perplexity::Unknown,
    }
}

/// A completion parsed into its ordered keyphrase list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedSample {
    pub phrases: Vec<String>,
    pub perplexity: Perplexity,
    /// No list structure was found, or nothing could be extracted.
    pub fallback: bool,
}

impl ParsedSample {
    pub fn new(phrases: Vec<String>, perplexity: Perplexity) -> Self {
        Self {
            phrases,
            perplexity,
            fallback: false,
        }
    }

    pub fn with_perplexity(mut self, perplexity: Perplexity) -> Self {
        self.perplexity = perplexity;
        self
    }
}

fn is_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '`' | '\u{201c}' | '\u{201d}' | '\u{2018}' | '\u{2019}')
}

fn closing_quote(open: char) -> char {
    match open {
        '\u{201c}' => '\u{201d}',
        '\u{2018}' => '\u{2019}',
        c => c,
    }
}

fn clean_item(item: &str) -> Option<String> {
    let trimmed = item.trim_matches(|c: char| c.is_whitespace() || is_quote(c) || c == '[' || c == ']');
    (!trimmed.is_empty()).then(|| trimmed.to_string())
}

/// Splits the body of a list literal (text after its opening `[`) into items,
/// stopping at the first unmatched `]`.
fn split_list_body(body: &str) -> Vec<String> {
    let chars: Vec<char> = body.chars().collect();
    let mut items = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    let mut depth = 0usize;
    let mut was_quoted = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if let Some(close) = quote {
            if c == '\\' && i + 1 < chars.len() {
                current.push(chars[i + 1]);
                i += 2;
                continue;
            }
            if c == close {
                // an apostrophe inside the item does not end it
                let next = chars[i + 1..].iter().find(|c| !c.is_whitespace() || **c == '\n');
                if matches!(next, None | Some(',') | Some(']') | Some('\n')) {
                    quote = None;
                    i += 1;
                    continue;
                }
            }
            current.push(c);
            i += 1;
            continue;
        }
        match c {
            q if is_quote(q) && current.trim().is_empty() => {
                current.clear();
                was_quoted = true;
                quote = Some(closing_quote(q));
            }
            '[' => {
                depth += 1;
                current.push(c);
            }
            ']' if depth == 0 => break,
            ']' => {
                depth -= 1;
                current.push(c);
            }
            ',' | '\n' if depth == 0 => {
                items.extend(finish_item(&current, was_quoted));
                current.clear();
                was_quoted = false;
            }
            _ => current.push(c),
        }
        i += 1;
    }
    items.extend(finish_item(&current, was_quoted));
    items
}

/// Quoted items keep inner quotes and brackets; only whitespace is trimmed.
fn finish_item(item: &str, was_quoted: bool) -> Option<String> {
    if was_quoted {
        let trimmed = item.trim();
        (!trimmed.is_empty()).then(|| trimmed.to_string())
    } else {
        clean_item(item)
    }
}

/// Parses a completion into keyphrases.
///
/// With `had_prefill` the completion continues an assistant turn that already
/// opened the list with `[`. The first list literal is read up to its closing
/// bracket (or end of text); text without any list structure falls back to
/// comma/newline splitting. Never fails; perplexity is left unknown.
pub fn parse_sample(raw_text: &str, had_prefill: bool) -> ParsedSample {
    let text = if had_prefill && !raw_text.trim_start().starts_with('[') {
        format!("[{raw_text}")
    } else {
        raw_text.to_string()
    };
    let (phrases, structured) = match text.find('[') {
        Some(start) => (split_list_body(&text[start + 1..]), true),
        None => (
            text.split([',', '\n']).filter_map(clean_item).collect::<Vec<_>>(),
            false,
        ),
    };
    ParsedSample {
        fallback: !structured || phrases.is_empty(),
        phrases,
        perplexity: Perplexity::Unknown,
    }
}
