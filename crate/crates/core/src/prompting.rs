//! Prompt construction for the six prompt variants.
//!
//! Every variant shares one layout: a system message, and a user message made
//! of the user prompt sentence, the instruction block, the title and the
//! abstract. Specialist variants swap the user prompt sentence; control
//! variants turn the instruction block into a numbered list. Chat-template
//! wrapping is left to the serving endpoint.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Document, Domain};

/// Bundled defaults, the same file that ships as `crates/core/prompts.toml`.
pub const DEFAULT_PROMPTS_TOML: &str = include_str!("../prompts.toml");

pub const PRESENT_SPECIALIST_PROMPT: &str =
    "Extract present keyphrases from the following title and abstract of a scientific document.";
pub const ABSENT_SPECIALIST_PROMPT: &str =
    "Generate absent keyphrases from the following title and abstract of a scientific document.";

const SCIENTIFIC: &str = "scientific document";
const NEWS: &str = "news article";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read prompt configuration {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid prompt configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("prompt configuration key {0:?} is empty")]
    EmptyKey(&'static str),
}

/// The editable prompt strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub system_prompt: String,
    pub user_prompt_baseline: String,
    pub instruction_formatting: String,
    pub instruction_order: String,
    pub instruction_length: String,
}

impl PromptConfig {
    /// Parses a TOML document; every key is required and must be nonempty.
    pub fn from_toml_str(text: &str) -> Result<Self, PromptError> {
        let config: PromptConfig = toml::from_str(text)?;
        let keys = [
            ("system_prompt", &config.system_prompt),
            ("user_prompt_baseline", &config.user_prompt_baseline),
            ("instruction_formatting", &config.instruction_formatting),
            ("instruction_order", &config.instruction_order),
            ("instruction_length", &config.instruction_length),
        ];
        for (key, value) in keys {
            if value.trim().is_empty() {
                return Err(PromptError::EmptyKey(key));
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_PROMPTS_TOML).expect("bundled prompt configuration is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    Baseline,
    #[serde(rename = "present")]
    PresentSpecialist,
    #[serde(rename = "absent")]
    AbsentSpecialist,
    #[serde(rename = "order")]
    OrderControl,
    #[serde(rename = "length")]
    LengthControl,
    #[serde(rename = "combined")]
    CombinedControl,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 6] = [
        PromptVariant::Baseline,
        PromptVariant::PresentSpecialist,
        PromptVariant::AbsentSpecialist,
        PromptVariant::OrderControl,
        PromptVariant::LengthControl,
        PromptVariant::CombinedControl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptVariant::Baseline => "baseline",
            PromptVariant::PresentSpecialist => "present",
            PromptVariant::AbsentSpecialist => "absent",
            PromptVariant::OrderControl => "order",
            PromptVariant::LengthControl => "length",
            PromptVariant::CombinedControl => "combined",
        }
    }

    fn user_prompt(self, config: &PromptConfig) -> &str {
        match self {
            PromptVariant::PresentSpecialist => PRESENT_SPECIALIST_PROMPT,
            PromptVariant::AbsentSpecialist => ABSENT_SPECIALIST_PROMPT,
            _ => &config.user_prompt_baseline,
        }
    }

    fn instruction(self, config: &PromptConfig) -> String {
        let items: Vec<&str> = match self {
            PromptVariant::OrderControl => vec![&config.instruction_order, &config.instruction_formatting],
            PromptVariant::LengthControl => vec![&config.instruction_length, &config.instruction_formatting],
            PromptVariant::CombinedControl => vec![
                &config.instruction_length,
                &config.instruction_order,
                &config.instruction_formatting,
            ],
            _ => return config.instruction_formatting.clone(),
        };
        items
            .iter()
            .enumerate()
            .map(|(i, item)| format!("{}. {item}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown prompt variant {s:?} (expected baseline|present|absent|order|length|combined)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    /// `"["` when the endpoint accepts a partial assistant turn, else empty.
    pub assistant_prefill: String,
    pub prompt_hash: String,
}

fn for_domain(text: &str, domain: Domain) -> String {
    match domain {
        Domain::Scientific => text.to_string(),
        Domain::News => text.replace(SCIENTIFIC, NEWS),
    }
}

/// Renders `variant` for `doc`.
///
/// Domain substitution applies to the prompt strings only; the document's
/// own title and body are inserted verbatim.
pub fn build_prompt(doc: &Document, variant: PromptVariant, prefill_supported: bool, config: &PromptConfig) -> RenderedPrompt {
    let system = for_domain(&config.system_prompt, doc.domain);
    let user_prompt = for_domain(variant.user_prompt(config), doc.domain);
    let instruction = for_domain(&variant.instruction(config), doc.domain);
    let user = format!(
        "{user_prompt}\n\n{instruction}\n\nTitle: {}\nAbstract: {}",
        doc.title, doc.body
    );
    let assistant_prefill = if prefill_supported { "[" } else { "" }.to_string();
    let prompt_hash = prompt_digest(&system, &user, &assistant_prefill);
    RenderedPrompt {
        system,
        user,
        assistant_prefill,
        prompt_hash,
    }
}

/// SHA-256 over the length-prefixed fields, lowercase hex (64 chars).
pub fn prompt_digest(system: &str, user: &str, assistant_prefill: &str) -> String {
    let mut hasher = Sha256::new();
    for field in [system, user, assistant_prefill] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    hex::encode(hasher.finalize())
}

impl RenderedPrompt {
    pub fn digest(&self) -> String {
        prompt_digest(&self.system, &self.user, &self.assistant_prefill)
    }
}
