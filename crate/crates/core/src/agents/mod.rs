//! Agent backends and profile assembly.
//!
//! Scripted backends implement simple allocation doctrines deterministically
//! and are what the verifiable experiments run on. The replay backend feeds
//! stored texts back in order. The chat backend talks to any
//! OpenAI-compatible chat-completions endpoint.

pub mod chat;
pub mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chat::{ChatBackend, ChatBackendConfig, InFlightLimiter};
pub use scripted::{
    biased_allocation, rawlsian_allocation, utilitarian_allocation, DisfavorRule, ScriptedAgent, ScriptedPolicy,
};

use crate::arena::InteractionHistory;
use crate::model::{AgentProfile, BiasSource, Cohort, Framework, ProfileKind};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("replay backend exhausted after {available} text(s)")]
    Exhausted { available: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Debate participant labels. A is the aligned agent, B the baseline
/// opponent and C the biased opponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentId {
    A,
    B,
    C,
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AgentId::A => "A",
            AgentId::B => "B",
            AgentId::C => "C",
        };
        f.write_str(s)
    }
}

/// Everything a backend may look at when producing a response.
pub struct GenerateRequest<'a> {
    pub agent: AgentId,
    pub prompt: &'a str,
    pub cohort: &'a Cohort,
    pub history: &'a InteractionHistory,
    pub round: usize,
}

pub trait AgentBackend: Send {
    fn id(&self) -> String;

    /// Whether identical requests always produce identical text.
    fn deterministic(&self) -> bool;

    fn generate(&mut self, request: &GenerateRequest<'_>) -> Result<String, AgentError>;
}

/// Returns stored texts in order, one per call.
#[derive(Debug, Clone)]
pub struct ReplayAgent {
    label: String,
    texts: Vec<String>,
    next: usize,
}

impl ReplayAgent {
    pub fn new(label: impl Into<String>, texts: Vec<String>) -> Self {
        ReplayAgent {
            label: label.into(),
            texts,
            next: 0,
        }
    }

    pub fn calls(&self) -> usize {
        self.next
    }
}

impl AgentBackend for ReplayAgent {
    fn id(&self) -> String {
        format!("replay:{}", self.label)
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn generate(&mut self, _request: &GenerateRequest<'_>) -> Result<String, AgentError> {
        let text = self.texts.get(self.next).cloned().ok_or(AgentError::Exhausted {
            available: self.texts.len(),
        })?;
        self.next += 1;
        Ok(text)
    }
}

/// System texts that condition each profile kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTexts {
    pub preambles: BTreeMap<Framework, String>,
    pub baseline: String,
    /// Loaded only from an explicitly supplied file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<String>,
}

impl Default for ProfileTexts {
    fn default() -> Self {
        let preambles = [
            (
                Framework::Utilitarian,
                include_str!("../../data/prompts/utilitarian.txt"),
            ),
            (Framework::Rawlsian, include_str!("../../data/prompts/rawlsian.txt")),
            (
                Framework::Egalitarian,
                include_str!("../../data/prompts/egalitarian.txt"),
            ),
            (
                Framework::Libertarian,
                include_str!("../../data/prompts/libertarian.txt"),
            ),
            (
                Framework::Prioritarian,
                include_str!("../../data/prompts/prioritarian.txt"),
            ),
            (
                Framework::CareEthics,
                include_str!("../../data/prompts/care_ethics.txt"),
            ),
        ]
        .into_iter()
        .map(|(f, t)| (f, t.trim().to_string()))
        .collect();
        ProfileTexts {
            preambles,
            baseline: include_str!("../../data/prompts/baseline.txt").trim().to_string(),
            adversarial: None,
        }
    }
}

fn read(path: &Path) -> Result<String, AgentError> {
    std::fs::read_to_string(path).map_err(|e| AgentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

impl ProfileTexts {
    /// Overrides the bundled texts with `<framework>.txt` and `baseline.txt`
    /// files found in `dir`.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Self, AgentError> {
        for f in Framework::ALL {
            let p = dir.join(format!("{}.txt", f.name()));
            if p.exists() {
                self.preambles.insert(f, read(&p)?.trim().to_string());
            }
        }
        let b = dir.join("baseline.txt");
        if b.exists() {
            self.baseline = read(&b)?.trim().to_string();
        }
        Ok(self)
    }

    /// Loads the adversarial prompt byte-for-byte.
    pub fn with_adversarial_file(mut self, path: &Path) -> Result<Self, AgentError> {
        self.adversarial = Some(read(path)?);
        Ok(self)
    }
}

/// Builds a validated profile and its system text.
pub fn build_profile(
    kind: ProfileKind,
    framework: Option<Framework>,
    retrieval: bool,
    bias_source: BiasSource,
    texts: &ProfileTexts,
) -> Result<(AgentProfile, String), AgentError> {
    let profile = AgentProfile {
        kind,
        framework,
        retrieval_enabled: retrieval,
        bias_source,
    };
    profile.validate().map_err(|e| AgentError::Config(e.to_string()))?;
    let text = match kind {
        ProfileKind::Aligned => {
            let f = framework.expect("validated aligned profile has a framework");
            texts
                .preambles
                .get(&f)
                .cloned()
                .ok_or_else(|| AgentError::Config(format!("no preamble for {f}")))?
        }
        ProfileKind::Baseline => texts.baseline.clone(),
        ProfileKind::Biased => match bias_source {
            BiasSource::AdversarialPrompt => texts
                .adversarial
                .clone()
                .ok_or_else(|| AgentError::Config("adversarial prompt file was not supplied".into()))?,
            _ => texts.baseline.clone(),
        },
    };
    Ok((profile, text))
}
