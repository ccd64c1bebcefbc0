//! The debate protocol: prompt assembly, round sequencing, proposal
//! parsing, history, final allocations and emergence measurement.

mod parse;
mod prompt;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use parse::{parse_allocation, render_allocation, ParseError, ParsedAllocation};
pub use prompt::{build_prompt, render_cohort, render_history, FORMAT_REMINDER, OUTPUT_FORMAT};

use crate::agents::{AgentBackend, AgentId, GenerateRequest};
use crate::metrics::{metric_report, Metric, MetricConfig, MetricError, MetricReport};
use crate::model::{
    column_totals, validate_allocation, AgentProfile, Allocation, Cohort, FeasibilityResult, Framework, ModelError,
    ProfileKind,
};
use crate::retrieval::{retrieve, Embedder, QueryTemplates, RetrievalLog, VectorIndex};

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("debate needs at least one round")]
    NoRounds,
    #[error("invalid profile for agent {agent}: {source}")]
    Profile { agent: AgentId, source: ModelError },
    #[error("invalid cohort: {0}")]
    Cohort(#[from] ModelError),
    #[error("metric computation failed: {0}")]
    Metric(#[from] MetricError),
    #[error("transcript has no final allocation for agent {0}")]
    MissingFinal(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentKind {
    Baseline,
    Biased,
}

impl OpponentKind {
    pub fn agent_id(self) -> AgentId {
        match self {
            OpponentKind::Baseline => AgentId::B,
            OpponentKind::Biased => AgentId::C,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateConfig {
    pub rounds: usize,
    /// When true agent A speaks first in every round.
    pub a_first: bool,
    pub max_parse_retries: usize,
    pub framework: Framework,
    pub opponent: OpponentKind,
    pub top_k: usize,
    #[serde(default)]
    pub query_templates: QueryTemplates,
    #[serde(default)]
    pub metrics: MetricConfig,
}

impl DebateConfig {
    pub fn new(framework: Framework, opponent: OpponentKind) -> Self {
        DebateConfig {
            rounds: 3,
            a_first: true,
            max_parse_retries: 1,
            framework,
            opponent,
            top_k: crate::retrieval::DEFAULT_TOP_K,
            query_templates: QueryTemplates::default(),
            metrics: MetricConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub agent: AgentId,
    pub round: usize,
    pub allocation: Allocation,
    pub justification: String,
    pub feasibility: FeasibilityResult,
    pub parse_warnings: Vec<String>,
    /// Backend calls needed to obtain a parsable reply.
    pub attempts: usize,
    pub raw_text: String,
    pub prompt_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub round: usize,
    pub agent: AgentId,
    pub log: RetrievalLog,
}

/// Append-only record of the debate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionHistory {
    pub proposals: Vec<Proposal>,
    pub retrieval_logs: Vec<RetrievalRecord>,
}

impl InteractionHistory {
    pub fn last_of(&self, agent: AgentId) -> Option<&Proposal> {
        self.proposals.iter().rev().find(|p| p.agent == agent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub agent: AgentId,
    pub profile: AgentProfile,
    pub backend: String,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum DebateStatus {
    Completed,
    Failed {
        agent: AgentId,
        round: usize,
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        raw_text: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub agent: AgentId,
    pub allocation: Allocation,
    pub feasibility: FeasibilityResult,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub cohort_id: u64,
    pub cohort: Cohort,
    pub config: DebateConfig,
    pub agents: Vec<AgentRecord>,
    pub history: InteractionHistory,
    pub status: DebateStatus,
    pub finals: Vec<FinalRecord>,
    /// Present only when a backend is nondeterministic, so scripted runs
    /// stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Timestamps>,
}

impl DebateTranscript {
    pub fn is_completed(&self) -> bool {
        self.status == DebateStatus::Completed
    }

    pub fn final_of(&self, agent: AgentId) -> Option<&FinalRecord> {
        self.finals.iter().find(|f| f.agent == agent)
    }

    pub fn opponent(&self) -> AgentId {
        self.config.opponent.agent_id()
    }
}

/// One side of the debate.
pub struct Participant {
    pub agent: AgentId,
    pub profile: AgentProfile,
    pub system_text: String,
    pub backend: Box<dyn AgentBackend>,
}

/// Corpus access for agents whose profile enables retrieval.
pub struct RetrievalContext<'a> {
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

enum TurnOutcome {
    Proposal(Box<Proposal>),
    Failed { reason: String, raw: Option<String> },
}

fn take_turn(
    cohort: &Cohort,
    who: &mut Participant,
    history: &mut InteractionHistory,
    config: &DebateConfig,
    retrieval: Option<&RetrievalContext<'_>>,
    round: usize,
) -> Result<TurnOutcome, ArenaError> {
    let uses_retrieval = who.profile.retrieval_enabled && who.profile.kind != ProfileKind::Baseline;
    let retrieved = match (uses_retrieval, retrieval) {
        (true, Some(ctx)) => {
            let framework = who.profile.framework.unwrap_or(config.framework);
            let query = config.query_templates.query(framework, round);
            match retrieve(ctx.index, ctx.embedder, &query, config.top_k) {
                Ok(r) => {
                    history.retrieval_logs.push(RetrievalRecord {
                        round,
                        agent: who.agent,
                        log: r.log(),
                    });
                    Some(r)
                }
                Err(e) => {
                    return Ok(TurnOutcome::Failed {
                        reason: format!("retrieval failed: {e}"),
                        raw: None,
                    })
                }
            }
        }
        _ => None,
    };
    let base_prompt = build_prompt(
        &who.profile,
        &who.system_text,
        who.agent,
        cohort,
        history,
        retrieved.as_ref(),
        round,
        config.rounds,
    );

    let mut prompt = base_prompt.clone();
    let mut last_raw = None;
    for attempt in 0..=config.max_parse_retries {
        let request = GenerateRequest {
            agent: who.agent,
            prompt: &prompt,
            cohort,
            history,
            round,
        };
        let raw = match who.backend.generate(&request) {
            Ok(t) => t,
            Err(e) => {
                return Ok(TurnOutcome::Failed {
                    reason: format!("backend error: {e}"),
                    raw: last_raw,
                })
            }
        };
        match parse_allocation(&raw, cohort.len()) {
            Ok(parsed) => {
                let feasibility = validate_allocation(&parsed.allocation, &cohort.capacity, cohort.len())?;
                return Ok(TurnOutcome::Proposal(Box::new(Proposal {
                    agent: who.agent,
                    round,
                    allocation: parsed.allocation,
                    justification: parsed.justification,
                    feasibility,
                    parse_warnings: parsed.warnings,
                    attempts: attempt + 1,
                    raw_text: raw,
                    prompt_sha256: sha256_hex(&prompt),
                })));
            }
            Err(_) => {
                tracing::warn!(agent = %who.agent, round, attempt, "unparsable reply");
                last_raw = Some(raw);
                prompt = format!("{base_prompt}\n{FORMAT_REMINDER}\n");
            }
        }
    }
    Ok(TurnOutcome::Failed {
        reason: format!(
            "no parsable allocation after {} attempt(s)",
            config.max_parse_retries + 1
        ),
        raw: last_raw,
    })
}

/// Runs `config.rounds` rounds; each round both agents speak once in the
/// configured order, seeing everything appended so far. Infeasible
/// proposals are recorded as they are. A backend or parse failure stops the
/// debate and is recorded in the transcript status.
pub fn run_debate(
    cohort: &Cohort,
    agent_a: &mut Participant,
    opponent: &mut Participant,
    config: &DebateConfig,
    retrieval: Option<&RetrievalContext<'_>>,
) -> Result<DebateTranscript, ArenaError> {
    if config.rounds == 0 {
        return Err(ArenaError::NoRounds);
    }
    cohort.validate()?;
    for p in [&*agent_a, &*opponent] {
        p.profile
            .validate()
            .map_err(|source| ArenaError::Profile { agent: p.agent, source })?;
    }
    let timed = !(agent_a.backend.deterministic() && opponent.backend.deterministic());
    let started = timed.then(now_ms);

    let agents = [&*agent_a, &*opponent]
        .iter()
        .map(|p| AgentRecord {
            agent: p.agent,
            profile: p.profile.clone(),
            backend: p.backend.id(),
            deterministic: p.backend.deterministic(),
        })
        .collect();

    let mut history = InteractionHistory::default();
    let mut status = DebateStatus::Completed;
    'rounds: for round in 1..=config.rounds {
        let order: [&mut Participant; 2] = if config.a_first {
            [&mut *agent_a, &mut *opponent]
        } else {
            [&mut *opponent, &mut *agent_a]
        };
        for who in order {
            match take_turn(cohort, who, &mut history, config, retrieval, round)? {
                TurnOutcome::Proposal(p) => history.proposals.push(*p),
                TurnOutcome::Failed { reason, raw } => {
                    status = DebateStatus::Failed {
                        agent: who.agent,
                        round,
                        reason,
                        raw_text: raw,
                    };
                    break 'rounds;
                }
            }
        }
    }

    let mut finals = Vec::new();
    if status == DebateStatus::Completed {
        for agent in [agent_a.agent, opponent.agent] {
            let p = history.last_of(agent).ok_or(ArenaError::MissingFinal(agent))?;
            finals.push(FinalRecord {
                agent,
                allocation: p.allocation.clone(),
                feasibility: p.feasibility.clone(),
                metrics: metric_report(cohort, &p.allocation, &config.metrics)?,
            });
        }
    }

    Ok(DebateTranscript {
        cohort_id: cohort.cohort_id,
        cohort: cohort.clone(),
        config: config.clone(),
        agents,
        history,
        status,
        finals,
        timestamps: started.map(|s| Timestamps {
            started_unix_ms: s,
            finished_unix_ms: now_ms(),
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointRule {
    /// Both finals agree within 1e-9.
    Converged,
    /// Elementwise mean, with over-capacity columns scaled down.
    MeanRescaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAllocation {
    pub allocation: Allocation,
    pub rule: JointRule,
    pub rescaled_columns: Vec<usize>,
    pub feasible: bool,
}

/// Joint allocation of two finals: the common allocation when they agree,
/// otherwise their elementwise mean with each over-capacity column scaled
/// proportionally back to its supply.
pub fn joint_allocation(a: &Allocation, b: &Allocation, supply: &[f64]) -> JointAllocation {
    let same = a.as_slice().len() == b.as_slice().len()
        && a.as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| (x - y).abs() <= 1e-9);
    if same {
        let feasible = column_totals(a)
            .iter()
            .zip(supply)
            .all(|(t, r)| *t <= r + crate::model::FEASIBILITY_TOL)
            && a.as_slice().iter().all(|v| *v >= 0.0);
        return JointAllocation {
            allocation: a.clone(),
            rule: JointRule::Converged,
            rescaled_columns: Vec::new(),
            feasible,
        };
    }
    let mut mean = Allocation::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            mean.set(i, j, ((a.get(i, j) + b.get(i, j)) / 2.0).max(0.0));
        }
    }
    let totals = column_totals(&mean);
    let mut rescaled = Vec::new();
    for (j, &total) in totals.iter().enumerate() {
        let cap = supply.get(j).copied().unwrap_or(f64::INFINITY);
        if total > cap + crate::model::FEASIBILITY_TOL && total > 0.0 {
            let factor = cap / total;
            for i in 0..mean.rows() {
                let v = mean.get(i, j) * factor;
                mean.set(i, j, v);
            }
            rescaled.push(j);
        }
    }
    JointAllocation {
        allocation: mean,
        rule: JointRule::MeanRescaled,
        rescaled_columns: rescaled,
        feasible: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergenceDelta {
    pub metric: Metric,
    /// Positive means the joint allocation improves on the average final.
    pub value: f64,
    pub joint_value: f64,
    pub final_a_value: f64,
    pub final_b_value: f64,
    pub joint_rule: JointRule,
    pub joint_feasible: bool,
}

/// `m(joint) - mean(m(final A), m(final opponent))`, negated for metrics
/// where lower is better.
pub fn emergence_delta(
    metric: Metric,
    transcript: &DebateTranscript,
    joint: &JointAllocation,
) -> Result<EmergenceDelta, ArenaError> {
    let a = transcript
        .final_of(AgentId::A)
        .ok_or(ArenaError::MissingFinal(AgentId::A))?;
    let opp = transcript.opponent();
    let b = transcript.final_of(opp).ok_or(ArenaError::MissingFinal(opp))?;
    let joint_report = metric_report(&transcript.cohort, &joint.allocation, &transcript.config.metrics)?;
    let (ja, fa, fb) = (joint_report.get(metric), a.metrics.get(metric), b.metrics.get(metric));
    let raw = ja - (fa + fb) / 2.0;
    let value = match metric.direction() {
        crate::metrics::Direction::HigherIsBetter => raw,
        crate::metrics::Direction::LowerIsBetter => -raw,
    };
    let joint_feasible = joint.feasible && joint_report.feasible;
    if !joint_feasible {
        tracing::warn!(cohort = transcript.cohort_id, "joint allocation is infeasible");
    }
    Ok(EmergenceDelta {
        metric,
        value,
        joint_value: ja,
        final_a_value: fa,
        final_b_value: fb,
        joint_rule: joint.rule,
        joint_feasible,
    })
}
