//! Re-scoring of debate transcripts.

use serde::{Deserialize, Serialize};

use crate::agents::AgentId;
use crate::arena::{
    emergence_delta, joint_allocation, ArenaError, DebateStatus, DebateTranscript, EmergenceDelta, JointAllocation,
    OpponentKind,
};
use crate::metrics::{metric_report, Metric, MetricReport};
use crate::model::Framework;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalEval {
    pub round: usize,
    pub agent: AgentId,
    pub feasible: bool,
    /// Indices of the resources whose supply was exceeded.
    pub violated_columns: Vec<usize>,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEval {
    pub agent: AgentId,
    pub feasible: bool,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub cohort_id: u64,
    pub framework: Framework,
    pub opponent: OpponentKind,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub proposals: Vec<ProposalEval>,
    pub finals: Vec<FinalEval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<JointAllocation>,
    pub emergence: Vec<EmergenceDelta>,
}

impl EvalRecord {
    pub fn final_of(&self, agent: AgentId) -> Option<&FinalEval> {
        self.finals.iter().find(|f| f.agent == agent)
    }

    pub fn opponent_id(&self) -> AgentId {
        self.opponent.agent_id()
    }
}

/// Recomputes every metric of every proposal and final allocation.
/// Infeasible allocations are scored too; their `feasible` flag is false.
pub fn evaluate_transcript(t: &DebateTranscript) -> Result<EvalRecord, ArenaError> {
    let metrics = &t.config.metrics;
    let mut proposals = Vec::with_capacity(t.history.proposals.len());
    for p in &t.history.proposals {
        proposals.push(ProposalEval {
            round: p.round,
            agent: p.agent,
            feasible: p.feasibility.feasible,
            violated_columns: p.feasibility.violations.iter().map(|v| v.column).collect(),
            metrics: metric_report(&t.cohort, &p.allocation, metrics)?,
        });
    }
    let mut finals = Vec::new();
    for f in &t.finals {
        let report = metric_report(&t.cohort, &f.allocation, metrics)?;
        finals.push(FinalEval {
            agent: f.agent,
            feasible: report.feasible,
            metrics: report,
        });
    }
    let (joint, emergence) = match (t.final_of(AgentId::A), t.final_of(t.opponent())) {
        (Some(a), Some(b)) => {
            let joint = joint_allocation(&a.allocation, &b.allocation, &t.cohort.capacity.supply);
            let deltas = Metric::ALL
                .iter()
                .map(|m| emergence_delta(*m, t, &joint))
                .collect::<Result<Vec<_>, _>>()?;
            (Some(joint), deltas)
        }
        _ => (None, Vec::new()),
    };
    let failure = match &t.status {
        DebateStatus::Completed => None,
        DebateStatus::Failed {
            agent, round, reason, ..
        } => Some(format!("agent {agent}, round {round}: {reason}")),
    };
    Ok(EvalRecord {
        cohort_id: t.cohort_id,
        framework: t.config.framework,
        opponent: t.config.opponent,
        completed: t.is_completed(),
        failure,
        proposals,
        finals,
        joint,
        emergence,
    })
}
