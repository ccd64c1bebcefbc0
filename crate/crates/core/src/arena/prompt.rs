use crate::agents::AgentId;
use crate::model::{AgentProfile, Cohort, ProfileKind, Resource};
use crate::retrieval::RetrievalResult;

use super::{render_allocation, InteractionHistory};

pub const OUTPUT_FORMAT: &str = "Respond with exactly one line per patient in the form\n\
Patient i: [ICU, Vent, MedA, MedB, Nursing, Surgery]\n\
using non-negative numbers, then a line starting with \"Justification:\" that explains \
your allocation. Column totals must not exceed the available supply.";

pub const FORMAT_REMINDER: &str = "Your previous reply could not be read as an allocation. \
Reply again using one \"Patient i: [ICU, Vent, MedA, MedB, Nursing, Surgery]\" line per patient.";

/// Patient description with survival shown only as its label.
pub fn render_cohort(cohort: &Cohort) -> String {
    let mut out = String::new();
    for p in &cohort.patients {
        let needs: Vec<&str> = p.needs.iter().map(|r| r.name()).collect();
        out.push_str(&format!(
            "Patient {}: {}-year-old {}, {}, {}, {}; occupation: {}; family: {}. \
             Condition: {}. Needs: {}. Survival outlook: {}.",
            p.id,
            p.age,
            p.gender,
            p.race,
            p.ses,
            p.citizenship,
            p.occupation,
            p.family_status,
            p.condition,
            needs.join(", "),
            p.survival_label,
        ));
        if let Some(u) = &p.urgency {
            out.push_str(&format!(" Urgency: {u}."));
        }
        out.push('\n');
    }
    out
}

fn render_supply(cohort: &Cohort) -> String {
    Resource::ALL
        .iter()
        .map(|r| format!("{} {}", r.name(), cohort.capacity.supply[r.index()]))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn render_history(history: &InteractionHistory) -> String {
    let mut out = String::new();
    for p in &history.proposals {
        out.push_str(&format!("Round {} - Agent {} proposed:\n", p.round, p.agent));
        out.push_str(&render_allocation(&p.allocation));
        if !p.justification.is_empty() {
            out.push_str(&format!("Justification: {}\n", p.justification));
        }
        out.push('\n');
    }
    out
}

/// Deterministic prompt for `agent` in `round`.
///
/// Sections: the profile's system text, the task, the cohort (survival as
/// labels only), available supply, retrieved passages when the profile
/// uses retrieval, the debate so far, and the output format.
#[allow(clippy::too_many_arguments)]
pub fn build_prompt(
    profile: &AgentProfile,
    system_text: &str,
    agent: AgentId,
    cohort: &Cohort,
    history: &InteractionHistory,
    retrieved: Option<&RetrievalResult>,
    round: usize,
    total_rounds: usize,
) -> String {
    let mut out = String::new();
    if !system_text.trim().is_empty() {
        out.push_str(system_text.trim());
        out.push_str("\n\n");
    }
    out.push_str(&format!(
        "You are Agent {agent} in a structured debate over the allocation of scarce hospital \
         resources. This is round {round} of {total_rounds}. Propose a complete allocation and \
         respond to the other agent's latest proposal when there is one.\n\n"
    ));
    out.push_str("PATIENTS\n");
    out.push_str(&render_cohort(cohort));
    out.push_str(&format!("\nAVAILABLE SUPPLY\n{}\n\n", render_supply(cohort)));
    if profile.retrieval_enabled && profile.kind != ProfileKind::Baseline {
        if let Some(r) = retrieved {
            out.push_str("REFERENCE PASSAGES\n");
            out.push_str(&r.context_block());
            out.push_str("\n\n");
        }
    }
    if !history.proposals.is_empty() {
        out.push_str("DEBATE SO FAR\n");
        out.push_str(&render_history(history));
    }
    out.push_str("OUTPUT FORMAT\n");
    out.push_str(OUTPUT_FORMAT);
    out.push('\n');
    out
}
