//! Golden fixtures: the cohort-32 debate tables and the capacity variants.
//!
//! Fixture files are listed with their sha256 in `fixtures/MANIFEST.sha256`;
//! loading fails on any mismatch.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentId;
use crate::model::{capacity_for_variant, Allocation, CapacityVariant, Cohort, Framework, ResourceCapacity};
use crate::persist::sha256_hex;

const COHORT32_JSON: &str = include_str!("../fixtures/paper/cohort32.json");
const MANIFEST: &str = include_str!("../fixtures/MANIFEST.sha256");
pub const COHORT32_PATH: &str = "paper/cohort32.json";
pub const ADVERSARIAL_PROMPT_PATH: &str = "adversarial/agent_c_prompt.txt";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture {name}: checksum mismatch (manifest {expected}, file {actual})")]
    Checksum {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("fixture {0} is not listed in the manifest")]
    Unlisted(String),
    #[error("fixture {name}: {message}")]
    Invalid { name: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Cohort,
    Transcript,
    ExpectedMetrics,
    ExpectedStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTable {
    pub round: usize,
    pub agent: AgentId,
    /// `transcribed`, or a description of how the table was reconstructed.
    pub origin: String,
    pub allocation: Allocation,
    pub totals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptFixture {
    pub name: String,
    pub kind: FixtureKind,
    pub origin: String,
    pub note: String,
    pub cohort: Cohort,
    pub framework: Framework,
    pub tables: Vec<RoundTable>,
}

impl TranscriptFixture {
    pub fn table(&self, round: usize, agent: AgentId) -> Option<&RoundTable> {
        self.tables.iter().find(|t| t.round == round && t.agent == agent)
    }

    pub fn rounds(&self) -> usize {
        self.tables.iter().map(|t| t.round).max().unwrap_or(0)
    }

    /// Model-style replies for `agent`, one per round, with the allocation
    /// as a LaTeX table.
    pub fn replay_texts(&self, agent: AgentId) -> Vec<String> {
        let mut tables: Vec<&RoundTable> = self.tables.iter().filter(|t| t.agent == agent).collect();
        tables.sort_by_key(|t| t.round);
        tables
            .into_iter()
            .map(|t| {
                format!(
                    "{}\nJustification: Round {} proposal for cohort {}.\n",
                    latex_table(&t.allocation),
                    t.round,
                    self.cohort.cohort_id
                )
            })
            .collect()
    }

    fn check(&self) -> Result<(), String> {
        self.cohort.validate().map_err(|e| e.to_string())?;
        for t in &self.tables {
            t.allocation
                .check_dims(self.cohort.len(), crate::model::NUM_RESOURCES)
                .map_err(|e| e.to_string())?;
            let totals = crate::model::column_totals(&t.allocation);
            if totals != t.totals {
                return Err(format!(
                    "round {} agent {}: recorded totals {:?} differ from column sums {:?}",
                    t.round, t.agent, t.totals, totals
                ));
            }
        }
        Ok(())
    }
}

/// LaTeX tabular with one `Pi & ... \\` row per patient and a total row.
pub fn latex_table(alloc: &Allocation) -> String {
    let mut s = String::from("\\begin{tabular}{lcccccc}\n\\toprule\n");
    s.push_str("Patient & ICU & Vent & MedA & MedB & Nursing & Surgery \\\\\n\\midrule\n");
    let cell = |v: f64| format!("{v}");
    for i in 0..alloc.rows() {
        let cells: Vec<String> = alloc.row(i).iter().map(|v| cell(*v)).collect();
        s.push_str(&format!("P{} & {} \\\\\n", i + 1, cells.join(" & ")));
    }
    let totals: Vec<String> = crate::model::column_totals(alloc).into_iter().map(cell).collect();
    s.push_str(&format!(
        "\\midrule\nTotal & {} \\\\\n\\bottomrule\n\\end{{tabular}}",
        totals.join(" & ")
    ));
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSet {
    pub cohort32: TranscriptFixture,
    pub capacities: Vec<(CapacityVariant, ResourceCapacity)>,
}

fn manifest_entry(manifest: &str, name: &str) -> Option<String> {
    manifest.lines().find_map(|l| {
        let (hash, path) = l.trim().split_once(char::is_whitespace)?;
        (path.trim() == name).then(|| hash.to_string())
    })
}

/// Verifies `bytes` against the manifest line for `name`.
pub fn verify_checksum(manifest: &str, name: &str, bytes: &[u8]) -> Result<(), FixtureError> {
    let expected = manifest_entry(manifest, name).ok_or_else(|| FixtureError::Unlisted(name.into()))?;
    let actual = sha256_hex(bytes);
    if expected != actual {
        return Err(FixtureError::Checksum {
            name: name.into(),
            expected,
            actual,
        });
    }
    Ok(())
}

fn parse_set(manifest: &str, cohort32: &str) -> Result<FixtureSet, FixtureError> {
    verify_checksum(manifest, COHORT32_PATH, cohort32.as_bytes())?;
    let invalid = |message: String| FixtureError::Invalid {
        name: COHORT32_PATH.into(),
        message,
    };
    let fixture: TranscriptFixture = serde_json::from_str(cohort32).map_err(|e| invalid(e.to_string()))?;
    fixture.check().map_err(invalid)?;
    Ok(FixtureSet {
        cohort32: fixture,
        capacities: CapacityVariant::ALL
            .into_iter()
            .map(|v| (v, capacity_for_variant(v)))
            .collect(),
    })
}

/// The bundled fixtures.
pub fn load_paper_fixtures() -> Result<FixtureSet, FixtureError> {
    parse_set(MANIFEST, COHORT32_JSON)
}

/// Fixtures read from a directory laid out like the bundled `fixtures/`.
pub fn load_paper_fixtures_from(dir: &Path) -> Result<FixtureSet, FixtureError> {
    let read = |rel: &str| {
        let p = dir.join(rel);
        std::fs::read_to_string(&p).map_err(|e| FixtureError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    };
    parse_set(&read("MANIFEST.sha256")?, &read(COHORT32_PATH)?)
}
