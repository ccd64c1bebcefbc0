//! Allocation text format: rendering for prompts and scripted agents, and a
//! tolerant parser for model output.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{column_totals, Allocation, NUM_RESOURCES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no patient allocation vector found in response")]
    NoVectors { raw: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedAllocation {
    pub allocation: Allocation,
    pub justification: String,
    pub warnings: Vec<String>,
}

fn bracket_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^[\s*_#>|-]*(?:patient|p)\s*#?\s*(\d+)[\s*_]*[:=\-–—]?[\s*_]*\[([^\]]*)\]")
            .expect("valid regex")
    })
}

fn latex_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(?:patient|p)\s*(\d+)\s*&(.*?)(?:\\\\|$)").expect("valid regex"))
}

fn pipe_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*\|\s*\**(?:patient|p)\s*(\d+)\**\s*\|(.*)\|\s*$").expect("valid regex"))
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?").expect("valid regex"))
}

fn justification_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)\bjustification\s*:\s*(.*)$").expect("valid regex"))
}

/// Splits a cell list on `sep` and reads one number per cell.
fn cells(body: &str, sep: char) -> Vec<Option<f64>> {
    body.split(sep)
        .map(|c| number_re().find(c).and_then(|m| m.as_str().parse::<f64>().ok()))
        .collect()
}

/// Recognizes one allocation line; returns the 1-based patient number and
/// the raw values.
fn match_line(line: &str) -> Option<(usize, Vec<Option<f64>>)> {
    if let Some(c) = bracket_re().captures(line) {
        return Some((c[1].parse().ok()?, cells(&c[2], ',')));
    }
    if let Some(c) = latex_re().captures(line) {
        return Some((c[1].parse().ok()?, cells(&c[2], '&')));
    }
    if let Some(c) = pipe_re().captures(line) {
        return Some((c[1].parse().ok()?, cells(&c[2], '|')));
    }
    None
}

/// Extracts an `n x 6` allocation from free text.
///
/// Accepted row shapes: `Patient 3: [0, 1, 0, 10, 12, 0]`, `P3 [..]`,
/// LaTeX rows `P3 & 0 & 1 & ... \\` and Markdown rows `| P3 | 0 | ... |`.
/// Negative values are clamped to zero, missing patients become zero rows
/// and a repeated patient keeps its last row; each case adds a warning.
pub fn parse_allocation(text: &str, n: usize) -> Result<ParsedAllocation, ParseError> {
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut warnings = Vec::new();
    let mut recognized = 0usize;
    let mut other_lines = Vec::new();

    for line in text.lines() {
        let Some((patient, values)) = match_line(line) else {
            other_lines.push(line);
            continue;
        };
        if values.len() != NUM_RESOURCES || values.iter().any(Option::is_none) {
            warnings.push(format!(
                "patient {patient}: expected {NUM_RESOURCES} numbers, skipped line"
            ));
            continue;
        }
        if patient == 0 || patient > n {
            warnings.push(format!("patient {patient} is outside 1..={n}, ignored"));
            continue;
        }
        let mut row: Vec<f64> = values.into_iter().map(|v| v.unwrap_or(0.0)).collect();
        for (j, v) in row.iter_mut().enumerate() {
            if *v < 0.0 || !v.is_finite() {
                warnings.push(format!("patient {patient}: value {v} in column {j} clamped to 0"));
                *v = 0.0;
            }
        }
        if rows[patient - 1].is_some() {
            warnings.push(format!("patient {patient} listed more than once, last row kept"));
        }
        rows[patient - 1] = Some(row);
        recognized += 1;
    }

    if recognized == 0 {
        return Err(ParseError::NoVectors { raw: text.to_string() });
    }
    let mut alloc = Allocation::zeros(n, NUM_RESOURCES);
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Some(r) => alloc.row_mut(i).copy_from_slice(&r),
            None => warnings.push(format!("patient {} missing, treated as zero row", i + 1)),
        }
    }
    let justification = match justification_re().captures(text) {
        Some(c) => c[1].trim().to_string(),
        None => other_lines.join("\n").trim().to_string(),
    };
    Ok(ParsedAllocation {
        allocation: alloc,
        justification,
        warnings,
    })
}

fn fmt_row(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Canonical text: one `Patient i: [..]` line per row and a totals line.
/// Values use the shortest exact decimal form, so parsing is lossless.
pub fn render_allocation(alloc: &Allocation) -> String {
    let mut out = String::new();
    for i in 0..alloc.rows() {
        out.push_str(&format!("Patient {}: {}\n", i + 1, fmt_row(alloc.row(i))));
    }
    out.push_str(&format!("Total: {}\n", fmt_row(&column_totals(alloc))));
    out
}
