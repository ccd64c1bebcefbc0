use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use arena_core::arena::OpponentKind;
use arena_core::eval::EvalRecord;
use arena_core::metrics::Metric;
use arena_core::model::{Cohort, SurvivalLabel};
use arena_core::persist::{read_artifact, write_atomic, ArtifactKind, RunManifest};
use arena_core::stats::{ComparisonReport, ResultsTable};

use crate::commands::opponent_name;
use crate::{CliError, CliResult, ReportArgs};

struct Stage {
    dir: PathBuf,
    manifest: RunManifest,
}

/// Follows manifest inputs upstream; returns stages keyed by command and
/// every problem found on the way.
fn collect_chain(start: &Path) -> (BTreeMap<String, Stage>, Vec<String>) {
    let mut stages = BTreeMap::new();
    let mut problems = Vec::new();
    let mut queue = vec![start.to_path_buf()];
    while let Some(path) = queue.pop() {
        let manifest = match RunManifest::read(&path) {
            Ok(m) => m,
            Err(e) => {
                problems.push(format!("missing or unreadable manifest: {e}"));
                continue;
            }
        };
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in manifest.verify(&dir) {
            problems.push(p.to_string());
        }
        for input in &manifest.inputs {
            if input.path.ends_with(arena_core::persist::MANIFEST_FILE) {
                queue.push(PathBuf::from(&input.path));
            }
        }
        stages
            .entry(manifest.command.clone())
            .or_insert(Stage { dir, manifest });
    }
    (stages, problems)
}

fn outputs<'a>(stage: &'a Stage, prefix: &'a str) -> impl Iterator<Item = PathBuf> + 'a {
    stage
        .manifest
        .outputs
        .iter()
        .filter(move |o| o.path.starts_with(prefix) && o.path.ends_with(".json"))
        .map(move |o| stage.dir.join(&o.path))
}

fn cohort_section(out: &mut String, stage: Option<&Stage>, missing: &mut Vec<String>) {
    out.push_str("## Cohorts\n\n");
    let Some(stage) = stage else {
        out.push_str("missing: no cohort stage in the manifest chain\n\n");
        missing.push("gen-cohorts stage".into());
        return;
    };
    let mut cohorts = Vec::new();
    for p in outputs(stage, "cohort_") {
        match read_artifact::<Cohort>(&p, ArtifactKind::Cohort) {
            Ok(c) => cohorts.push(c),
            Err(e) => missing.push(e.to_string()),
        }
    }
    let mut labels: BTreeMap<SurvivalLabel, usize> = BTreeMap::new();
    let mut variants: BTreeMap<String, usize> = BTreeMap::new();
    let mut patients = 0usize;
    let mut survival = 0.0;
    for c in &cohorts {
        let v = c
            .capacity
            .variant
            .map(|v| v.name().to_string())
            .unwrap_or_else(|| "custom".into());
        *variants.entry(v).or_default() += 1;
        for p in &c.patients {
            patients += 1;
            survival += p.survival_prob;
            *labels.entry(p.survival_label).or_default() += 1;
        }
    }
    let _ = writeln!(out, "- cohorts: {}", cohorts.len());
    let _ = writeln!(out, "- patients: {patients}");
    if patients > 0 {
        let _ = writeln!(out, "- mean survival probability: {:.3}", survival / patients as f64);
    }
    for (v, n) in &variants {
        let _ = writeln!(out, "- capacity `{v}`: {n} cohort(s)");
    }
    let dist: Vec<String> = labels.iter().map(|(l, n)| format!("{l} {n}")).collect();
    let _ = writeln!(out, "- survival labels: {}\n", dist.join(", "));
}

fn results_section(out: &mut String, stage: Option<&Stage>, missing: &mut Vec<String>) {
    out.push_str("## Results\n\n");
    let Some(stage) = stage else {
        out.push_str("missing: no stats stage in the manifest chain\n\n");
        missing.push("stats stage".into());
        return;
    };
    let reports: Vec<ComparisonReport> = match read_artifact(&stage.dir.join("stats.json"), ArtifactKind::Stats) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(out, "missing: {e}\n");
            missing.push(e.to_string());
            return;
        }
    };
    for opponent in [OpponentKind::Baseline, OpponentKind::Biased] {
        let rows: Vec<ComparisonReport> = reports.iter().filter(|r| r.opponent == opponent).cloned().collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            "### Agent A vs {} ({})\n",
            opponent.agent_id(),
            opponent_name(opponent)
        );
        out.push_str(&ResultsTable::new(rows).to_markdown());
        out.push('\n');
    }
}

fn eval_sections(out: &mut String, stage: Option<&Stage>, missing: &mut Vec<String>) {
    let Some(stage) = stage else {
        out.push_str("## Emergence\n\nmissing: no eval stage in the manifest chain\n\n");
        missing.push("eval stage".into());
        return;
    };
    let mut records = Vec::new();
    for p in outputs(stage, "eval_") {
        match read_artifact::<EvalRecord>(&p, ArtifactKind::Eval) {
            Ok(r) => records.push(r),
            Err(e) => missing.push(e.to_string()),
        }
    }
    records.sort_by_key(|r| (r.framework, r.opponent as u8, r.cohort_id));

    out.push_str("## Emergence deltas\n\n");
    out.push_str("Joint allocation metric minus the mean of the two finals, oriented so that positive is better.\n\n");
    out.push_str("| Framework | Opponent | n |");
    for m in Metric::ALL {
        let _ = write!(out, " {} |", m.label());
    }
    out.push_str(" joint infeasible |\n|---|---|---|");
    for _ in Metric::ALL {
        out.push_str("---|");
    }
    out.push_str("---|\n");
    let mut groups: BTreeMap<(String, &'static str), Vec<&EvalRecord>> = BTreeMap::new();
    for r in &records {
        groups
            .entry((r.framework.display_name().to_string(), opponent_name(r.opponent)))
            .or_default()
            .push(r);
    }
    for ((f, o), rs) in &groups {
        let with_joint: Vec<&&EvalRecord> = rs.iter().filter(|r| !r.emergence.is_empty()).collect();
        let _ = write!(out, "| {f} | {o} | {} |", with_joint.len());
        for m in Metric::ALL {
            let vals: Vec<f64> = with_joint
                .iter()
                .filter_map(|r| r.emergence.iter().find(|e| e.metric == m).map(|e| e.value))
                .collect();
            if vals.is_empty() {
                out.push_str(" — |");
            } else {
                let _ = write!(out, " {:+.4} |", vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        let infeasible = with_joint
            .iter()
            .filter(|r| r.emergence.first().is_some_and(|e| !e.joint_feasible))
            .count();
        let _ = writeln!(out, " {infeasible} |");
    }
    out.push('\n');

    out.push_str("## Infeasible proposals\n\n| Framework | Opponent | Agent | Round | infeasible / total |\n|---|---|---|---|---|\n");
    let mut counts: BTreeMap<(String, &'static str, String, usize), (usize, usize)> = BTreeMap::new();
    for r in &records {
        for p in &r.proposals {
            let e = counts
                .entry((
                    r.framework.display_name().to_string(),
                    opponent_name(r.opponent),
                    p.agent.to_string(),
                    p.round,
                ))
                .or_default();
            e.1 += 1;
            if !p.feasible {
                e.0 += 1;
            }
        }
    }
    for ((f, o, a, round), (bad, total)) in &counts {
        let _ = writeln!(out, "| {f} | {o} | {a} | {round} | {bad} / {total} |");
    }
    out.push('\n');

    let failed: Vec<&EvalRecord> = records.iter().filter(|r| !r.completed).collect();
    if !failed.is_empty() {
        out.push_str("## Failed debates\n\n");
        for r in failed {
            let _ = writeln!(
                out,
                "- cohort {} ({}, {}): {}",
                r.cohort_id,
                r.framework,
                opponent_name(r.opponent),
                r.failure.as_deref().unwrap_or("unknown")
            );
        }
        out.push('\n');
    }
}

/// Replaces bulky nested tables (slot definitions, capacity tables) with a
/// short description; the full config stays in the manifest.
fn summarize_config(config: &serde_json::Value) -> serde_json::Value {
    let mut v = config.clone();
    if let Some(obj) = v.as_object_mut() {
        for key in ["slots", "capacities"] {
            if let Some(inner) = obj.get(key) {
                let n = inner
                    .as_array()
                    .map(|a| a.len())
                    .or_else(|| inner.as_object().map(|o| o.len()))
                    .unwrap_or(0);
                obj.insert(
                    key.into(),
                    serde_json::Value::String(format!("<{n} entries; see manifest>")),
                );
            }
        }
    }
    v
}

pub fn report(args: &ReportArgs) -> CliResult {
    if !args.run_manifest.is_file() {
        return Err(CliError::Io(format!("{} not found", args.run_manifest.display())));
    }
    let (stages, problems) = collect_chain(&args.run_manifest);
    let mut missing = problems;
    let mut out = String::from("# Arena run report\n\n## Configuration\n\n");
    for (command, stage) in &stages {
        let _ = writeln!(
            out,
            "### `{command}` (run id `{}`{})\n\n```json\n{}\n```\n",
            stage.manifest.run_id,
            if stage.manifest.nondeterministic {
                ", nondeterministic"
            } else {
                ""
            },
            serde_json::to_string_pretty(&summarize_config(&stage.manifest.config)).unwrap_or_default()
        );
    }
    cohort_section(
        &mut out,
        stages.get("gen-cohorts").or_else(|| stages.get("export-fixtures")),
        &mut missing,
    );
    results_section(&mut out, stages.get("stats"), &mut missing);
    eval_sections(&mut out, stages.get("eval"), &mut missing);
    if !stages.contains_key("run") {
        missing.push("run stage".into());
    }
    if !missing.is_empty() {
        out.push_str("## Missing inputs\n\n");
        for m in &missing {
            let _ = writeln!(out, "- missing: {m}");
        }
    }
    let path = args.out.join("report.md");
    write_atomic(&path, out.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}
