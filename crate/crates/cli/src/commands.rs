use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use arena_core::agents::AgentId;
use arena_core::arena::{DebateTranscript, OpponentKind};
use arena_core::cohortgen::{default_slots, generate_batch, ArchetypeSlot, SamplerConfig};
use arena_core::eval::{evaluate_transcript, EvalRecord};
use arena_core::fixtures::load_paper_fixtures;
use arena_core::metrics::{compute_weights, Metric, WeightConfig, WeightKind};
use arena_core::model::{Cohort, ResourceCapacity};
use arena_core::persist::{
    json_files, read_artifact, validate_schemas, write_artifact, write_atomic, ArtifactKind, RunManifest, MANIFEST_FILE,
};
use arena_core::stats::{bar_chart_svg, compare_all, ComparisonReport, ResultsTable, StatsConfig};
use arena_core::welfare::{
    check_nondegeneracy as oracle_nondegeneracy, cnss_utilities, verify_cake_claims, verify_cake_claims_relaxed,
    CakeParams, DiscretizedSpace, OracleError, WelfareFunctional,
};

use crate::{CakeArgs, CliError, CliResult, EvalArgs, ExportArgs, GenArgs, NondegArgs, StatsArgs, ValidateArgs};

pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn cohort_file(id: u64) -> String {
    format!("cohort_{id:04}.json")
}

pub fn opponent_name(o: OpponentKind) -> &'static str {
    match o {
        OpponentKind::Baseline => "baseline",
        OpponentKind::Biased => "biased",
    }
}

/// Artifact files of a stage directory, without its manifest.
pub fn artifact_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Io(format!("{} is not a directory", dir.display())));
    }
    Ok(json_files(dir)?
        .into_iter()
        .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_FILE))
        .collect())
}

/// Adds `dir/manifest.json` as an input when the upstream stage wrote one.
pub fn chain_input(manifest: &mut RunManifest, dir: &Path) -> CliResult {
    let upstream = dir.join(MANIFEST_FILE);
    if upstream.is_file() {
        let abs = upstream.canonicalize().map_err(io(&upstream))?;
        manifest.add_input(&abs)?;
    }
    Ok(())
}

pub fn gen_cohorts(args: &GenArgs) -> CliResult {
    if args.batch == 0 {
        return Err(CliError::Usage("--batch must be at least 1".into()));
    }
    let slots: Vec<ArchetypeSlot> = match &args.slots_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => default_slots(),
    };
    let config = SamplerConfig {
        master_seed: args.seed,
        batch_size: args.batch,
        capacity_variant: args.variant.into(),
        slots,
        ..SamplerConfig::default()
    };
    let cohorts = generate_batch(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut manifest = RunManifest::new(
        "gen-cohorts",
        serde_json::to_value(&config).expect("sampler config serializes"),
    );
    if let Some(p) = &args.slots_file {
        manifest.add_input(p)?;
    }
    for c in &cohorts {
        let name = cohort_file(c.cohort_id);
        let sha = write_artifact(&args.out.join(&name), ArtifactKind::Cohort, c)?;
        manifest.add_output(&name, sha);
    }
    manifest.write(&args.out)?;
    println!("wrote {} cohorts to {}", cohorts.len(), args.out.display());
    Ok(())
}

pub fn load_cohorts(dir: &Path) -> CliResult<Vec<Cohort>> {
    let mut out = Vec::new();
    for p in artifact_files(dir)? {
        out.push(read_artifact::<Cohort>(&p, ArtifactKind::Cohort)?);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("no cohort files in {}", dir.display())));
    }
    out.sort_by_key(|c| c.cohort_id);
    Ok(out)
}

pub fn eval(args: &EvalArgs) -> CliResult {
    let files = artifact_files(&args.transcripts)?;
    let mut manifest = RunManifest::new("eval", json!({ "transcripts": args.transcripts }));
    chain_input(&mut manifest, &args.transcripts)?;
    let mut corrupt = Vec::new();
    let mut written = 0usize;
    for path in files {
        let t: DebateTranscript = match read_artifact(&path, ArtifactKind::Transcript) {
            Ok(t) => t,
            Err(e) => {
                corrupt.push(e.to_string());
                continue;
            }
        };
        if t.timestamps.is_some() {
            manifest.nondeterministic = true;
        }
        let record = match evaluate_transcript(&t) {
            Ok(r) => r,
            Err(e) => {
                corrupt.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("transcript.json")
            .replacen("transcript_", "eval_", 1);
        let sha = write_artifact(&args.out.join(&name), ArtifactKind::Eval, &record)?;
        manifest.add_output(&name, sha);
        written += 1;
    }
    std::fs::create_dir_all(&args.out).map_err(io(&args.out))?;
    manifest.write(&args.out)?;
    println!("evaluated {written} transcript(s) into {}", args.out.display());
    if !corrupt.is_empty() {
        eprintln!("skipped {} unreadable transcript(s):", corrupt.len());
        for c in &corrupt {
            eprintln!("  {c}");
        }
    }
    Ok(())
}

pub fn load_evals(dir: &Path) -> CliResult<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for p in artifact_files(dir)? {
        match read_artifact::<EvalRecord>(&p, ArtifactKind::Eval) {
            Ok(r) => out.push(r),
            Err(e) => eprintln!("skipping {e}"),
        }
    }
    Ok(out)
}

pub fn stats(args: &StatsArgs) -> CliResult {
    let config = StatsConfig {
        alpha: args.alpha,
        resamples: args.resamples,
        seed: args.seed,
        normality_pretest: args.normality_pretest,
        ..StatsConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let records = load_evals(&args.eval_dir)?;
    if records.is_empty() {
        return Err(CliError::Usage(format!(
            "no eval records in {}",
            args.eval_dir.display()
        )));
    }
    let mut groups: BTreeMap<(arena_core::model::Framework, u8), Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.framework, r.opponent as u8)).or_default().push(r);
    }
    let compute = || -> CliResult<Vec<ComparisonReport>> {
        let mut all = Vec::new();
        for recs in groups.values() {
            all.extend(compare_all(recs, &Metric::ALL, &config).map_err(|e| CliError::Usage(e.to_string()))?);
        }
        Ok(all)
    };
    let reports = match args.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(compute)?,
        None => compute()?,
    };

    let mut manifest = RunManifest::new("stats", serde_json::to_value(&config).expect("stats config serializes"));
    chain_input(&mut manifest, &args.eval_dir)?;
    let sha = write_artifact(&args.out.join("stats.json"), ArtifactKind::Stats, &reports)?;
    manifest.add_output("stats.json", sha);
    for opponent in [OpponentKind::Baseline, OpponentKind::Biased] {
        let rows: Vec<ComparisonReport> = reports.iter().filter(|r| r.opponent == opponent).cloned().collect();
        if rows.is_empty() {
            continue;
        }
        let table = ResultsTable::new(rows);
        let opp = opponent_name(opponent);
        let csv = table.to_csv().map_err(|e| CliError::Io(e.to_string()))?;
        let md = table.to_markdown();
        let mut outputs = vec![
            (format!("results_{opp}.csv"), csv),
            (format!("results_{opp}.md"), md.clone()),
        ];
        for m in Metric::ALL {
            outputs.push((
                format!("chart_{opp}_{}.svg", m.name()),
                bar_chart_svg(m, &table.reports),
            ));
        }
        for (name, text) in outputs {
            write_atomic(&args.out.join(&name), text.as_bytes())?;
            manifest.add_output(&name, arena_core::persist::sha256_hex(text.as_bytes()));
        }
        println!("## Agent A vs {opp}\n\n{md}");
    }
    manifest.write(&args.out)?;
    Ok(())
}

fn oracle_error(e: OracleError) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn verify_cake(args: &CakeArgs) -> CliResult {
    let params: CakeParams = match &args.params_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => CakeParams::default(),
    };
    let report = if args.unchecked {
        verify_cake_claims_relaxed(params, args.step)
    } else {
        verify_cake_claims(params, args.step)
    }
    .map_err(oracle_error)?;
    println!(
        "{} ({} grid points, {} evaluated individually; tol {:e}, robustness tol {:e})",
        report.certification, report.grid_points, report.points_evaluated, report.tol, report.robust_tol
    );
    if !report.invariants_enforced {
        println!("parameter invariants NOT enforced (--unchecked)");
    }
    for c in &report.claims {
        println!(
            "{} ({}) {} — {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.id,
            c.statement,
            c.detail
        );
        for w in c.witnesses.iter().take(4) {
            println!("      witness {w:?}");
        }
    }
    let r = &report.refinement;
    println!(
        "{} refinement: util max {:.6} at step {} vs {:.6} at step {}",
        if r.passed { "PASS" } else { "FAIL" },
        r.util_max,
        r.step,
        r.util_max_refined,
        r.half_step
    );
    if let Some(p) = &args.json_out {
        write_artifact(p, ArtifactKind::CakeReport, &report)?;
    }
    if report.all_passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .claims
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.id.as_str())
            .collect();
        Err(CliError::Verify(format!("claims failing: {}", failed.join(", "))))
    }
}

pub fn check_nondegeneracy(args: &NondegArgs) -> CliResult {
    let mut cohort: Cohort = read_artifact(&args.cohort, ArtifactKind::Cohort)?;
    if let Some(n) = args.patients {
        if n == 0 || n > cohort.patients.len() {
            return Err(CliError::Usage(format!(
                "--patients must be between 1 and {}",
                cohort.patients.len()
            )));
        }
        cohort.patients.truncate(n);
    }
    if let Some(s) = &args.supply {
        cohort.capacity = ResourceCapacity::new(None, s.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let weights = compute_weights(&cohort, WeightKind::Prioritarian, &WeightConfig::default())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let space =
        DiscretizedSpace::new(args.step, cohort.capacity.supply.clone(), cohort.len()).with_bound(args.max_points);
    let functionals = WelfareFunctional::standard_four(cnss_utilities(cohort.clone()), weights.weights);
    let report = oracle_nondegeneracy(&functionals, &space, args.tol).map_err(oracle_error)?;
    println!("{} (tol {:e})", report.certification, report.tol);
    for f in &report.functionals {
        println!("  {:<6} max {:.6}  argmax size {}", f.name, f.max_value, f.argmax_count);
    }
    for p in &report.pairs {
        println!(
            "  {} ∩ {}: {}",
            p.first,
            p.second,
            if p.intersect { "intersect" } else { "disjoint" }
        );
    }
    if let Some(p) = &args.json_out {
        write_artifact(p, ArtifactKind::NondegeneracyReport, &report)?;
    }
    if report.degenerate {
        Err(CliError::Verify(
            "all argmax sets share an allocation; the instance is degenerate".into(),
        ))
    } else {
        println!("non-degenerate: no allocation maximizes every functional");
        Ok(())
    }
}

pub fn validate(args: &ValidateArgs) -> CliResult {
    let report = validate_schemas(&args.dir)?;
    println!("checked {} file(s)", report.files_checked);
    for v in &report.violations {
        println!("  {}: {}", v.path.display(), v.reason);
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Verify(format!("{} file(s) invalid", report.violations.len())))
    }
}

pub fn export_fixtures(args: &ExportArgs) -> CliResult {
    let set = load_paper_fixtures().map_err(|e| CliError::Usage(e.to_string()))?;
    let fx = &set.cohort32;
    let cohort_dir = args.out.join("cohorts");
    let name = cohort_file(fx.cohort.cohort_id);
    let sha = write_artifact(&cohort_dir.join(&name), ArtifactKind::Cohort, &fx.cohort)?;
    let mut manifest = RunManifest::new("export-fixtures", json!({ "fixture": "cohort32" }));
    manifest.add_output(&name, sha);
    manifest.write(&cohort_dir)?;
    let replay = json!({
        "A": fx.replay_texts(AgentId::A),
        "B": fx.replay_texts(AgentId::B),
    });
    let replay_path = args
        .out
        .join("replay")
        .join(format!("cohort_{}.json", fx.cohort.cohort_id));
    let mut bytes = serde_json::to_vec_pretty(&replay).expect("json");
    bytes.push(b'\n');
    write_atomic(&replay_path, &bytes)?;
    println!(
        "wrote {} and {} (framework {})",
        cohort_dir.display(),
        replay_path.display(),
        fx.framework
    );
    Ok(())
}
