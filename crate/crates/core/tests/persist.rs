use std::fs;
use std::path::Path;

use arena_core::agents::{AgentId, ScriptedAgent, ScriptedPolicy};
use arena_core::arena::{run_debate, DebateConfig, DebateTranscript, OpponentKind, Participant};
use arena_core::cohortgen::{generate_batch, SamplerConfig};
use arena_core::eval::{evaluate_transcript, EvalRecord};
use arena_core::metrics::Metric;
use arena_core::model::{AgentProfile, Cohort, Framework};
use arena_core::persist::{
    read_artifact, sha256_file, validate_schemas, write_artifact, ArtifactKind, PersistError, RunManifest,
};
use arena_core::stats::{compare_all, StatsConfig};

/// Writes cohorts, transcripts, evals, stats and a manifest into `dir`.
fn populate(dir: &Path) -> Vec<Cohort> {
    let cohorts = generate_batch(&SamplerConfig {
        batch_size: 4,
        ..SamplerConfig::default()
    })
    .unwrap();
    let mut manifest = RunManifest::new("test", serde_json::json!({"batch": 4}));
    let mut evals = Vec::new();
    for c in &cohorts {
        let rel = format!("cohorts/cohort_{:04}.json", c.cohort_id);
        manifest.add_output(&rel, write_artifact(&dir.join(&rel), ArtifactKind::Cohort, c).unwrap());
        let mut a = Participant {
            agent: AgentId::A,
            profile: AgentProfile::aligned(Framework::Utilitarian, false),
            system_text: String::new(),
            backend: Box::new(ScriptedAgent::new(ScriptedPolicy::Utilitarian)),
        };
        let mut b = Participant {
            agent: AgentId::B,
            profile: AgentProfile::baseline(),
            system_text: String::new(),
            backend: Box::new(ScriptedAgent::new(ScriptedPolicy::Rawlsian)),
        };
        let t = run_debate(
            c,
            &mut a,
            &mut b,
            &DebateConfig::new(Framework::Utilitarian, OpponentKind::Baseline),
            None,
        )
        .unwrap();
        let rel = format!("transcripts/debate_{:04}.json", c.cohort_id);
        manifest.add_output(
            &rel,
            write_artifact(&dir.join(&rel), ArtifactKind::Transcript, &t).unwrap(),
        );
        let e = evaluate_transcript(&t).unwrap();
        let rel = format!("evals/eval_{:04}.json", c.cohort_id);
        manifest.add_output(&rel, write_artifact(&dir.join(&rel), ArtifactKind::Eval, &e).unwrap());
        evals.push(e);
    }
    let stats = compare_all(&evals, &Metric::ALL, &StatsConfig::default()).unwrap();
    manifest.add_output(
        "stats.json",
        write_artifact(&dir.join("stats.json"), ArtifactKind::Stats, &stats).unwrap(),
    );
    manifest.write(dir).unwrap();
    cohorts
}

#[test]
fn freshly_written_artifacts_validate_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cohorts = populate(dir.path());
    let report = validate_schemas(dir.path()).unwrap();
    assert!(report.is_clean(), "{:?}", report.violations);
    assert_eq!(report.files_checked, 4 * 3 + 2);

    let back: Cohort = read_artifact(&dir.path().join("cohorts/cohort_0000.json"), ArtifactKind::Cohort).unwrap();
    assert_eq!(back, cohorts[0]);
    let t: DebateTranscript = read_artifact(
        &dir.path().join("transcripts/debate_0001.json"),
        ArtifactKind::Transcript,
    )
    .unwrap();
    let e: EvalRecord = read_artifact(&dir.path().join("evals/eval_0001.json"), ArtifactKind::Eval).unwrap();
    assert_eq!(evaluate_transcript(&t).unwrap(), e);

    let manifest = RunManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert!(manifest.verify(dir.path()).is_empty());
    assert!(manifest.timestamp.is_none());
}

#[test]
fn wrong_kind_is_rejected_on_read() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    let err =
        read_artifact::<EvalRecord>(&dir.path().join("cohorts/cohort_0000.json"), ArtifactKind::Eval).unwrap_err();
    assert!(matches!(err, PersistError::WrongKind { .. }), "{err}");
}

#[test]
fn a_corrupted_field_flags_exactly_that_file() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    let path = dir.path().join("evals/eval_0002.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["data"]["completed"] = serde_json::json!("yes");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();

    let report = validate_schemas(dir.path()).unwrap();
    assert_eq!(report.violations.len(), 1);
    assert_eq!(report.violations[0].path, path);
    assert!(report.violations[0].reason.starts_with("eval payload"));

    // The manifest notices the edit too.
    let manifest = RunManifest::read(&dir.path().join("manifest.json")).unwrap();
    let problems = manifest.verify(dir.path());
    assert_eq!(problems.len(), 1);
    assert!(matches!(&problems[0], PersistError::HashMismatch { path: p, .. } if *p == path));
}

#[test]
fn unknown_schema_version_is_unmigratable() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    let path = dir.path().join("cohorts/cohort_0003.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["schema_version"] = serde_json::json!(2);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();

    let report = validate_schemas(dir.path()).unwrap();
    assert_eq!(report.violations.len(), 1);
    assert!(report.violations[0].reason.contains("unmigratable"));
    assert!(matches!(
        read_artifact::<Cohort>(&path, ArtifactKind::Cohort),
        Err(PersistError::UnsupportedVersion { found: 2, .. })
    ));
}

#[test]
fn manifest_detects_missing_outputs_and_tracks_inputs() {
    let dir = tempfile::tempdir().unwrap();
    populate(dir.path());
    fs::remove_file(dir.path().join("stats.json")).unwrap();
    let manifest = RunManifest::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.verify(dir.path()).len(), 1);

    // A downstream stage chains on the upstream manifest.
    let upstream = dir.path().join("manifest.json");
    let mut next = RunManifest::new("next", serde_json::json!({}));
    next.add_input(&upstream).unwrap();
    assert_eq!(next.inputs[0].sha256, sha256_file(&upstream).unwrap());
    let out = tempfile::tempdir().unwrap();
    next.write(out.path()).unwrap();
    assert!(RunManifest::read(&out.path().join("manifest.json"))
        .unwrap()
        .verify(out.path())
        .is_empty());
}

#[test]
fn deterministic_reruns_write_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    populate(a.path());
    populate(b.path());
    for rel in [
        "manifest.json",
        "stats.json",
        "transcripts/debate_0002.json",
        "evals/eval_0003.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(rel)).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{rel}"
        );
    }
}
