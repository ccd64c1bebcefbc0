mod common;

use std::path::Path;
use std::time::Instant;

use proptest::prelude::*;
use regex::Regex;

use arena_core::agents::{
    build_profile, AgentBackend, AgentError, AgentId, GenerateRequest, ProfileTexts, ReplayAgent, ScriptedAgent,
    ScriptedPolicy,
};
use arena_core::arena::{
    build_prompt, emergence_delta, joint_allocation, parse_allocation, render_allocation, run_debate, DebateConfig,
    DebateStatus, InteractionHistory, JointRule, OpponentKind, Participant, RetrievalContext,
};
use arena_core::eval::evaluate_transcript;
use arena_core::fixtures::{latex_table, load_paper_fixtures};
use arena_core::metrics::{metric_report, Metric};
use arena_core::model::{
    column_totals, AgentProfile, Allocation, BiasSource, Cohort, Framework, ProfileKind, NUM_RESOURCES,
};
use arena_core::retrieval::{chunk_corpus, index_corpus, load_corpus_dir, retrieve, HashingEmbedder};

use common::*;

fn participant(agent: AgentId, profile: AgentProfile, backend: Box<dyn AgentBackend>) -> Participant {
    Participant {
        agent,
        profile,
        system_text: String::new(),
        backend,
    }
}

fn scripted(policy: ScriptedPolicy) -> Box<dyn AgentBackend> {
    Box::new(ScriptedAgent::new(policy))
}

fn scripted_pair() -> (Participant, Participant) {
    (
        participant(
            AgentId::A,
            AgentProfile::aligned(Framework::Rawlsian, false),
            scripted(ScriptedPolicy::Rawlsian),
        ),
        participant(
            AgentId::B,
            AgentProfile::baseline(),
            scripted(ScriptedPolicy::Utilitarian),
        ),
    )
}

fn corpus_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus"))
}

#[test]
fn round_count_determines_history_length() {
    let mut r = rng(10);
    let cohort = random_cohort(&mut r, 1);
    for rounds in [1, 2, 3, 5] {
        let (mut a, mut b) = scripted_pair();
        let mut config = DebateConfig::new(Framework::Rawlsian, OpponentKind::Baseline);
        config.rounds = rounds;
        let t = run_debate(&cohort, &mut a, &mut b, &config, None).unwrap();
        assert!(t.is_completed());
        assert_eq!(t.history.proposals.len(), 2 * rounds);
        let order: Vec<(usize, AgentId)> = t.history.proposals.iter().map(|p| (p.round, p.agent)).collect();
        let expected: Vec<(usize, AgentId)> = (1..=rounds).flat_map(|k| [(k, AgentId::A), (k, AgentId::B)]).collect();
        assert_eq!(order, expected);
        for agent in [AgentId::A, AgentId::B] {
            let last = t.history.last_of(agent).unwrap();
            assert_eq!(last.round, rounds);
            assert_eq!(t.final_of(agent).unwrap().allocation, last.allocation);
        }
        assert!(t.timestamps.is_none());
    }
}

#[test]
fn opponent_first_swaps_speaking_order() {
    let mut r = rng(11);
    let cohort = random_cohort(&mut r, 1);
    let (mut a, mut b) = scripted_pair();
    let mut config = DebateConfig::new(Framework::Rawlsian, OpponentKind::Baseline);
    config.a_first = false;
    let t = run_debate(&cohort, &mut a, &mut b, &config, None).unwrap();
    assert_eq!(t.history.proposals[0].agent, AgentId::B);
    assert_eq!(t.history.proposals[1].agent, AgentId::A);
}

#[test]
fn zero_rounds_is_rejected() {
    let mut r = rng(12);
    let cohort = random_cohort(&mut r, 1);
    let (mut a, mut b) = scripted_pair();
    let mut config = DebateConfig::new(Framework::Rawlsian, OpponentKind::Baseline);
    config.rounds = 0;
    assert!(run_debate(&cohort, &mut a, &mut b, &config, None).is_err());
}

#[test]
fn scripted_debates_are_byte_identical_across_runs() {
    let mut r = rng(13);
    let cohort = random_cohort(&mut r, 7);
    let config = DebateConfig::new(Framework::Rawlsian, OpponentKind::Baseline);
    let run = || {
        let (mut a, mut b) = scripted_pair();
        serde_json::to_vec(&run_debate(&cohort, &mut a, &mut b, &config, None).unwrap()).unwrap()
    };
    let first = run();
    let parallel: Vec<Vec<u8>> = {
        use rayon::prelude::*;
        (0..8).into_par_iter().map(|_| run()).collect()
    };
    for p in parallel {
        assert_eq!(p, first);
    }
}

#[test]
fn cohort_32_replay_reproduces_the_recorded_debate() {
    let start = Instant::now();
    let fixture = load_paper_fixtures().unwrap().cohort32;
    let cohort = &fixture.cohort;
    let mut a = participant(
        AgentId::A,
        AgentProfile::aligned(fixture.framework, false),
        Box::new(ReplayAgent::new("cohort32-A", fixture.replay_texts(AgentId::A))),
    );
    let mut b = participant(
        AgentId::B,
        AgentProfile::baseline(),
        Box::new(ReplayAgent::new("cohort32-B", fixture.replay_texts(AgentId::B))),
    );
    let config = DebateConfig::new(fixture.framework, OpponentKind::Baseline);
    let t = run_debate(cohort, &mut a, &mut b, &config, None).unwrap();
    assert!(t.is_completed());
    assert_eq!(t.history.proposals.len(), 6);

    let a1 = &t.history.proposals[0];
    assert_eq!((a1.agent, a1.round), (AgentId::A, 1));
    assert_eq!(column_totals(&a1.allocation), vec![2.0, 1.0, 45.0, 35.0, 60.0, 2.0]);
    assert!(a1.feasibility.feasible);
    assert!(a1.parse_warnings.is_empty());

    let a2 = &t.history.proposals[2];
    assert_eq!((a2.agent, a2.round), (AgentId::A, 2));
    assert_eq!(column_totals(&a2.allocation)[2], 50.0);
    assert!(!a2.feasibility.feasible);
    let v = &a2.feasibility.violations;
    assert_eq!(v.len(), 1);
    assert_eq!((v[0].column, v[0].capacity, v[0].overshoot), (2, 45.0, 5.0));

    let fa = t.final_of(AgentId::A).unwrap();
    let fb = t.final_of(AgentId::B).unwrap();
    assert_eq!(column_totals(&fa.allocation), vec![2.0, 1.0, 50.0, 35.0, 56.0, 2.0]);
    assert_eq!(column_totals(&fb.allocation), vec![2.0, 1.0, 53.0, 35.0, 56.0, 2.0]);
    assert!(!fa.feasibility.feasible);
    assert!(!fb.feasibility.feasible);

    // Every parsed table is the transcribed one.
    for p in &t.history.proposals {
        assert_eq!(p.allocation, fixture.table(p.round, p.agent).unwrap().allocation);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn replay_exhaustion_fails_the_debate() {
    let fixture = load_paper_fixtures().unwrap().cohort32;
    let mut texts = fixture.replay_texts(AgentId::B);
    texts.truncate(1);
    let mut a = participant(
        AgentId::A,
        AgentProfile::aligned(fixture.framework, false),
        Box::new(ReplayAgent::new("a", fixture.replay_texts(AgentId::A))),
    );
    let mut b = participant(
        AgentId::B,
        AgentProfile::baseline(),
        Box::new(ReplayAgent::new("b", texts)),
    );
    let config = DebateConfig::new(fixture.framework, OpponentKind::Baseline);
    let t = run_debate(&fixture.cohort, &mut a, &mut b, &config, None).unwrap();
    match &t.status {
        DebateStatus::Failed {
            agent, round, reason, ..
        } => {
            assert_eq!((*agent, *round), (AgentId::B, 2));
            assert!(reason.contains("exhausted"), "{reason}");
        }
        other => panic!("expected failure, got {other:?}"),
    }
    assert!(t.finals.is_empty());
    assert_eq!(t.history.proposals.len(), 3);
    let eval = evaluate_transcript(&t).unwrap();
    assert!(!eval.completed);
    assert!(eval.emergence.is_empty());
}

/// Returns unparsable text first, then a real allocation.
struct Flaky {
    calls: Vec<String>,
    good: String,
}

impl AgentBackend for Flaky {
    fn id(&self) -> String {
        "flaky".into()
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn generate(&mut self, request: &GenerateRequest<'_>) -> Result<String, AgentError> {
        self.calls.push(request.prompt.to_string());
        if self.calls.len() % 2 == 1 {
            Ok("I would rather not answer in that format.".into())
        } else {
            Ok(self.good.clone())
        }
    }
}

#[test]
fn parse_failure_retries_once_with_a_reminder() {
    let mut r = rng(14);
    let cohort = random_cohort(&mut r, 3);
    let good = render_allocation(&Allocation::zeros_for(cohort.len()));
    let mut a = participant(
        AgentId::A,
        AgentProfile::aligned(Framework::Utilitarian, false),
        Box::new(Flaky {
            calls: Vec::new(),
            good,
        }),
    );
    let mut b = participant(
        AgentId::B,
        AgentProfile::baseline(),
        scripted(ScriptedPolicy::Utilitarian),
    );
    let mut config = DebateConfig::new(Framework::Utilitarian, OpponentKind::Baseline);
    config.rounds = 1;
    let t = run_debate(&cohort, &mut a, &mut b, &config, None).unwrap();
    assert!(t.is_completed());
    assert_eq!(t.history.proposals[0].attempts, 2);

    // With no retries allowed the same backend fails the debate and the
    // raw reply is kept.
    let mut a = participant(
        AgentId::A,
        AgentProfile::aligned(Framework::Utilitarian, false),
        Box::new(Flaky {
            calls: Vec::new(),
            good: String::new(),
        }),
    );
    let mut b = participant(
        AgentId::B,
        AgentProfile::baseline(),
        scripted(ScriptedPolicy::Utilitarian),
    );
    config.max_parse_retries = 0;
    let t = run_debate(&cohort, &mut a, &mut b, &config, None).unwrap();
    match t.status {
        DebateStatus::Failed {
            agent, round, raw_text, ..
        } => {
            assert_eq!((agent, round), (AgentId::A, 1));
            assert_eq!(raw_text.as_deref(), Some("I would rather not answer in that format."));
        }
        other => panic!("expected failure, got {other:?}"),
    }
}

/// Whole numeric tokens in `prompt` that spell a survival probability, plus
/// any percentage at all.
fn survival_leaks(prompt: &str, cohort: &Cohort) -> Vec<String> {
    let token = Regex::new(r"\d+(?:\.\d+)?%?").unwrap();
    let mut spelled = Vec::new();
    for p in &cohort.patients {
        spelled.push(format!("{}", p.survival_prob));
        spelled.push(format!("{:.1}", p.survival_prob));
        spelled.push(format!("{:.2}", p.survival_prob));
        spelled.push(format!("{:.3}", p.survival_prob));
    }
    token
        .find_iter(prompt)
        .map(|m| m.as_str().to_string())
        .filter(|t| t.ends_with('%') || spelled.contains(t))
        .collect()
}

#[test]
fn prompts_show_survival_only_as_labels() {
    let decimal = Regex::new(r"\d+\.\d+|\d+\s*%").unwrap();
    let label = Regex::new(r"Survival outlook: (Acute|Low|Mid|High)\.").unwrap();
    let texts = ProfileTexts::default();
    let mut r = rng(15);
    for case in 0..100 {
        let cohort = random_cohort(&mut r, case);
        let framework = Framework::ALL[case as usize % Framework::ALL.len()];
        let (profile, system) =
            build_profile(ProfileKind::Aligned, Some(framework), false, BiasSource::None, &texts).unwrap();
        let first = build_prompt(
            &profile,
            &system,
            AgentId::A,
            &cohort,
            &InteractionHistory::default(),
            None,
            1,
            3,
        );
        assert!(
            !decimal.is_match(&first),
            "decimal in prompt: {:?}",
            decimal.find(&first)
        );
        assert_eq!(label.find_iter(&first).count(), cohort.len());

        // Later rounds render history with fractional allocations; the
        // survival probabilities must still never appear.
        let (mut a, mut b) = scripted_pair();
        let t = run_debate(
            &cohort,
            &mut a,
            &mut b,
            &DebateConfig::new(framework, OpponentKind::Baseline),
            None,
        )
        .unwrap();
        let later = build_prompt(&profile, &system, AgentId::B, &cohort, &t.history, None, 3, 3);
        assert!(
            survival_leaks(&later, &cohort).is_empty(),
            "{:?}",
            survival_leaks(&later, &cohort)
        );
        assert!(later.contains("DEBATE SO FAR"));
    }
}

#[test]
fn baseline_prompt_has_no_preamble_or_passages() {
    let texts = ProfileTexts::default();
    let mut r = rng(16);
    let cohort = random_cohort(&mut r, 1);
    let docs = load_corpus_dir(corpus_dir()).unwrap();
    let embedder = HashingEmbedder::default();
    let (index, _) = index_corpus(chunk_corpus(&docs, 24, 4).unwrap(), &embedder, None).unwrap();
    let hits = retrieve(&index, &embedder, "worst off patient minimum guarantee", 3).unwrap();

    let (profile, system) = build_profile(ProfileKind::Baseline, None, false, BiasSource::None, &texts).unwrap();
    let prompt = build_prompt(
        &profile,
        &system,
        AgentId::B,
        &cohort,
        &InteractionHistory::default(),
        Some(&hits),
        1,
        3,
    );
    assert!(!prompt.contains("REFERENCE PASSAGES"));
    for h in &hits.hits {
        assert!(!prompt.contains(&h.text));
    }
    for preamble in texts.preambles.values() {
        assert!(!prompt.contains(preamble.as_str()));
    }
    assert!(prompt.starts_with(texts.baseline.as_str()));
}

#[test]
fn aligned_retrieval_prompt_contains_exactly_k_passages() {
    let docs = load_corpus_dir(corpus_dir()).unwrap();
    let embedder = HashingEmbedder::default();
    let (index, _) = index_corpus(chunk_corpus(&docs, 24, 4).unwrap(), &embedder, None).unwrap();
    assert!(index.len() > 10);
    let texts = ProfileTexts::default();
    let mut r = rng(17);
    let cohort = random_cohort(&mut r, 1);
    let passage_line = Regex::new(r"(?m)^\[\w+ p\.\d+\] ").unwrap();
    for k in [1, 3, 5] {
        let hits = retrieve(&index, &embedder, "priority to the worst off", k).unwrap();
        let (profile, system) = build_profile(
            ProfileKind::Aligned,
            Some(Framework::Rawlsian),
            true,
            BiasSource::None,
            &texts,
        )
        .unwrap();
        let prompt = build_prompt(
            &profile,
            &system,
            AgentId::A,
            &cohort,
            &InteractionHistory::default(),
            Some(&hits),
            1,
            3,
        );
        assert!(prompt.starts_with(texts.preambles[&Framework::Rawlsian].as_str()));
        let passages = passage_line.find_iter(&prompt).count();
        assert_eq!(passages, k);
        for h in &hits.hits {
            assert!(prompt.contains(&h.text));
        }
    }

    // Inside a debate, only the aligned agent retrieves, once per round.
    let ctx = RetrievalContext {
        index: &index,
        embedder: &embedder,
    };
    let mut a = participant(
        AgentId::A,
        AgentProfile::aligned(Framework::Rawlsian, true),
        scripted(ScriptedPolicy::Rawlsian),
    );
    let mut b = participant(
        AgentId::B,
        AgentProfile::baseline(),
        scripted(ScriptedPolicy::Utilitarian),
    );
    let mut config = DebateConfig::new(Framework::Rawlsian, OpponentKind::Baseline);
    config.top_k = 4;
    let t = run_debate(&cohort, &mut a, &mut b, &config, Some(&ctx)).unwrap();
    assert_eq!(t.history.retrieval_logs.len(), 3);
    for (i, log) in t.history.retrieval_logs.iter().enumerate() {
        assert_eq!((log.round, log.agent), (i + 1, AgentId::A));
        assert_eq!((log.log.k, log.log.pages.len()), (4, 4));
    }
}

#[test]
fn render_parse_round_trip_on_random_integer_matrices() {
    let mut r = rng(18);
    for case in 0..1000 {
        let n = 1 + case % 12;
        let a = random_int_allocation(&mut r, n, 100);
        let parsed = parse_allocation(&render_allocation(&a), n).unwrap();
        assert_eq!(parsed.allocation, a);
        assert!(parsed.warnings.is_empty());
    }
}

#[test]
fn fixture_tables_round_trip_in_both_formats() {
    let fixture = load_paper_fixtures().unwrap().cohort32;
    for t in &fixture.tables {
        let n = fixture.cohort.len();
        assert_eq!(
            parse_allocation(&render_allocation(&t.allocation), n)
                .unwrap()
                .allocation,
            t.allocation
        );
        assert_eq!(
            parse_allocation(&latex_table(&t.allocation), n).unwrap().allocation,
            t.allocation
        );
    }
}

#[test]
fn parser_examples() {
    let text = "Patient 1: [1, 0, 0, 0, 0, 0]\nPatient 3: [0,1,0,10,12,0]\nPatient 2: [0, 0, 5, 0, 0, 0]";
    let parsed = parse_allocation(text, 3).unwrap();
    assert_eq!(parsed.allocation.row(2), &[0.0, 1.0, 0.0, 10.0, 12.0, 0.0]);
    assert!(parsed.warnings.is_empty());

    let zeros: String = (1..=8).map(|i| format!("Patient {i}: [0, 0, 0, 0, 0, 0]\n")).collect();
    let parsed = parse_allocation(&zeros, 8).unwrap();
    assert_eq!(parsed.allocation, Allocation::zeros(8, NUM_RESOURCES));
    assert!(parsed.warnings.is_empty());

    let parsed = parse_allocation("Patient 2: [1, 1, 1, 1, 1, 1]\nPatient 2: [2, 2, 2, 2, 2, 2]", 2).unwrap();
    assert_eq!(parsed.allocation.row(1), &[2.0; 6]);
    assert_eq!(parsed.allocation.row(0), &[0.0; 6]);
    assert_eq!(parsed.warnings.len(), 2);

    assert!(parse_allocation("no numbers at all", 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parser_never_emits_negative_entries(
        rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 6), 1..10),
        noise in "[a-z ,.]{0,40}",
    ) {
        let n = rows.len();
        let text: String = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
                format!("{noise}\nPatient {}: [{}]\n", i + 1, cells.join(", "))
            })
            .collect();
        let parsed = parse_allocation(&text, n).unwrap();
        prop_assert!(parsed.allocation.as_slice().iter().all(|v| *v >= 0.0));
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                prop_assert_eq!(parsed.allocation.get(i, j), v.max(0.0));
            }
        }
    }

    #[test]
    fn decimal_round_trip(values in proptest::collection::vec(0.0f64..1e6, 6..=48)) {
        let n = values.len() / 6;
        let a = Allocation::from_flat(n, 6, values[..n * 6].to_vec()).unwrap();
        prop_assert_eq!(parse_allocation(&render_allocation(&a), n).unwrap().allocation, a);
    }
}

#[test]
fn emergence_is_zero_when_the_finals_agree() {
    let mut r = rng(19);
    let cohort = random_cohort(&mut r, 1);
    let mut a = participant(
        AgentId::A,
        AgentProfile::aligned(Framework::Utilitarian, false),
        scripted(ScriptedPolicy::Utilitarian),
    );
    let mut b = participant(
        AgentId::B,
        AgentProfile::baseline(),
        scripted(ScriptedPolicy::Utilitarian),
    );
    let t = run_debate(
        &cohort,
        &mut a,
        &mut b,
        &DebateConfig::new(Framework::Utilitarian, OpponentKind::Baseline),
        None,
    )
    .unwrap();
    let fa = &t.final_of(AgentId::A).unwrap().allocation;
    let fb = &t.final_of(AgentId::B).unwrap().allocation;
    let joint = joint_allocation(fa, fb, &cohort.capacity.supply);
    assert_eq!(joint.rule, JointRule::Converged);
    for m in Metric::ALL {
        assert_eq!(emergence_delta(m, &t, &joint).unwrap().value, 0.0);
    }
}

#[test]
fn emergence_matches_hand_formula() {
    let mut r = rng(20);
    for case in 0..50 {
        let cohort = random_cohort(&mut r, case);
        let (mut a, mut b) = scripted_pair();
        let t = run_debate(
            &cohort,
            &mut a,
            &mut b,
            &DebateConfig::new(Framework::Rawlsian, OpponentKind::Baseline),
            None,
        )
        .unwrap();
        let fa = t.final_of(AgentId::A).unwrap().allocation.clone();
        let fb = t.final_of(AgentId::B).unwrap().allocation.clone();
        let joint = joint_allocation(&fa, &fb, &cohort.capacity.supply);
        let jr = metric_report(&cohort, &joint.allocation, &t.config.metrics).unwrap();
        let ra = metric_report(&cohort, &fa, &t.config.metrics).unwrap();
        let rb = metric_report(&cohort, &fb, &t.config.metrics).unwrap();
        assert!(jr.feasible);
        for m in Metric::ALL {
            let raw = jr.get(m) - (ra.get(m) + rb.get(m)) / 2.0;
            let want = if m.direction() == arena_core::metrics::Direction::LowerIsBetter {
                -raw
            } else {
                raw
            };
            let got = emergence_delta(m, &t, &joint).unwrap().value;
            assert!((got - want).abs() < 1e-12, "{m:?}: {got} vs {want}");
        }
    }
}

#[test]
fn joint_of_over_capacity_finals_is_rescaled() {
    let fixture = load_paper_fixtures().unwrap().cohort32;
    let a = &fixture.table(3, AgentId::A).unwrap().allocation;
    let b = &fixture.table(3, AgentId::B).unwrap().allocation;
    let joint = joint_allocation(a, b, &fixture.cohort.capacity.supply);
    assert_eq!(joint.rule, JointRule::MeanRescaled);
    // MedA averages to 51.5 against 45 and is scaled back; Nursing (56) fits.
    assert_eq!(joint.rescaled_columns, vec![2]);
    let totals = column_totals(&joint.allocation);
    assert!((totals[2] - 45.0).abs() < 1e-9);
    assert_eq!(totals[4], 56.0);
    assert!(joint.feasible);
}

#[test]
fn evaluation_is_idempotent_and_keeps_infeasible_proposals() {
    let fixture = load_paper_fixtures().unwrap().cohort32;
    let mut a = participant(
        AgentId::A,
        AgentProfile::aligned(fixture.framework, false),
        Box::new(ReplayAgent::new("a", fixture.replay_texts(AgentId::A))),
    );
    let mut b = participant(
        AgentId::B,
        AgentProfile::baseline(),
        Box::new(ReplayAgent::new("b", fixture.replay_texts(AgentId::B))),
    );
    let t = run_debate(
        &fixture.cohort,
        &mut a,
        &mut b,
        &DebateConfig::new(fixture.framework, OpponentKind::Baseline),
        None,
    )
    .unwrap();
    let first = evaluate_transcript(&t).unwrap();
    let second = evaluate_transcript(&t).unwrap();
    assert_eq!(
        serde_json::to_vec(&first).unwrap(),
        serde_json::to_vec(&second).unwrap()
    );
    let infeasible: Vec<(usize, AgentId)> = first
        .proposals
        .iter()
        .filter(|p| !p.feasible)
        .map(|p| (p.round, p.agent))
        .collect();
    assert!(infeasible.contains(&(2, AgentId::A)) && infeasible.contains(&(3, AgentId::A)));
    assert!(!first.final_of(AgentId::A).unwrap().feasible);
}
