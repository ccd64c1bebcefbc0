mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;

use arena_core::agents::{
    biased_allocation, build_profile, rawlsian_allocation, utilitarian_allocation, AgentBackend, AgentId, ChatBackend,
    ChatBackendConfig, DisfavorRule, GenerateRequest, InFlightLimiter, ProfileTexts, ScriptedAgent, ScriptedPolicy,
};
use arena_core::arena::{
    build_prompt, parse_allocation, render_allocation, run_debate, DebateConfig, InteractionHistory, OpponentKind,
    Participant,
};
use arena_core::http::RetryPolicy;
use arena_core::metrics::{cnss_vector, rmg};
use arena_core::model::{
    validate_allocation, AgentProfile, BiasSource, CapacityVariant, Cohort, Framework, ProfileKind, ResourceCapacity,
};

use common::*;

fn policies() -> Vec<ScriptedPolicy> {
    vec![
        ScriptedPolicy::Utilitarian,
        ScriptedPolicy::Rawlsian,
        ScriptedPolicy::Biased {
            rules: DisfavorRule::default_rules(),
        },
    ]
}

fn reply(policy: &ScriptedPolicy, cohort: &Cohort, round: usize) -> String {
    let history = InteractionHistory::default();
    let request = GenerateRequest {
        agent: AgentId::A,
        prompt: "",
        cohort,
        history: &history,
        round,
    };
    ScriptedAgent::new(policy.clone()).generate(&request).unwrap()
}

#[test]
fn scripted_replies_are_feasible_and_parse_cleanly() {
    let mut r = rng(30);
    for case in 0..1000 {
        let cohort = random_cohort(&mut r, case);
        for policy in policies() {
            let text = reply(&policy, &cohort, 1);
            let parsed = parse_allocation(&text, cohort.len()).unwrap();
            assert!(parsed.warnings.is_empty(), "{policy:?}: {:?}", parsed.warnings);
            assert_eq!(
                parsed.allocation,
                ScriptedAgent::new(policy.clone()).allocation(&cohort)
            );
            assert!(!parsed.justification.is_empty());
            let f = validate_allocation(&parsed.allocation, &cohort.capacity, cohort.len()).unwrap();
            assert!(f.feasible, "{policy:?} infeasible on cohort {case}: {:?}", f.violations);
            // Rounds change only the justification.
            let later = parse_allocation(&reply(&policy, &cohort, 3), cohort.len()).unwrap();
            assert_eq!(later.allocation, parsed.allocation);
        }
    }
}

#[test]
fn unit_resources_go_to_better_survival_then_lower_id() {
    let mut r = rng(31);
    let mut cohort = random_cohort(&mut r, 1);
    let icu = arena_core::model::Resource::Icu;
    for p in &mut cohort.patients {
        p.needs = vec![icu];
        p.survival_prob = 0.5;
    }
    cohort.patients[5].survival_prob = 0.9;
    cohort.capacity = ResourceCapacity::new(None, vec![2.0, 1.0, 10.0, 10.0, 10.0, 1.0]).unwrap();
    let a = utilitarian_allocation(&cohort);
    let winners: Vec<usize> = (0..cohort.len()).filter(|&i| a.get(i, 0) > 0.0).collect();
    // Patient 6 has the best outlook; the remaining bed goes to the lowest id.
    assert_eq!(winners, vec![0, 5]);
}

#[test]
fn biased_policy_zeroes_disfavored_patients() {
    let rules = DisfavorRule::default_rules();
    let mut r = rng(32);
    let mut with_target = 0;
    for case in 0..500 {
        let cohort = random_cohort(&mut r, case);
        let a = biased_allocation(&cohort, &rules);
        let disfavored: Vec<usize> = (0..cohort.len())
            .filter(|&i| rules.iter().any(|rule| rule.matches(&cohort.patients[i])))
            .collect();
        for &i in &disfavored {
            assert!(a.row(i).iter().all(|v| *v == 0.0));
        }
        if !disfavored.is_empty() {
            with_target += 1;
            assert_eq!(rmg(&cnss_vector(&cohort, &a).unwrap()).unwrap(), 0.0);
        }
    }
    assert!(with_target > 100, "bundled slots should often include non-citizens");
}

#[test]
fn rawlsian_floor_dominates_utilitarian_on_tight_cohorts() {
    let mut r = rng(33);
    let mut better_or_equal = 0;
    let total = 1000;
    for case in 0..total {
        let mut cohort = random_cohort(&mut r, case);
        cohort.capacity = arena_core::model::capacity_for_variant(CapacityVariant::Tight);
        let floor = |a| rmg(&cnss_vector(&cohort, &a).unwrap()).unwrap();
        if floor(rawlsian_allocation(&cohort)) >= floor(utilitarian_allocation(&cohort)) {
            better_or_equal += 1;
        }
    }
    assert!(better_or_equal * 10 >= total * 9, "{better_or_equal}/{total}");
}

#[test]
fn ample_capacity_meets_every_need() {
    let mut r = rng(34);
    for case in 0..200 {
        let mut cohort = random_cohort(&mut r, case);
        cohort.capacity = ResourceCapacity::new(None, vec![100.0, 100.0, 1000.0, 1000.0, 1000.0, 100.0]).unwrap();
        let floor = rmg(&cnss_vector(&cohort, &rawlsian_allocation(&cohort)).unwrap()).unwrap();
        assert_eq!(floor, 1.0);
    }
}

#[test]
fn adversarial_preamble_is_loaded_byte_for_byte() {
    let path = Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/adversarial/agent_c_prompt.txt"
    ));
    let bytes = std::fs::read(path).unwrap();
    let texts = ProfileTexts::default().with_adversarial_file(path).unwrap();
    let (profile, system) =
        build_profile(ProfileKind::Biased, None, false, BiasSource::AdversarialPrompt, &texts).unwrap();
    assert_eq!(system.as_bytes(), &bytes[..]);

    let mut r = rng(35);
    let cohort = random_cohort(&mut r, 1);
    let prompt = build_prompt(
        &profile,
        &system,
        AgentId::C,
        &cohort,
        &InteractionHistory::default(),
        None,
        1,
        3,
    );
    assert!(prompt.starts_with(system.trim()));

    // Without the file the biased profile cannot be built.
    assert!(build_profile(
        ProfileKind::Biased,
        None,
        false,
        BiasSource::AdversarialPrompt,
        &ProfileTexts::default()
    )
    .is_err());
}

// ---- chat backend against a local mock server ------------------------------

struct Captured {
    bodies: Vec<serde_json::Value>,
}

/// Serves `responses` in order, one connection each, recording request
/// bodies. `None` as the body means "echo the last user message".
fn mock_server(responses: Vec<(u16, Option<String>)>) -> (String, Arc<Mutex<Captured>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let captured = Arc::new(Mutex::new(Captured { bodies: Vec::new() }));
    let sink = Arc::clone(&captured);
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0u8; length];
            reader.read_exact(&mut buf).unwrap();
            let request: serde_json::Value = serde_json::from_slice(&buf).unwrap();
            let content = match body {
                Some(b) => b,
                None => {
                    let echoed = request["messages"].as_array().unwrap().last().unwrap()["content"].clone();
                    serde_json::json!({"id": "mock", "choices": [{"message": {"role": "assistant", "content": echoed}}]})
                        .to_string()
                }
            };
            sink.lock().unwrap().bodies.push(request);
            let reason = if status == 200 { "OK" } else { "Internal Server Error" };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{content}",
                content.len()
            );
        }
    });
    (url, captured)
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        initial_delay_ms: 1,
        max_delay_ms: 2,
        timeout_secs: 10,
    }
}

#[test]
fn chat_prompt_reaches_the_wire_unchanged() {
    let (url, captured) = mock_server(vec![(200, None)]);
    let mut config = ChatBackendConfig::new(url, "mock-model");
    config.retry = fast_retry(0);
    let backend = ChatBackend::new(config, InFlightLimiter::new(1)).unwrap();
    let prompt = "Patients:\n  \"quoted\" \\ backslash, tab\t, unicode é —\nend\n";
    assert_eq!(backend.chat(prompt).unwrap(), prompt);
    let bodies = &captured.lock().unwrap().bodies;
    assert_eq!(bodies.len(), 1);
    assert_eq!(
        bodies[0]["messages"].as_array().unwrap().last().unwrap()["content"],
        prompt
    );
    assert_eq!(bodies[0]["model"], "mock-model");
}

#[test]
fn server_errors_are_retried_then_reported() {
    let (url, captured) = mock_server(vec![(500, Some("{}".into())); 3]);
    let mut config = ChatBackendConfig::new(url, "m");
    config.retry = fast_retry(2);
    let backend = ChatBackend::new(config, InFlightLimiter::new(1)).unwrap();
    let err = backend.chat("hello").unwrap_err().to_string();
    assert!(err.contains("3 attempt"), "{err}");
    assert_eq!(captured.lock().unwrap().bodies.len(), 3);
}

#[test]
fn transient_error_then_success() {
    let ok = serde_json::json!({"choices": [{"message": {"content": "fine"}}]}).to_string();
    let (url, captured) = mock_server(vec![(500, Some("{}".into())), (200, Some(ok))]);
    let mut config = ChatBackendConfig::new(url, "m");
    config.retry = fast_retry(2);
    let backend = ChatBackend::new(config, InFlightLimiter::new(1)).unwrap();
    assert_eq!(backend.chat("x").unwrap(), "fine");
    assert_eq!(captured.lock().unwrap().bodies.len(), 2);
}

#[test]
fn chat_backed_debate_records_timestamps() {
    let mut r = rng(36);
    let cohort = random_cohort(&mut r, 1);
    let text = format!(
        "{}Justification: echo.\n",
        render_allocation(&rawlsian_allocation(&cohort))
    );
    let body = serde_json::json!({"choices": [{"message": {"content": text}}]}).to_string();
    let (url, captured) = mock_server(vec![(200, Some(body)); 3]);
    let mut config = ChatBackendConfig::new(url, "m");
    config.retry = fast_retry(0);
    let chat = ChatBackend::new(config, InFlightLimiter::new(1)).unwrap();
    let mut a = Participant {
        agent: AgentId::A,
        profile: AgentProfile::aligned(Framework::Rawlsian, false),
        system_text: String::new(),
        backend: Box::new(chat),
    };
    let mut b = Participant {
        agent: AgentId::B,
        profile: AgentProfile::baseline(),
        system_text: String::new(),
        backend: Box::new(ScriptedAgent::new(ScriptedPolicy::Utilitarian)),
    };
    let t = run_debate(
        &cohort,
        &mut a,
        &mut b,
        &DebateConfig::new(Framework::Rawlsian, OpponentKind::Baseline),
        None,
    )
    .unwrap();
    assert!(t.is_completed());
    assert!(t.timestamps.is_some());
    assert!(!t.agents[0].deterministic);
    assert_eq!(captured.lock().unwrap().bodies.len(), 3);
}
