use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde_json::json;

use arena_core::agents::chat::InFlightLimiter;
use arena_core::agents::{
    build_profile, AgentBackend, AgentId, ChatBackend, ChatBackendConfig, DisfavorRule, ProfileTexts, ReplayAgent,
    ScriptedAgent, ScriptedPolicy,
};
use arena_core::arena::{
    run_debate, DebateConfig, DebateStatus, DebateTranscript, OpponentKind, Participant, RetrievalContext,
};
use arena_core::model::{AgentProfile, BiasSource, Cohort, Framework, ProfileKind};
use arena_core::persist::{read_artifact, sha256_file, write_artifact, ArtifactKind, RunManifest};
use arena_core::retrieval::{
    chunk_corpus, index_corpus, load_corpus_dir, Embedder, HashingEmbedder, VectorIndex, DEFAULT_CHUNK_SIZE,
    DEFAULT_OVERLAP,
};

use crate::commands::{chain_input, io, load_cohorts, opponent_name};
use crate::{parse_frameworks, BackendArg, CliError, CliResult, RunArgs};

const INDEX_FILE: &str = "vector_index.json";

pub fn transcript_file(framework: Framework, opponent: OpponentKind, cohort_id: u64) -> String {
    format!(
        "transcript_{}_{}_{cohort_id:04}.json",
        framework.name(),
        opponent_name(opponent)
    )
}

/// Scripted policy for agent A under a framework: the utilitarian
/// framework gets the survival-greedy policy, every other framework the
/// maximin policy.
pub fn scripted_policy_for(framework: Framework) -> ScriptedPolicy {
    match framework {
        Framework::Utilitarian => ScriptedPolicy::Utilitarian,
        _ => ScriptedPolicy::Rawlsian,
    }
}

struct Shared {
    texts: ProfileTexts,
    limiter: Arc<InFlightLimiter>,
    chat: Option<ChatBackendConfig>,
    replay: BTreeMap<u64, BTreeMap<String, Vec<String>>>,
}

fn load_replay(dir: &Path, cohorts: &[Cohort]) -> CliResult<BTreeMap<u64, BTreeMap<String, Vec<String>>>> {
    let mut out = BTreeMap::new();
    for c in cohorts {
        let p = dir.join(format!("cohort_{}.json", c.cohort_id));
        let text = std::fs::read_to_string(&p).map_err(io(&p))?;
        let texts: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        out.insert(c.cohort_id, texts);
    }
    Ok(out)
}

fn backend(
    args: &RunArgs,
    shared: &Shared,
    agent: AgentId,
    framework: Framework,
    cohort_id: u64,
) -> CliResult<Box<dyn AgentBackend>> {
    Ok(match args.backend {
        BackendArg::Scripted => Box::new(ScriptedAgent::new(match agent {
            AgentId::A => scripted_policy_for(framework),
            AgentId::B => ScriptedPolicy::Utilitarian,
            AgentId::C => ScriptedPolicy::Biased {
                rules: DisfavorRule::default_rules(),
            },
        })),
        BackendArg::Chat => {
            let config = shared.chat.clone().expect("chat config checked");
            Box::new(ChatBackend::new(config, shared.limiter.clone()).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        BackendArg::Replay => {
            let texts = shared
                .replay
                .get(&cohort_id)
                .and_then(|m| m.get(&agent.to_string()))
                .cloned()
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "replay file for cohort {cohort_id} has no texts for agent {agent}"
                    ))
                })?;
            Box::new(ReplayAgent::new(format!("cohort{cohort_id}-{agent}"), texts))
        }
    })
}

fn participants(
    args: &RunArgs,
    shared: &Shared,
    framework: Framework,
    opponent: OpponentKind,
    cohort_id: u64,
) -> CliResult<(Participant, Participant)> {
    let cfg = |e: arena_core::agents::AgentError| CliError::Usage(e.to_string());
    let (a_profile, a_text) = build_profile(
        ProfileKind::Aligned,
        Some(framework),
        args.corpus.is_some(),
        BiasSource::None,
        &shared.texts,
    )
    .map_err(cfg)?;
    let (o_profile, o_text) = match opponent {
        OpponentKind::Baseline => {
            build_profile(ProfileKind::Baseline, None, false, BiasSource::None, &shared.texts).map_err(cfg)?
        }
        OpponentKind::Biased if args.backend == BackendArg::Chat => build_profile(
            ProfileKind::Biased,
            None,
            false,
            BiasSource::AdversarialPrompt,
            &shared.texts,
        )
        .map_err(cfg)?,
        // Scripted and replayed opponents do not read their system text.
        OpponentKind::Biased => (
            AgentProfile::biased(BiasSource::AdversarialPrompt),
            shared.texts.adversarial.clone().unwrap_or_default(),
        ),
    };
    let opp_id = opponent.agent_id();
    Ok((
        Participant {
            agent: AgentId::A,
            profile: a_profile,
            system_text: a_text,
            backend: backend(args, shared, AgentId::A, framework, cohort_id)?,
        },
        Participant {
            agent: opp_id,
            profile: o_profile,
            system_text: o_text,
            backend: backend(args, shared, opp_id, framework, cohort_id)?,
        },
    ))
}

fn build_index(corpus: &Path, out: &Path, embedder: &dyn Embedder) -> CliResult<VectorIndex> {
    let docs = load_corpus_dir(corpus).map_err(|e| CliError::Io(e.to_string()))?;
    let chunks =
        chunk_corpus(&docs, DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP).map_err(|e| CliError::Usage(e.to_string()))?;
    let index_path = out.join(INDEX_FILE);
    let previous: Option<VectorIndex> = read_artifact(&index_path, ArtifactKind::VectorIndex).ok();
    let (index, stats) = index_corpus(chunks, embedder, previous.as_ref()).map_err(|e| CliError::Io(e.to_string()))?;
    if stats.embedded > 0 || previous.is_none() {
        write_artifact(&index_path, ArtifactKind::VectorIndex, &index)?;
    }
    println!(
        "indexed {} chunk(s): {} embedded, {} reused",
        index.len(),
        stats.embedded,
        stats.reused
    );
    Ok(index)
}

enum Outcome {
    Skipped,
    Completed,
    Failed(String),
}

pub fn run(args: &RunArgs) -> CliResult {
    let frameworks = parse_frameworks(&args.framework)?;
    let opponent: OpponentKind = args.opponent.into();
    if opponent == OpponentKind::Biased && !args.allow_adversarial {
        return Err(CliError::Usage(
            "the biased opponent is adversarial by design and is disabled by default; \
             pass --allow-adversarial to run it (for robustness experiments only)"
                .into(),
        ));
    }
    if args.rounds == 0 {
        return Err(CliError::Usage("--rounds must be at least 1".into()));
    }
    let cohorts = load_cohorts(&args.cohorts)?;

    let mut texts = ProfileTexts::default();
    if let Some(dir) = &args.prompts_dir {
        texts = texts.with_overrides(dir).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if let Some(p) = &args.adversarial_prompt {
        texts = texts
            .with_adversarial_file(p)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let chat = match args.backend {
        BackendArg::Chat => {
            let endpoint = args
                .endpoint
                .clone()
                .ok_or_else(|| CliError::Usage("chat backend needs --endpoint or ARENA_ENDPOINT".into()))?;
            let model = args
                .model
                .clone()
                .ok_or_else(|| CliError::Usage("chat backend needs --model or ARENA_MODEL".into()))?;
            let mut c = ChatBackendConfig::new(endpoint, model);
            c.temperature = args.temperature;
            c.api_key_env = Some(args.api_key_env.clone());
            c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            if opponent == OpponentKind::Biased && texts.adversarial.is_none() {
                return Err(CliError::Usage(
                    "a chat-backed biased opponent needs --adversarial-prompt FILE".into(),
                ));
            }
            Some(c)
        }
        _ => None,
    };
    let replay = match (args.backend, &args.replay_dir) {
        (BackendArg::Replay, Some(dir)) => load_replay(dir, &cohorts)?,
        (BackendArg::Replay, None) => return Err(CliError::Usage("replay backend needs --replay-dir".into())),
        _ => BTreeMap::new(),
    };
    let shared = Shared {
        texts,
        limiter: InFlightLimiter::new(args.jobs),
        chat,
        replay,
    };

    std::fs::create_dir_all(&args.out).map_err(io(&args.out))?;
    let embedder = HashingEmbedder::default();
    let index = match &args.corpus {
        Some(c) => Some(build_index(c, &args.out, &embedder)?),
        None => None,
    };
    let retrieval = index.as_ref().map(|index| RetrievalContext {
        index,
        embedder: &embedder,
    });

    let tasks: Vec<(Framework, &Cohort)> = frameworks
        .iter()
        .flat_map(|f| cohorts.iter().map(move |c| (*f, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let outcomes: Vec<CliResult<(PathBuf, Outcome)>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(framework, cohort)| {
                let mut config = DebateConfig::new(*framework, opponent);
                config.rounds = args.rounds;
                config.a_first = !args.opponent_first;
                config.top_k = args.top_k;
                let path = args.out.join(transcript_file(*framework, opponent, cohort.cohort_id));
                if let Ok(existing) = read_artifact::<DebateTranscript>(&path, ArtifactKind::Transcript) {
                    if existing.is_completed() && existing.cohort == **cohort && existing.config == config {
                        return Ok((path, Outcome::Skipped));
                    }
                }
                let (mut a, mut b) = participants(args, &shared, *framework, opponent, cohort.cohort_id)?;
                let t = run_debate(cohort, &mut a, &mut b, &config, retrieval.as_ref())
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                write_artifact(&path, ArtifactKind::Transcript, &t)?;
                let outcome = match &t.status {
                    DebateStatus::Completed => Outcome::Completed,
                    DebateStatus::Failed {
                        agent, round, reason, ..
                    } => Outcome::Failed(format!(
                        "cohort {} ({}): agent {agent} round {round}: {reason}",
                        cohort.cohort_id, framework
                    )),
                };
                Ok((path, outcome))
            })
            .collect()
    });

    let mut manifest = RunManifest::new(
        "run",
        json!({
            "cohorts": args.cohorts,
            "frameworks": frameworks,
            "opponent": opponent,
            "backend": format!("{:?}", args.backend).to_lowercase(),
            "rounds": args.rounds,
            "a_first": !args.opponent_first,
            "top_k": args.top_k,
            "corpus": args.corpus,
            "model": args.model,
            "endpoint": args.endpoint,
            "temperature": args.temperature,
        }),
    );
    chain_input(&mut manifest, &args.cohorts)?;
    if args.backend == BackendArg::Chat {
        manifest.nondeterministic = true;
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        manifest.timestamp = Some(secs.to_string());
    }
    let (mut executed, mut skipped) = (0usize, 0usize);
    let mut failures = Vec::new();
    for o in outcomes {
        let (path, outcome) = o?;
        match outcome {
            Outcome::Skipped => skipped += 1,
            Outcome::Completed => executed += 1,
            Outcome::Failed(msg) => {
                executed += 1;
                failures.push(msg);
            }
        }
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        manifest.add_output(&name, sha256_file(&path)?);
    }
    if index.is_some() {
        manifest.add_output(INDEX_FILE, sha256_file(&args.out.join(INDEX_FILE))?);
    }
    manifest.write(&args.out)?;
    println!(
        "debates executed: {executed}, skipped (already complete): {skipped}, failed: {}",
        failures.len()
    );
    for f in &failures {
        eprintln!("  failed: {f}");
    }
    Ok(())
}
