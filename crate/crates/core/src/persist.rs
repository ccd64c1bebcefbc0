//! Versioned JSON artifacts, atomic writes, content hashes and run
//! manifests.
//!
//! Every artifact is an envelope `{"schema_version": 1, "kind": ..., "data": ...}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arena::DebateTranscript;
use crate::eval::EvalRecord;
use crate::model::Cohort;
use crate::retrieval::VectorIndex;
use crate::stats::ComparisonReport;
use crate::welfare::{NondegeneracyReport, VerificationReport};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: expected kind `{expected}`, found `{found}`")]
    WrongKind {
        path: PathBuf,
        expected: ArtifactKind,
        found: String,
    },
    #[error("{path}: unsupported schema_version {found} (this build reads {SCHEMA_VERSION})")]
    UnsupportedVersion { path: PathBuf, found: u64 },
    #[error("{path}: content hash mismatch (recorded {recorded}, actual {actual})")]
    HashMismatch {
        path: PathBuf,
        recorded: String,
        actual: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Cohort,
    Transcript,
    Eval,
    Stats,
    RunManifest,
    CakeReport,
    NondegeneracyReport,
    VectorIndex,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 8] = [
        ArtifactKind::Cohort,
        ArtifactKind::Transcript,
        ArtifactKind::Eval,
        ArtifactKind::Stats,
        ArtifactKind::RunManifest,
        ArtifactKind::CakeReport,
        ArtifactKind::NondegeneracyReport,
        ArtifactKind::VectorIndex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::Cohort => "cohort",
            ArtifactKind::Transcript => "transcript",
            ArtifactKind::Eval => "eval",
            ArtifactKind::Stats => "stats",
            ArtifactKind::RunManifest => "run_manifest",
            ArtifactKind::CakeReport => "cake_report",
            ArtifactKind::NondegeneracyReport => "nondegeneracy_report",
            ArtifactKind::VectorIndex => "vector_index",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Checks that `data` deserializes into this kind's payload type.
    fn check_payload(self, data: serde_json::Value) -> Result<(), serde_json::Error> {
        fn check<T: DeserializeOwned>(v: serde_json::Value) -> Result<(), serde_json::Error> {
            serde_json::from_value::<T>(v).map(|_| ())
        }
        match self {
            ArtifactKind::Cohort => check::<Cohort>(data),
            ArtifactKind::Transcript => check::<DebateTranscript>(data),
            ArtifactKind::Eval => check::<EvalRecord>(data),
            ArtifactKind::Stats => check::<Vec<ComparisonReport>>(data),
            ArtifactKind::RunManifest => check::<RunManifest>(data),
            ArtifactKind::CakeReport => check::<VerificationReport>(data),
            ArtifactKind::NondegeneracyReport => check::<NondegeneracyReport>(data),
            ArtifactKind::VectorIndex => check::<VectorIndex>(data),
        }
    }
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    schema_version: u32,
    kind: ArtifactKind,
    data: &'a T,
}

#[derive(Deserialize)]
struct RawEnvelope {
    schema_version: u64,
    kind: String,
    data: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, PersistError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// Writes through a temporary sibling file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PersistError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Serializes `data` in an envelope (pretty JSON, trailing newline).
pub fn envelope_bytes<T: Serialize>(kind: ArtifactKind, data: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&EnvelopeRef {
        schema_version: SCHEMA_VERSION,
        kind,
        data,
    })
    .expect("artifact types serialize");
    bytes.push(b'\n');
    bytes
}

/// Writes an enveloped artifact atomically and returns its sha256.
pub fn write_artifact<T: Serialize>(path: &Path, kind: ArtifactKind, data: &T) -> Result<String, PersistError> {
    let bytes = envelope_bytes(kind, data);
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

fn read_raw(path: &Path) -> Result<RawEnvelope, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PersistError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path, kind: ArtifactKind) -> Result<T, PersistError> {
    let raw = read_raw(path)?;
    if raw.schema_version != SCHEMA_VERSION as u64 {
        return Err(PersistError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: raw.schema_version,
        });
    }
    if raw.kind != kind.name() {
        return Err(PersistError::WrongKind {
            path: path.to_path_buf(),
            expected: kind,
            found: raw.kind,
        });
    }
    serde_json::from_value(raw.data).map_err(|e| PersistError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// JSON files directly in `dir`, sorted by name; hidden files skipped.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>, PersistError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        let hidden = p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if p.is_file() && !hidden && p.extension().is_some_and(|e| e == "json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaViolation {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaReport {
    pub files_checked: usize,
    pub violations: Vec<SchemaViolation>,
}

impl SchemaReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), PersistError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "json")
            && !p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'))
        {
            out.push(p);
        }
    }
    Ok(())
}

/// Checks every `.json` file under `dir` (recursively) against the schema
/// its envelope declares.
pub fn validate_schemas(dir: &Path) -> Result<SchemaReport, PersistError> {
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    let mut report = SchemaReport::default();
    for path in files {
        report.files_checked += 1;
        let flag = |reason: String| SchemaViolation {
            path: path.clone(),
            reason,
        };
        let raw = match read_raw(&path) {
            Ok(r) => r,
            Err(e) => {
                report.violations.push(flag(e.to_string()));
                continue;
            }
        };
        if raw.schema_version != SCHEMA_VERSION as u64 {
            report.violations.push(flag(format!(
                "unmigratable schema_version {} (supported: {SCHEMA_VERSION})",
                raw.schema_version
            )));
            continue;
        }
        let Some(kind) = ArtifactKind::from_name(&raw.kind) else {
            report.violations.push(flag(format!("unknown kind `{}`", raw.kind)));
            continue;
        };
        if let Err(e) = kind.check_payload(raw.data) {
            report.violations.push(flag(format!("{kind} payload: {e}")));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory for outputs; as given for inputs.
    pub path: String,
    pub sha256: String,
}

/// Record of one command's inputs and outputs. Manifests chain: a
/// command's `inputs` include the manifests of the stages it consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    /// Only set when a nondeterministic backend took part, so that
    /// deterministic reruns produce identical manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub nondeterministic: bool,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let config_sha256 = sha256_hex(serde_json::to_string(&config).expect("config serializes").as_bytes());
        RunManifest {
            run_id: format!("{command}-{}", &config_sha256[..12]),
            command: command.to_string(),
            timestamp: None,
            config,
            config_sha256,
            nondeterministic: false,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), PersistError> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn add_output(&mut self, relative: &str, sha256: String) {
        self.outputs.push(FileEntry {
            path: relative.to_string(),
            sha256,
        });
    }

    /// Every referenced file must exist and match its recorded hash.
    pub fn verify(&self, manifest_dir: &Path) -> Vec<PersistError> {
        let mut problems = Vec::new();
        let inputs = self.inputs.iter().map(|e| (PathBuf::from(&e.path), e));
        let outputs = self.outputs.iter().map(|e| (manifest_dir.join(&e.path), e));
        for (path, entry) in inputs.chain(outputs) {
            match sha256_file(&path) {
                Ok(actual) if actual == entry.sha256 => {}
                Ok(actual) => problems.push(PersistError::HashMismatch {
                    path,
                    recorded: entry.sha256.clone(),
                    actual,
                }),
                Err(e) => problems.push(e),
            }
        }
        problems
    }

    pub fn write(&mut self, dir: &Path) -> Result<PathBuf, PersistError> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let path = dir.join(MANIFEST_FILE);
        write_artifact(&path, ArtifactKind::RunManifest, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, PersistError> {
        read_artifact(path, ArtifactKind::RunManifest)
    }
}
