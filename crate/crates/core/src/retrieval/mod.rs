//! Small retrieval layer: whitespace-token chunking, pluggable embedders, an
//! exact cosine index persisted with content hashes, and retrieval logs.

pub mod embed;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{cosine, Embedder, EmbeddingVector, HashingEmbedder, RemoteEmbedder, RemoteEmbedderConfig};

use crate::model::Framework;

pub const DEFAULT_CHUNK_SIZE: usize = 512;
pub const DEFAULT_OVERLAP: usize = 64;
pub const DEFAULT_TOP_K: usize = 5;

/// Separates pages inside corpus files.
pub const PAGE_BREAK: char = '\u{c}';

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("chunk size {size} must exceed overlap {overlap}")]
    InvalidChunking { size: usize, overlap: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("embedding chunk {ordinal} of {doc_id} failed: {message}")]
    Embed {
        doc_id: String,
        ordinal: usize,
        message: String,
    },
    #[error("remote embedder: {0}")]
    Remote(String),
    #[error("corpus I/O at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub doc_id: String,
    /// 1-based page of the chunk's first token when the source has page
    /// breaks, otherwise the 1-based chunk ordinal.
    pub page_hint: usize,
    pub ordinal: usize,
    /// Index of the first token in the document.
    pub start_token: usize,
    pub text: String,
}

impl DocumentChunk {
    pub fn token_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Sliding-window chunking over whitespace tokens with stride
/// `size - overlap`; the last partial window is kept.
pub fn chunk_document(
    doc_id: &str,
    text: &str,
    size: usize,
    overlap: usize,
) -> Result<Vec<DocumentChunk>, RetrievalError> {
    if size == 0 || size <= overlap {
        return Err(RetrievalError::InvalidChunking { size, overlap });
    }
    let has_pages = text.contains(PAGE_BREAK);
    let mut tokens: Vec<&str> = Vec::new();
    let mut pages: Vec<usize> = Vec::new();
    for (p, page) in text.split(PAGE_BREAK).enumerate() {
        for tok in page.split_whitespace() {
            tokens.push(tok);
            pages.push(p + 1);
        }
    }
    let mut chunks = Vec::new();
    if tokens.is_empty() {
        return Ok(chunks);
    }
    let stride = size - overlap;
    let mut start = 0;
    loop {
        let end = (start + size).min(tokens.len());
        let ordinal = chunks.len();
        chunks.push(DocumentChunk {
            doc_id: doc_id.to_string(),
            page_hint: if has_pages { pages[start] } else { ordinal + 1 },
            ordinal,
            start_token: start,
            text: tokens[start..end].join(" "),
        });
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// Reads every `.txt` file in `dir` (sorted by name); the file stem is the
/// document id.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<(String, String)>, RetrievalError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RetrievalError::Io { path, source }
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).map_err(io(&p))?;
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((id, text))
        })
        .collect()
}

pub fn chunk_corpus(
    docs: &[(String, String)],
    size: usize,
    overlap: usize,
) -> Result<Vec<DocumentChunk>, RetrievalError> {
    let mut out = Vec::new();
    for (id, text) in docs {
        out.extend(chunk_document(id, text, size, overlap)?);
    }
    Ok(out)
}

pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk: DocumentChunk,
    pub content_hash: String,
    pub embedding: EmbeddingVector,
}

/// Immutable exact-search index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    pub embedder_id: String,
    pub dim: usize,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStats {
    pub embedded: usize,
    pub reused: usize,
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Embeds every chunk, reusing embeddings from `previous` whose content
/// hash matches and whose embedder id is the same.
pub fn index_corpus(
    chunks: Vec<DocumentChunk>,
    embedder: &dyn Embedder,
    previous: Option<&VectorIndex>,
) -> Result<(VectorIndex, IndexStats), RetrievalError> {
    let id = embedder.id();
    let cache: HashMap<&str, &EmbeddingVector> = previous
        .filter(|p| p.embedder_id == id && p.dim == embedder.dim())
        .map(|p| {
            p.entries
                .iter()
                .map(|e| (e.content_hash.as_str(), &e.embedding))
                .collect()
        })
        .unwrap_or_default();

    let results: Vec<Result<(IndexEntry, bool), RetrievalError>> = chunks
        .into_par_iter()
        .map(|chunk| {
            let hash = content_hash(&chunk.text);
            if let Some(e) = cache.get(hash.as_str()) {
                return Ok((
                    IndexEntry {
                        chunk,
                        content_hash: hash,
                        embedding: (*e).clone(),
                    },
                    true,
                ));
            }
            let embedding = embedder
                .embed_document(&chunk.text)
                .map_err(|e| RetrievalError::Embed {
                    doc_id: chunk.doc_id.clone(),
                    ordinal: chunk.ordinal,
                    message: e.to_string(),
                })?;
            if embedding.dim() != embedder.dim() {
                return Err(RetrievalError::DimMismatch {
                    expected: embedder.dim(),
                    got: embedding.dim(),
                });
            }
            Ok((
                IndexEntry {
                    chunk,
                    content_hash: hash,
                    embedding,
                },
                false,
            ))
        })
        .collect();

    let mut stats = IndexStats::default();
    let mut entries = Vec::with_capacity(results.len());
    for r in results {
        let (entry, reused) = r?;
        if reused {
            stats.reused += 1;
        } else {
            stats.embedded += 1;
        }
        entries.push(entry);
    }
    Ok((
        VectorIndex {
            embedder_id: id,
            dim: embedder.dim(),
            entries,
        },
        stats,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub ordinal: usize,
    pub page_hint: usize,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub k: usize,
    pub hits: Vec<RetrievalHit>,
}

/// What a debate transcript records about one retrieval call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalLog {
    pub query: String,
    pub k: usize,
    pub pages: Vec<String>,
}

impl RetrievalResult {
    pub fn log(&self) -> RetrievalLog {
        RetrievalLog {
            query: self.query.clone(),
            k: self.k,
            pages: self
                .hits
                .iter()
                .map(|h| format!("{} p.{}", h.doc_id, h.page_hint))
                .collect(),
        }
    }

    /// Retrieved passages formatted for inclusion in a prompt.
    pub fn context_block(&self) -> String {
        self.hits
            .iter()
            .map(|h| format!("[{} p.{}] {}", h.doc_id, h.page_hint, h.text))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

fn rank(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
        .then_with(|| a.ordinal.cmp(&b.ordinal))
}

/// Exact top-`k` cosine retrieval with ties broken by `(doc_id, ordinal)`.
pub fn retrieve(
    index: &VectorIndex,
    embedder: &dyn Embedder,
    query: &str,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let q = embedder.embed_query(query)?;
    if q.dim() != index.dim {
        return Err(RetrievalError::DimMismatch {
            expected: index.dim,
            got: q.dim(),
        });
    }
    let mut hits: Vec<RetrievalHit> = index
        .entries
        .iter()
        .map(|e| RetrievalHit {
            doc_id: e.chunk.doc_id.clone(),
            ordinal: e.chunk.ordinal,
            page_hint: e.chunk.page_hint,
            score: cosine(&q, &e.embedding),
            text: e.chunk.text.clone(),
        })
        .collect();
    hits.sort_by(rank);
    hits.truncate(k);
    Ok(RetrievalResult {
        query: query.to_string(),
        k,
        hits,
    })
}

/// Keyword templates used to build debate queries, one per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTemplates {
    pub rounds: Vec<String>,
}

impl Default for QueryTemplates {
    fn default() -> Self {
        QueryTemplates {
            rounds: vec![
                "allocation of scarce medical resources, need, priority, fair distribution".into(),
                "objections, critique of the other allocation, justification of trade-offs".into(),
                "compromise, agreement, revised final allocation".into(),
            ],
        }
    }
}

impl QueryTemplates {
    /// `"<framework> ethics: <keywords for round>"`; rounds past the last
    /// template reuse the last one.
    pub fn query(&self, framework: Framework, round: usize) -> String {
        let keywords = self
            .rounds
            .get(round.saturating_sub(1))
            .or(self.rounds.last())
            .map(String::as_str)
            .unwrap_or("");
        format!("{} ethics: {keywords}", framework.display_name())
    }
}
