use serde::{Deserialize, Serialize};
use serde_json::json;

use super::RetrievalError;
use crate::http::{JsonClient, RetryPolicy};
use crate::rng::label_hash;

pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.values {
                *v = (*v as f64 / n) as f32;
            }
        }
        self
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| *x as f64 * *y as f64).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

/// Turns text into fixed-dimension vectors.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Identifies the backend and model; indexes built with a different id
    /// are never reused.
    fn id(&self) -> String;

    fn embed_document(&self, text: &str) -> Result<EmbeddingVector, RetrievalError>;

    fn embed_query(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        self.embed_document(text)
    }
}

/// Deterministic offline embedder: lower-cased word unigrams and bigrams
/// are hashed into signed buckets and the result is L2-normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: DEFAULT_DIM }
    }
}

fn normalize_token(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        HashingEmbedder { dim }
    }

    fn add(&self, values: &mut [f32], feature: &str) {
        let h = label_hash(feature);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 1 { -1.0 } else { 1.0 };
        values[bucket] += sign;
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("hashing-ngram-{}", self.dim)
    }

    fn embed_document(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let tokens: Vec<String> = text
            .split_whitespace()
            .map(normalize_token)
            .filter(|t| !t.is_empty())
            .collect();
        let mut values = vec![0.0f32; self.dim];
        for t in &tokens {
            self.add(&mut values, &format!("u:{t}"));
        }
        for pair in tokens.windows(2) {
            self.add(&mut values, &format!("b:{} {}", pair[0], pair[1]));
        }
        Ok(EmbeddingVector { values }.normalized())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedApi {
    /// `POST {base}/v1/embeddings` with `{model, input}`.
    OpenAi,
    /// `POST {base}/api/embeddings` with `{model, prompt}`.
    Ollama,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub model: String,
    pub api: EmbedApi,
    pub dim: usize,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Prepended to documents (some models expect e.g. "search_document: ").
    #[serde(default)]
    pub document_prefix: String,
    #[serde(default)]
    pub query_prefix: String,
    #[serde(default)]
    pub retry: RetryPolicy,
}

/// Client for a remote JSON embedding endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, RetrievalError> {
        let api_key = config.api_key_env.as_ref().and_then(|var| std::env::var(var).ok());
        let client =
            JsonClient::new(config.retry.clone(), api_key).map_err(|e| RetrievalError::Remote(e.to_string()))?;
        Ok(RemoteEmbedder { config, client })
    }

    fn request(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let base = self.config.base_url.trim_end_matches('/');
        let (url, body) = match self.config.api {
            EmbedApi::OpenAi => (
                format!("{base}/v1/embeddings"),
                json!({"model": self.config.model, "input": text}),
            ),
            EmbedApi::Ollama => (
                format!("{base}/api/embeddings"),
                json!({"model": self.config.model, "prompt": text}),
            ),
        };
        let reply = self
            .client
            .post(&url, &body)
            .map_err(|e| RetrievalError::Remote(e.to_string()))?;
        let raw = match self.config.api {
            EmbedApi::OpenAi => reply.pointer("/data/0/embedding"),
            EmbedApi::Ollama => reply.get("embedding"),
        }
        .and_then(|v| v.as_array())
        .ok_or_else(|| RetrievalError::Remote("reply has no embedding array".into()))?;
        let values = raw
            .iter()
            .map(|v| v.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| RetrievalError::Remote("embedding has non-numeric entries".into()))?;
        if values.len() != self.config.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.config.dim,
                got: values.len(),
            });
        }
        Ok(EmbeddingVector { values }.normalized())
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn id(&self) -> String {
        format!("remote:{}:{}", self.config.model, self.config.dim)
    }

    fn embed_document(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        self.request(&format!("{}{}", self.config.document_prefix, text))
    }

    fn embed_query(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        self.request(&format!("{}{}", self.config.query_prefix, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_unit() {
        let e = HashingEmbedder::default();
        let a = e.embed_document("justice as fairness").unwrap();
        let b = e.embed_document("justice as fairness").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), DEFAULT_DIM);
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn disjoint_vocabularies_are_nearly_orthogonal() {
        let e = HashingEmbedder::default();
        // Paragraph-length texts; stray bucket collisions shrink like
        // 1/sqrt(features).
        let text = |prefix: &str| (0..60).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ");
        let a = e.embed_document(&text("alpha")).unwrap();
        let b = e.embed_document(&text("omega")).unwrap();
        assert!(cosine(&a, &b).abs() < 0.1, "{}", cosine(&a, &b));
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        let e = HashingEmbedder::new(16);
        let z = e.embed_document("   ").unwrap();
        assert_eq!(z.norm(), 0.0);
        assert_eq!(cosine(&z, &z), 0.0);
    }

    #[test]
    fn unreachable_remote_reports_error() {
        let e = RemoteEmbedder::new(RemoteEmbedderConfig {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            api: EmbedApi::OpenAi,
            dim: 8,
            api_key_env: None,
            document_prefix: String::new(),
            query_prefix: String::new(),
            retry: RetryPolicy {
                max_retries: 0,
                initial_delay_ms: 1,
                max_delay_ms: 1,
                timeout_secs: 2,
            },
        })
        .unwrap();
        assert!(matches!(e.embed_query("q"), Err(RetrievalError::Remote(_))));
    }
}
