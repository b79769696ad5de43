//! Text embeddings and cosine similarity for node lookup.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Node;

/// Dimension of the built-in hashed bag-of-tokens provider.
pub const BUILTIN_DIMENSION: usize = 4096;

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(components: Vec<f64>) -> Result<Self, EmbedError> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self(components))
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| *c == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|c| c * factor).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedding has a non-finite component")]
    NonFinite,
    #[error("embedding provider `{provider}` failed: {detail}")]
    Provider { provider: String, detail: String },
    #[error("embedding provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding dimension {got} does not match provider dimension {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cannot compare embeddings of dimension {left} and {right}")]
pub struct DimensionMismatch {
    pub left: usize,
    pub right: usize,
}

/// Source of text embeddings. All vectors from one provider share
/// [`Embedder::dimension`].
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
}

/// FNV-1a, 64 bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Bucket a token lands in for a hashed embedding of `dimension` slots.
pub fn token_bucket(token: &str, dimension: usize) -> usize {
    (fnv1a(token.as_bytes()) % dimension as u64) as usize
}

/// Deterministic offline provider: token counts hashed into a fixed number
/// of buckets, then L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedTokenEmbedder {
    dimension: usize,
}

impl HashedTokenEmbedder {
    pub const fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashedTokenEmbedder {
    fn default() -> Self {
        Self::new(BUILTIN_DIMENSION)
    }
}

impl Embedder for HashedTokenEmbedder {
    fn name(&self) -> &str {
        "hashed-tokens"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut v = vec![0.0; self.dimension];
        for token in tokenize(text) {
            v[token_bucket(&token, self.dimension)] += 1.0;
        }
        let norm = libm::sqrt(v.iter().map(|c| c * c).sum::<f64>());
        if norm > 0.0 {
            v.iter_mut().for_each(|c| *c /= norm);
        }
        Ok(EmbeddingVector(v))
    }
}

/// Cosine similarity, clamped to `[-1, 1]`; zero when either side is the
/// zero vector.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DimensionMismatch> {
    if a.dimension() != b.dimension() {
        return Err(DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    // sorted so that swapping the arguments gives a bit-identical result
    let (lo, hi) = if na <= nb { (na, nb) } else { (nb, na) };
    Ok((dot / (libm::sqrt(lo) * libm::sqrt(hi))).clamp(-1.0, 1.0))
}

/// Text a node is embedded as: one `key: value` line per attribute, keys in
/// sorted order.
pub fn canonical_text(node: &Node) -> String {
    let mut out = String::new();
    for (i, (k, v)) in node.attributes.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(k);
        out.push_str(": ");
        out.push_str(v);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Minimum cosine score for a node to match a hint.
    pub theta: f64,
    /// Maximum number of matches kept, best first.
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("theta must lie in [-1, 1], got {0}")]
    Theta(f64),
    #[error("top_k must be at least 1")]
    TopK,
}

impl SimilarityConfig {
    pub fn new(theta: f64, top_k: usize) -> Result<Self, ConfigError> {
        if !(-1.0..=1.0).contains(&theta) {
            return Err(ConfigError::Theta(theta));
        }
        if top_k == 0 {
            return Err(ConfigError::TopK);
        }
        Ok(Self { theta, top_k })
    }

    pub fn unlimited(theta: f64) -> Result<Self, ConfigError> {
        Self::new(theta, usize::MAX)
    }
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            top_k: DEFAULT_TOP_K,
        }
    }
}
