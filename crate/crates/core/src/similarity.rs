//! Lexical text embeddings for dedup and prompt-pool rotation.
//!
//! The default provider hashes character 3-grams (taken per whitespace token,
//! padded with a leading and trailing space) into a fixed 4096-bucket
//! term-frequency vector and L2-normalizes it. That gives a deterministic
//! relative-similarity signal with no model dependency; a remote neural
//! encoder can be swapped in behind [`Embedder`] without touching callers.

/// Fixed-length embedding with its dimension carried alongside the values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimilarityError {
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> EmbeddingVector;
    fn dimension(&self) -> usize;
}

pub const DEFAULT_DIMENSION: usize = 4096;

/// Character 3-gram embedder with FNV-1a bucket hashing.
pub struct HashedNgramEmbedder {
    dimension: usize,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl HashedNgramEmbedder {
    pub fn with_dimension(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashedNgramEmbedder { dimension }
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for byte in bytes {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

impl Embedder for HashedNgramEmbedder {
    fn embed(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dimension];
        let lowered = text.to_lowercase();
        for token in lowered.split_whitespace() {
            // Pad each token so grams never straddle a word boundary; the
            // embedding of "a b" is then the gram-count sum of "a" and "b".
            let padded: Vec<char> = std::iter::once(' ')
                .chain(token.chars())
                .chain(std::iter::once(' '))
                .collect();
            for window in padded.windows(3) {
                let gram: String = window.iter().collect();
                let bucket = (fnv1a(gram.as_bytes()) % self.dimension as u64) as usize;
                values[bucket] += 1.0;
            }
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        EmbeddingVector::new(values)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Cosine of the angle between two vectors; 0 when either is the zero vector.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.dimension() != b.dimension() {
        return Err(SimilarityError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

/// Cosine between the embeddings of two texts under one provider.
pub fn text_similarity(embedder: &dyn Embedder, a: &str, b: &str) -> f64 {
    cosine(&embedder.embed(a), &embedder.embed(b)).expect("same provider, same dimension")
}
