//! Unit embeddings, cosine matching, prompt templates and the versioned text
//! embedding pool.

use thiserror::Error;

use crate::scalar::{dot, norm, Scalar};

/// Norms at or below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

/// Default embedding dimension at desk scale.
pub const DEFAULT_DIM: usize = 64;

/// Placeholder substituted with the class name in a [`PromptTemplate`].
pub const CLASS_PLACEHOLDER: &str = "{CLS}";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("vector norm is below {ZERO_NORM:e}")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {0:?} already present in pool")]
    DuplicateClass(String),
    #[error("class name is empty")]
    EmptyClassName,
    #[error("class name exceeds 65535 bytes")]
    NameTooLong,
    #[error("pool is empty")]
    EmptyPool,
    #[error("prompt template must contain exactly one {CLASS_PLACEHOLDER} (found {0})")]
    InvalidPrompt(usize),
    #[error("malformed pool encoding: {0}")]
    Malformed(String),
}

/// Unit-norm dense vector in the shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    /// Wraps values that are already unit norm (e.g. decoded from the wire).
    /// Callers are responsible for the norm; use [`normalize`] otherwise.
    pub(crate) fn from_unit(values: Vec<T>) -> Self {
        Self { values }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn neg(&self) -> Self {
        Self {
            values: self.values.iter().map(|&v| -v).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Embedding<U> {
        Embedding {
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Scales `raw` to unit L2 norm.
pub fn normalize<T: Scalar>(raw: &[T]) -> Result<Embedding<T>, EmbedError> {
    let n = norm(raw);
    if !(n.as_f64() > ZERO_NORM) {
        return Err(EmbedError::ZeroVector);
    }
    Ok(Embedding {
        values: raw.iter().map(|&v| v / n).collect(),
    })
}

/// Cosine similarity of two unit embeddings (their dot product).
pub fn cosine<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(dot(&a.values, &b.values))
}

/// Text prompt with a single class-name placeholder, e.g. `a photo of a {CLS}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pattern: String,
}

impl PromptTemplate {
    pub fn new(pattern: impl Into<String>) -> Result<Self, EmbedError> {
        let pattern = pattern.into();
        let n = pattern.matches(CLASS_PLACEHOLDER).count();
        if n != 1 {
            return Err(EmbedError::InvalidPrompt(n));
        }
        Ok(Self { pattern })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn render(&self, class_name: &str) -> Result<String, EmbedError> {
        if class_name.is_empty() {
            return Err(EmbedError::EmptyClassName);
        }
        Ok(self.pattern.replace(CLASS_PLACEHOLDER, class_name))
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            pattern: format!("a photo of a {CLASS_PLACEHOLDER}"),
        }
    }
}

/// Result of matching a query against every pool entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestMatch<T> {
    pub index: usize,
    pub similarity: T,
    /// Second highest similarity, or -1 for a single-entry pool.
    pub runner_up: T,
}

/// Ordered class-name → text-embedding map shared between cloud and edge.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingPool<T> {
    dim: usize,
    version: u64,
    prompt: PromptTemplate,
    names: Vec<String>,
    embeddings: Vec<Embedding<T>>,
}

impl<T: Scalar> TextEmbeddingPool<T> {
    pub fn new(dim: usize, prompt: PromptTemplate) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            version: 0,
            prompt,
            names: Vec::new(),
            embeddings: Vec::new(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn version(&self) -> u64 {
        self.version
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.names.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn prompt(&self) -> &PromptTemplate {
        &self.prompt
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn embedding(&self, index: usize) -> &Embedding<T> {
        &self.embeddings[index]
    }

    pub fn index_of(&self, class_name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == class_name)
    }

    pub fn get(&self, class_name: &str) -> Option<&Embedding<T>> {
        self.index_of(class_name).map(|i| &self.embeddings[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Embedding<T>)> {
        self.names.iter().map(String::as_str).zip(&self.embeddings)
    }

    /// Appends a class. Bumps the version by one.
    pub fn add(&mut self, class_name: &str, embedding: Embedding<T>) -> Result<(), EmbedError> {
        if class_name.is_empty() {
            return Err(EmbedError::EmptyClassName);
        }
        if class_name.len() > u16::MAX as usize {
            return Err(EmbedError::NameTooLong);
        }
        if embedding.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: embedding.dim(),
            });
        }
        if self.index_of(class_name).is_some() {
            return Err(EmbedError::DuplicateClass(class_name.to_owned()));
        }
        self.names.push(class_name.to_owned());
        self.embeddings.push(embedding);
        self.version += 1;
        Ok(())
    }

    /// Arg-max cosine over the pool. Ties resolve to the lowest index.
    pub fn best_match(&self, query: &Embedding<T>) -> Result<BestMatch<T>, EmbedError> {
        if self.is_empty() {
            return Err(EmbedError::EmptyPool);
        }
        if query.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let mut index = 0;
        let mut best = T::neg_infinity();
        let mut second = T::neg_infinity();
        for (i, e) in self.embeddings.iter().enumerate() {
            let s = dot(e.as_slice(), query.as_slice());
            if s > best {
                second = best;
                best = s;
                index = i;
            } else if s > second {
                second = s;
            }
        }
        let runner_up = if self.len() == 1 { -T::one() } else { second };
        Ok(BestMatch {
            index,
            similarity: best,
            runner_up,
        })
    }

    /// All similarities, in pool order.
    pub fn similarities(&self, query: &Embedding<T>) -> Result<Vec<T>, EmbedError> {
        if query.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        Ok(self
            .embeddings
            .iter()
            .map(|e| dot(e.as_slice(), query.as_slice()))
            .collect())
    }

    /// Little-endian wire encoding: `version u64 | count u32 | dim u32`, then
    /// per entry `name_len u16 | name | dim × f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (name, e) in self.iter() {
            crate::wire::put_str16(&mut out, name);
            for v in e.as_slice() {
                out.extend_from_slice(&v.as_f32().to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). The prompt is not part of the
    /// encoding and must be supplied.
    pub fn from_bytes(bytes: &[u8], prompt: PromptTemplate) -> Result<Self, EmbedError> {
        let mut cur = crate::wire::Reader::new(bytes);
        let malformed = |e: crate::wire::ReadError| EmbedError::Malformed(e.to_string());
        let version = cur.u64().map_err(malformed)?;
        let count = cur.u32().map_err(malformed)? as usize;
        let dim = cur.u32().map_err(malformed)? as usize;
        if dim == 0 {
            return Err(EmbedError::Malformed("zero dimension".into()));
        }
        let mut pool = Self::new(dim, prompt);
        for _ in 0..count {
            let name = cur.str16().map_err(malformed)?.to_owned();
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(T::from_wire(cur.f32().map_err(malformed)?));
            }
            let n = norm(&values).as_f64();
            if !n.is_finite() || (n - 1.0).abs() > 1e-3 {
                return Err(EmbedError::Malformed(format!(
                    "entry {name:?} is not unit norm ({n})"
                )));
            }
            pool.add(&name, Embedding::from_unit(values))?;
        }
        cur.finish().map_err(malformed)?;
        pool.version = version;
        Ok(pool)
    }
}
