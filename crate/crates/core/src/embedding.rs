//! Pretrained word-embedding model: loading, lookup, expression vectors,
//! cosine similarity and exact nearest-neighbor search.
//!
//! Tokens are stored in normalized form: lowercase, with runs of internal
//! whitespace replaced by a single underscore, so "New York" and "new_york"
//! resolve to the same entry.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: duplicate token `{token}`")]
    DuplicateToken { line: usize, token: String },
    #[error("embedding model contains no vectors")]
    EmptyModel,
    #[error("header declares {declared} vectors but {found} were read")]
    CountMismatch { declared: usize, found: usize },
    #[error("every token of the expression is out of vocabulary")]
    AllTokensOov,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine undefined for an all-zero vector")]
    ZeroVector,
    #[error("token `{0}` is out of vocabulary")]
    TokenOov(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// Canonical vocabulary form of a token or phrase.
pub fn normalize_token(token: &str) -> String {
    token
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// A dense real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Self {
        Vector(components)
    }

    pub fn zeros(dimension: usize) -> Self {
        Vector(vec![0.0; dimension])
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Component-wise `self += other`.
    pub fn add_assign(&mut self, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += b;
        }
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|c| c * factor).collect())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn cosine_with_norms(u: &[f64], u_norm: f64, v: &[f64], v_norm: f64) -> f64 {
    (dot(u, v) / (u_norm * v_norm)).clamp(-1.0, 1.0)
}

/// Cosine similarity `dot(u, v) / (|u| |v|)`.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    if u.dimension() != v.dimension() {
        return Err(EmbeddingError::DimensionMismatch(u.dimension(), v.dimension()));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(cosine_with_norms(&u.0, nu, &v.0, nv))
}

/// Immutable vocabulary of normalized tokens and their vectors.
///
/// Vectors live in one row-major buffer; norms are precomputed at load.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    dimension: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbeddingModel {
    /// Builds a model from `(token, vector)` pairs. Tokens are normalized.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut builder = Builder::default();
        for (i, (token, vector)) in entries.into_iter().enumerate() {
            builder.push(i + 1, token.as_ref(), vector)?;
        }
        builder.finish()
    }

    /// Parses the plain-text vector format (optional `<count> <dimension>` header).
    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut builder = Builder::default();
        let mut header: Option<(usize, usize)> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let first = fields.next().unwrap_or_default();
            if i == 0 {
                let rest: Vec<&str> = fields.clone().collect();
                if rest.len() == 1 {
                    if let (Ok(count), Ok(dim)) = (first.parse::<usize>(), rest[0].parse::<usize>()) {
                        if dim == 0 {
                            return Err(EmbeddingError::MalformedLine {
                                line: line_no,
                                reason: "header declares dimension 0".into(),
                            });
                        }
                        header = Some((count, dim));
                        builder.dimension = Some(dim);
                        continue;
                    }
                }
            }
            if first.is_empty() {
                return Err(EmbeddingError::MalformedLine {
                    line: line_no,
                    reason: "missing token".into(),
                });
            }
            let components = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|c| c.is_finite())
                        .ok_or_else(|| EmbeddingError::MalformedLine {
                            line: line_no,
                            reason: format!("non-numeric component `{f}`"),
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            builder.push(line_no, first, components)?;
        }
        let model = builder.finish()?;
        if let Some((count, _)) = header {
            if count != model.len() {
                return Err(EmbeddingError::CountMismatch {
                    declared: count,
                    found: model.len(),
                });
            }
        }
        Ok(model)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(BufReader::new(File::open(path)?))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Vocabulary in load order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.slot(token).is_some()
    }

    fn slot(&self, token: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(token) {
            return Some(i);
        }
        self.index.get(&normalize_token(token)).copied()
    }

    fn row(&self, slot: usize) -> &[f64] {
        &self.data[slot * self.dimension..(slot + 1) * self.dimension]
    }

    /// Stored vector for the normalized token, `None` when out of vocabulary.
    pub fn vector_of(&self, token: &str) -> Option<Vector> {
        self.slot(token).map(|i| Vector(self.row(i).to_vec()))
    }

    /// Sum of the vectors of all in-vocabulary tokens; OOV tokens are skipped.
    pub fn expression_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vector> {
        let mut sum = Vector::zeros(self.dimension);
        let mut hits = 0usize;
        for token in tokens {
            if let Some(i) = self.slot(token.as_ref()) {
                sum.add_assign(self.row(i));
                hits += 1;
            }
        }
        if hits == 0 {
            return Err(EmbeddingError::AllTokensOov);
        }
        Ok(sum)
    }

    /// Cosine between two vocabulary entries, `None` if either is OOV.
    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (self.slot(a)?, self.slot(b)?);
        let (ni, nj) = (self.norms[i], self.norms[j]);
        if ni == 0.0 || nj == 0.0 {
            return None;
        }
        Some(cosine_with_norms(self.row(i), ni, self.row(j), nj))
    }

    /// The `k` other tokens closest to `token` by cosine, best first.
    ///
    /// Exhaustive scan. Ties are ordered by token; zero vectors never match.
    pub fn nearest_neighbors(&self, token: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let q = self
            .slot(token)
            .ok_or_else(|| EmbeddingError::TokenOov(token.to_string()))?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let qn = self.norms[q];
        if qn == 0.0 {
            return Ok(Vec::new());
        }
        let query = self.row(q);
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| i != q && self.norms[i] != 0.0)
            .map(|i| (i, cosine_with_norms(query, qn, self.row(i), self.norms[i])))
            .collect();
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.tokens[a.0].cmp(&self.tokens[b.0]))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored.into_iter().map(|(i, s)| (self.tokens[i].clone(), s)).collect())
    }
}

#[derive(Default)]
struct Builder {
    dimension: Option<usize>,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl Builder {
    fn push(&mut self, line: usize, token: &str, components: Vec<f64>) -> Result<()> {
        let dim = *self.dimension.get_or_insert(components.len());
        if components.is_empty() || components.len() != dim {
            return Err(EmbeddingError::MalformedLine {
                line,
                reason: format!("expected {dim} components, found {}", components.len()),
            });
        }
        if let Some(bad) = components.iter().find(|c| !c.is_finite()) {
            return Err(EmbeddingError::MalformedLine {
                line,
                reason: format!("non-finite component {bad}"),
            });
        }
        let token = normalize_token(token);
        if self.index.contains_key(&token) {
            return Err(EmbeddingError::DuplicateToken { line, token });
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.norms.push(norm(&components));
        self.data.extend(components);
        Ok(())
    }

    fn finish(self) -> Result<EmbeddingModel> {
        if self.tokens.is_empty() {
            return Err(EmbeddingError::EmptyModel);
        }
        Ok(EmbeddingModel {
            dimension: self.dimension.unwrap_or_default(),
            tokens: self.tokens,
            index: self.index,
            data: self.data,
            norms: self.norms,
        })
    }
}
