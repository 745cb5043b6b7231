//! Entity extraction: tokenize, tag, drop stopwords and non-content words,
//! then merge runs of retained tokens into n-grams the embedding model knows.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingModel;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");

/// Longest n-gram the merge step will look for.
pub const MAX_NGRAM: usize = 3;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("expression contains no tokens")]
    EmptyExpression,
    #[error("no entities survive filtering")]
    NoEntities,
    #[error("lexicon line {line}: {reason}")]
    MalformedLexicon { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// The whitespace-delimited piece as written.
    pub surface: String,
    pub normalized: String,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosTag {
    Noun,
    ProperNoun,
    Adjective,
    Verb,
    Other,
}

impl PosTag {
    pub fn is_content(self) -> bool {
        matches!(self, PosTag::Noun | PosTag::ProperNoun | PosTag::Adjective)
    }
}

impl FromStr for PosTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "noun" => PosTag::Noun,
            "proper_noun" => PosTag::ProperNoun,
            "adjective" => PosTag::Adjective,
            "verb" => PosTag::Verb,
            "other" => PosTag::Other,
            _ => return Err(format!("unknown tag `{s}`")),
        })
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosTag::Noun => "noun",
            PosTag::ProperNoun => "proper_noun",
            PosTag::Adjective => "adjective",
            PosTag::Verb => "verb",
            PosTag::Other => "other",
        })
    }
}

/// Part-of-speech tagging contract. Implementations must return exactly one
/// tag per input token.
pub trait Tagger {
    fn tag(&self, tokens: &[Token]) -> Vec<PosTag>;
}

/// Dictionary tagger. Unknown words are nouns; a capitalized noun that does
/// not start the expression becomes a proper noun.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    lexicon: HashMap<String, PosTag>,
}

impl LexiconTagger {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon is well-formed")
    }

    /// Parses `token<TAB>tag` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ExtractError> {
        let mut lexicon = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| ExtractError::MalformedLexicon { line: i + 1, reason };
            let (token, tag) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected token<TAB>tag".into()))?;
            let tag = tag.trim().parse::<PosTag>().map_err(malformed)?;
            lexicon.insert(token.trim().to_lowercase(), tag);
        }
        Ok(LexiconTagger { lexicon })
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, ExtractError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn lookup(&self, word: &str) -> Option<PosTag> {
        self.lexicon.get(word).copied()
    }
}

impl Default for LexiconTagger {
    fn default() -> Self {
        Self::bundled()
    }
}

impl Tagger for LexiconTagger {
    fn tag(&self, tokens: &[Token]) -> Vec<PosTag> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let tag = self.lookup(&t.normalized).unwrap_or(PosTag::Noun);
                let capitalized = t
                    .surface
                    .chars()
                    .find(|c| c.is_alphanumeric())
                    .is_some_and(char::is_uppercase);
                if tag == PosTag::Noun && i > 0 && capitalized {
                    PosTag::ProperNoun
                } else {
                    tag
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }

    /// One word per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, ExtractError> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        Stopwords(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Unigram,
    Ngram,
}

/// First token position and number of constituent tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedEntity {
    pub text: String,
    pub kind: EntityKind,
    pub tags: Vec<PosTag>,
    pub span: Span,
}

/// Splits on whitespace and underscores, strips punctuation and lowercases.
pub fn tokenize(expression: &str) -> Result<Vec<Token>, ExtractError> {
    let tokens: Vec<Token> = expression
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter_map(|piece| {
            let normalized: String = piece
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect();
            (!normalized.is_empty()).then(|| (piece.to_string(), normalized))
        })
        .enumerate()
        .map(|(position, (surface, normalized))| Token {
            surface,
            normalized,
            position,
        })
        .collect();
    if tokens.is_empty() {
        return Err(ExtractError::EmptyExpression);
    }
    Ok(tokens)
}

/// Normalized token strings of an expression, for embedding lookups.
pub fn token_texts(expression: &str) -> Result<Vec<String>, ExtractError> {
    Ok(tokenize(expression)?.into_iter().map(|t| t.normalized).collect())
}

pub fn extract_entities(
    expression: &str,
    model: &EmbeddingModel,
    tagger: &dyn Tagger,
    stopwords: &Stopwords,
) -> Result<Vec<ExtractedEntity>, ExtractError> {
    let tokens = tokenize(expression)?;
    let tags = tagger.tag(&tokens);
    assert_eq!(tags.len(), tokens.len(), "tagger must return one tag per token");

    let retained: Vec<(&Token, PosTag)> = tokens
        .iter()
        .zip(tags)
        .filter(|(t, tag)| tag.is_content() && !stopwords.contains(&t.normalized))
        .collect();
    if retained.is_empty() {
        return Err(ExtractError::NoEntities);
    }

    let mut entities = Vec::new();
    let mut i = 0;
    while i < retained.len() {
        let longest = (2..=MAX_NGRAM.min(retained.len() - i)).rev().find_map(|n| {
            let joined = retained[i..i + n]
                .iter()
                .map(|(t, _)| t.normalized.as_str())
                .collect::<Vec<_>>()
                .join("_");
            model.contains(&joined).then_some((n, joined))
        });
        let (n, text, kind) = match longest {
            Some((n, joined)) => (n, joined, EntityKind::Ngram),
            None => (1, retained[i].0.normalized.clone(), EntityKind::Unigram),
        };
        entities.push(ExtractedEntity {
            text,
            kind,
            tags: retained[i..i + n].iter().map(|(_, tag)| *tag).collect(),
            span: Span {
                start: retained[i].0.position,
                len: n,
            },
        });
        i += n;
    }
    Ok(entities)
}

/// Tagger and stopword list bundled for repeated extraction.
pub struct EntityExtractor {
    tagger: Box<dyn Tagger + Send + Sync>,
    stopwords: Stopwords,
}

impl EntityExtractor {
    pub fn new(tagger: impl Tagger + Send + Sync + 'static, stopwords: Stopwords) -> Self {
        EntityExtractor {
            tagger: Box::new(tagger),
            stopwords,
        }
    }

    pub fn extract(&self, expression: &str, model: &EmbeddingModel) -> Result<Vec<ExtractedEntity>, ExtractError> {
        extract_entities(expression, model, self.tagger.as_ref(), &self.stopwords)
    }
}

impl Default for EntityExtractor {
    fn default() -> Self {
        Self::new(LexiconTagger::bundled(), Stopwords::bundled())
    }
}

impl fmt::Debug for EntityExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EntityExtractor")
            .field("stopwords", &self.stopwords.len())
            .finish_non_exhaustive()
    }
}
