//! Synthesizes natural-language requests into concrete REST API calls.
//!
//! The pipeline scores an expression against an API knowledge graph with a
//! pretrained word-embedding model:
//!
//! 1. [`extractor`] pulls nouns, adjectives and known n-grams out of the text.
//! 2. [`synthesis::select_apis`] keeps the APIs whose tags, parameter names
//!    and stored values are semantically close to those entities.
//! 3. [`synthesis::select_declaration`] picks the declaration whose sample
//!    expression is most similar to the whole expression (summed word
//!    vectors, cosine similarity).
//! 4. [`synthesis::map_entities_to_params`] binds entities to parameters by
//!    similarity to already-known values.
//! 5. [`synthesis::check_coverage`] decides between calling the API and
//!    asking the user for the missing required parameters.
//!
//! [`service`] wraps the pipeline in a stateless HTTP API; the `apisynth`
//! binary exposes it on the command line. Runnable walkthroughs live in
//! `examples/`.

pub mod cli;
pub mod embedding;
pub mod extractor;
pub mod kg;
pub mod service;
pub mod synthesis;

pub use embedding::{cosine, EmbeddingModel, Vector};
pub use extractor::{extract_entities, tokenize, EntityExtractor, ExtractedEntity, LexiconTagger, Stopwords, Tagger};
pub use kg::KnowledgeGraph;
pub use synthesis::{Bindings, Status, SynthesisConfig, SynthesisResult, Synthesizer};
