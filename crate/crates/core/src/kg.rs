//! API knowledge graph: APIs, their declarations, parameters, stored
//! parameter values and the embedding-neighbor links attached to them.
//!
//! The graph persists as a single JSON document. Every mutating method
//! leaves the graph valid: references resolve and every `[placeholder]`
//! of a path template names a declared parameter.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{normalize_token, EmbeddingModel};

pub const FORMAT_VERSION: u32 = 1;

/// Minimum confidence for the KG updater to persist a learned value.
pub const KG_UPDATE_THRESHOLD: f64 = 0.40;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("declaration `{declaration}` references unknown api `{api_id}`")]
    DanglingReference { declaration: String, api_id: String },
    #[error("declaration `{declaration}`: placeholder `[{placeholder}]` has no matching parameter")]
    PlaceholderWithoutParameter { declaration: String, placeholder: String },
    #[error("unknown declaration `{0}`")]
    UnknownDeclaration(String),
    #[error("declaration `{declaration}` has no parameter `{parameter}`")]
    UnknownParameter { declaration: String, parameter: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = KgError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Put,
    Delete,
    Patch,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Put => "PUT",
            Method::Delete => "DELETE",
            Method::Patch => "PATCH",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Api {
    pub id: String,
    pub name: String,
    pub description: String,
    pub tags: BTreeSet<String>,
    pub base_uri: String,
}

/// Where a stored parameter value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueSource {
    Seed,
    /// Added by embedding-neighbor enrichment.
    Enriched,
    /// Accepted by the KG updater during synthesis.
    Learned,
}

/// A semantically similar word linked to a stored value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Neighbor {
    pub literal: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamValue {
    pub literal: String,
    pub source: ValueSource,
    pub neighbors: Vec<Neighbor>,
}

impl ParamValue {
    pub fn new(literal: impl Into<String>, source: ValueSource) -> Self {
        ParamValue {
            literal: literal.into(),
            source,
            neighbors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameter {
    pub name: String,
    pub required: bool,
    pub values: Vec<ParamValue>,
}

impl Parameter {
    pub fn has_value(&self, literal: &str) -> bool {
        let key = normalize_token(literal);
        self.values.iter().any(|v| normalize_token(&v.literal) == key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Declaration {
    pub id: String,
    pub api_id: String,
    pub method: Method,
    pub path_template: String,
    pub sample_expressions: Vec<String>,
    pub parameters: Vec<Parameter>,
}

impl Declaration {
    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn required_parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.parameters.iter().filter(|p| p.required)
    }

    pub fn placeholders(&self) -> Vec<&str> {
        placeholders(&self.path_template)
    }
}

/// Names inside `[...]` in a path template, in order of appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        match after.find(']') {
            Some(close) => {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeGraph {
    pub format_version: u32,
    pub apis: Vec<Api>,
    pub declarations: Vec<Declaration>,
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        KnowledgeGraph {
            format_version: FORMAT_VERSION,
            apis: Vec::new(),
            declarations: Vec::new(),
        }
    }
}

/// One value added by [`KnowledgeGraph::enrich_values`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enrichment {
    pub declaration_id: String,
    pub parameter: String,
    pub from_literal: String,
    pub added_literal: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnrichmentReport {
    pub added: Vec<Enrichment>,
    pub links_added: usize,
    pub skipped_oov: usize,
}

impl EnrichmentReport {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.links_added == 0
    }
}

/// Compact view served by `GET /apis`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiSummary {
    pub id: String,
    pub name: String,
    pub description: String,
    pub tags: Vec<String>,
    pub declarations: Vec<DeclarationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeclarationSummary {
    pub id: String,
    pub method: Method,
    pub path_template: String,
    pub required: Vec<String>,
    pub optional: Vec<String>,
    pub sample_expressions: usize,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let mut graph: KnowledgeGraph = serde_json::from_str(s).map_err(|e| KgError::SchemaViolation(e.to_string()))?;
        for api in &mut graph.apis {
            api.tags = api.tags.iter().map(|t| normalize_token(t)).collect();
        }
        graph.validate()?;
        Ok(graph)
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self> {
        let mut s = String::new();
        reader.read_to_string(&mut s)?;
        Self::from_json_str(&s)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    /// Canonical document: pretty-printed JSON with a trailing newline.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json_string().as_bytes())?;
        Ok(())
    }

    /// Writes to a sibling temp file and renames it over `path`.
    pub fn save_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        self.save(&mut tmp)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| KgError::Io(e.error))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(KgError::SchemaViolation(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        let mut api_ids = HashSet::new();
        for api in &self.apis {
            if api.id.is_empty() || !api_ids.insert(api.id.as_str()) {
                return Err(KgError::SchemaViolation(format!(
                    "api id `{}` is empty or duplicated",
                    api.id
                )));
            }
            if api.base_uri.trim().is_empty() {
                return Err(KgError::SchemaViolation(format!(
                    "api `{}` has an empty base_uri",
                    api.id
                )));
            }
            if let Some(t) = api.tags.iter().find(|t| normalize_token(t) != **t) {
                return Err(KgError::SchemaViolation(format!(
                    "api `{}` tag `{t}` is not normalized",
                    api.id
                )));
            }
        }
        let mut decl_ids = HashSet::new();
        for decl in &self.declarations {
            if decl.id.is_empty() || !decl_ids.insert(decl.id.as_str()) {
                return Err(KgError::SchemaViolation(format!(
                    "declaration id `{}` is empty or duplicated",
                    decl.id
                )));
            }
            if !api_ids.contains(decl.api_id.as_str()) {
                return Err(KgError::DanglingReference {
                    declaration: decl.id.clone(),
                    api_id: decl.api_id.clone(),
                });
            }
            let mut names = HashSet::new();
            for param in &decl.parameters {
                if param.name.is_empty() || !names.insert(param.name.as_str()) {
                    return Err(KgError::SchemaViolation(format!(
                        "declaration `{}`: parameter name `{}` is empty or duplicated",
                        decl.id, param.name
                    )));
                }
                let mut literals = HashSet::new();
                for value in &param.values {
                    if !literals.insert(normalize_token(&value.literal)) {
                        return Err(KgError::SchemaViolation(format!(
                            "declaration `{}`: parameter `{}` repeats value `{}`",
                            decl.id, param.name, value.literal
                        )));
                    }
                    if let Some(n) = value.neighbors.iter().find(|n| !(0.0..=1.0).contains(&n.similarity)) {
                        return Err(KgError::SchemaViolation(format!(
                            "neighbor `{}` of `{}` has similarity {} outside [0, 1]",
                            n.literal, value.literal, n.similarity
                        )));
                    }
                }
            }
            for ph in decl.placeholders() {
                if !names.contains(ph) {
                    return Err(KgError::PlaceholderWithoutParameter {
                        declaration: decl.id.clone(),
                        placeholder: ph.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn api(&self, id: &str) -> Option<&Api> {
        self.apis.iter().find(|a| a.id == id)
    }

    pub fn declaration(&self, id: &str) -> Option<&Declaration> {
        self.declarations.iter().find(|d| d.id == id)
    }

    fn declaration_mut(&mut self, id: &str) -> Result<&mut Declaration> {
        self.declarations
            .iter_mut()
            .find(|d| d.id == id)
            .ok_or_else(|| KgError::UnknownDeclaration(id.to_string()))
    }

    pub fn declarations_of<'a>(&'a self, api_id: &'a str) -> impl Iterator<Item = &'a Declaration> {
        self.declarations.iter().filter(move |d| d.api_id == api_id)
    }

    /// Normalized vocabulary describing an API: its tags, the names of its
    /// declarations' parameters and their stored value literals.
    pub fn api_terms(&self, api_id: &str) -> BTreeSet<String> {
        let mut terms: BTreeSet<String> = self
            .api(api_id)
            .map(|a| a.tags.iter().cloned().collect())
            .unwrap_or_default();
        for decl in self.declarations_of(api_id) {
            for p in &decl.parameters {
                terms.insert(normalize_token(&p.name));
                terms.extend(p.values.iter().map(|v| normalize_token(&v.literal)));
            }
        }
        terms
    }

    /// Appends a sample expression unless an identical one is stored.
    /// Returns whether it was added.
    pub fn add_sample_expression(&mut self, declaration_id: &str, expression: &str) -> Result<bool> {
        let decl = self.declaration_mut(declaration_id)?;
        if decl.sample_expressions.iter().any(|e| e == expression) {
            return Ok(false);
        }
        decl.sample_expressions.push(expression.to_string());
        Ok(true)
    }

    /// Links each seed or learned value to its top-`k` embedding neighbors
    /// with similarity at least `min_sim`, and adds those neighbors as
    /// enriched values of the same parameter.
    ///
    /// Enriched values are not themselves expanded, so a second run with the
    /// same inputs changes nothing.
    pub fn enrich_values(&mut self, model: &EmbeddingModel, k: usize, min_sim: f64) -> EnrichmentReport {
        let mut report = EnrichmentReport::default();
        for decl in &mut self.declarations {
            for param in &mut decl.parameters {
                let origins: Vec<usize> = (0..param.values.len())
                    .filter(|&i| param.values[i].source != ValueSource::Enriched)
                    .collect();
                for i in origins {
                    let literal = param.values[i].literal.clone();
                    let Ok(neighbors) = model.nearest_neighbors(&literal, k) else {
                        report.skipped_oov += 1;
                        continue;
                    };
                    for (token, sim) in neighbors {
                        if sim < min_sim || sim < 0.0 {
                            continue;
                        }
                        let value = &mut param.values[i];
                        if !value.neighbors.iter().any(|n| n.literal == token) {
                            value.neighbors.push(Neighbor {
                                literal: token.clone(),
                                similarity: sim,
                            });
                            report.links_added += 1;
                        }
                        if !param.has_value(&token) {
                            param.values.push(ParamValue::new(token.clone(), ValueSource::Enriched));
                            report.added.push(Enrichment {
                                declaration_id: decl.id.clone(),
                                parameter: param.name.clone(),
                                from_literal: literal.clone(),
                                added_literal: token,
                                similarity: sim,
                            });
                        }
                    }
                }
            }
        }
        report
    }

    /// KG updater: stores `literal` as a learned value of the parameter when
    /// `confidence >= threshold` and the literal is new. Returns whether the
    /// value was stored.
    pub fn record_learned_value(
        &mut self,
        declaration_id: &str,
        param_name: &str,
        literal: &str,
        confidence: f64,
        threshold: f64,
    ) -> Result<bool> {
        let decl = self.declaration_mut(declaration_id)?;
        let param = decl
            .parameters
            .iter_mut()
            .find(|p| p.name == param_name)
            .ok_or_else(|| KgError::UnknownParameter {
                declaration: declaration_id.to_string(),
                parameter: param_name.to_string(),
            })?;
        let literal = normalize_token(literal);
        let confident = matches!(
            confidence.partial_cmp(&threshold),
            Some(std::cmp::Ordering::Greater | std::cmp::Ordering::Equal)
        );
        if !confident || literal.is_empty() || param.has_value(&literal) {
            return Ok(false);
        }
        param.values.push(ParamValue::new(literal, ValueSource::Learned));
        Ok(true)
    }

    /// APIs with at least one tag, parameter name or stored value equal to a
    /// normalized term. Graph order.
    pub fn find_apis_by_terms<S: AsRef<str>>(&self, terms: &[S]) -> Vec<&Api> {
        let wanted: HashSet<String> = terms.iter().map(|t| normalize_token(t.as_ref())).collect();
        if wanted.is_empty() {
            return Vec::new();
        }
        self.apis
            .iter()
            .filter(|api| self.api_terms(&api.id).iter().any(|t| wanted.contains(t)))
            .collect()
    }

    pub fn summary(&self) -> Vec<ApiSummary> {
        self.apis
            .iter()
            .map(|api| ApiSummary {
                id: api.id.clone(),
                name: api.name.clone(),
                description: api.description.clone(),
                tags: api.tags.iter().cloned().collect(),
                declarations: self
                    .declarations_of(&api.id)
                    .map(|d| DeclarationSummary {
                        id: d.id.clone(),
                        method: d.method,
                        path_template: d.path_template.clone(),
                        required: d.required_parameters().map(|p| p.name.clone()).collect(),
                        optional: d
                            .parameters
                            .iter()
                            .filter(|p| !p.required)
                            .map(|p| p.name.clone())
                            .collect(),
                        sample_expressions: d.sample_expressions.len(),
                    })
                    .collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = include_str!("../fixtures/yelp_weather.json");
    const TOY: &str = include_str!("../fixtures/toy.vec");

    fn fixture() -> KnowledgeGraph {
        KnowledgeGraph::from_json_str(FIXTURE).unwrap()
    }

    fn toy() -> EmbeddingModel {
        EmbeddingModel::load(TOY.as_bytes()).unwrap()
    }

    fn tiny(template: &str, values: &[&str]) -> KnowledgeGraph {
        KnowledgeGraph {
            format_version: FORMAT_VERSION,
            apis: vec![Api {
                id: "a".into(),
                name: "A".into(),
                description: String::new(),
                tags: BTreeSet::new(),
                base_uri: "api.example.com".into(),
            }],
            declarations: vec![Declaration {
                id: "a.d".into(),
                api_id: "a".into(),
                method: Method::Get,
                path_template: template.into(),
                sample_expressions: vec![],
                parameters: vec![Parameter {
                    name: "location".into(),
                    required: true,
                    values: values.iter().map(|v| ParamValue::new(*v, ValueSource::Seed)).collect(),
                }],
            }],
        }
    }

    #[test]
    fn empty_graph_round_trips() {
        let g = KnowledgeGraph::new();
        let doc = g.to_json_string();
        assert!(doc.contains("\"apis\": []"));
        assert_eq!(KnowledgeGraph::from_json_str(&doc).unwrap(), g);
    }

    #[test]
    fn fixture_is_byte_stable_through_save_load_save() {
        let first = fixture().to_json_string();
        let second = KnowledgeGraph::from_json_str(&first).unwrap().to_json_string();
        assert_eq!(first, second);
    }

    #[test]
    fn placeholder_without_parameter_is_rejected() {
        let doc = tiny("/weather?q=[city]", &[]).to_json_string();
        assert!(matches!(
            KnowledgeGraph::from_json_str(&doc),
            Err(KgError::PlaceholderWithoutParameter { placeholder, .. }) if placeholder == "city"
        ));
    }

    #[test]
    fn dangling_api_reference_is_rejected() {
        let doc = fixture()
            .to_json_string()
            .replace("\"api_id\": \"weather\"", "\"api_id\": \"nope\"");
        assert!(matches!(
            KnowledgeGraph::from_json_str(&doc),
            Err(KgError::DanglingReference { api_id, .. }) if api_id == "nope"
        ));
    }

    #[test]
    fn schema_violations() {
        let unknown_key = r#"{"format_version":1,"apis":[],"declarations":[],"extra":1}"#;
        assert!(matches!(
            KnowledgeGraph::from_json_str(unknown_key),
            Err(KgError::SchemaViolation(_))
        ));
        let missing = r#"{"format_version":1,"apis":[]}"#;
        assert!(matches!(
            KnowledgeGraph::from_json_str(missing),
            Err(KgError::SchemaViolation(_))
        ));
        let bad_method = fixture().to_json_string().replacen("\"GET\"", "\"FETCH\"", 1);
        assert!(matches!(
            KnowledgeGraph::from_json_str(&bad_method),
            Err(KgError::SchemaViolation(_))
        ));
        let dup = tiny("/x", &["paris", "Paris"]).to_json_string();
        assert!(matches!(
            KnowledgeGraph::from_json_str(&dup),
            Err(KgError::SchemaViolation(_))
        ));
    }

    #[test]
    fn sample_expressions_dedup_exactly() {
        let mut g = tiny("/x", &[]);
        assert!(g.add_sample_expression("a.d", "weather in paris").unwrap());
        assert_eq!(g.declaration("a.d").unwrap().sample_expressions.len(), 1);
        assert!(!g.add_sample_expression("a.d", "weather in paris").unwrap());
        assert!(g.add_sample_expression("a.d", "Weather in paris").unwrap());
        assert_eq!(g.declaration("a.d").unwrap().sample_expressions.len(), 2);
        assert!(matches!(
            g.add_sample_expression("zz", "x"),
            Err(KgError::UnknownDeclaration(_))
        ));
    }

    #[test]
    fn enrich_on_graph_without_parameters_is_noop() {
        let mut g = KnowledgeGraph::new();
        let report = g.enrich_values(&toy(), 3, 0.5);
        assert!(report.is_empty());
        assert_eq!(g, KnowledgeGraph::new());
    }

    #[test]
    fn paris_enrichment_adds_its_two_nearest_cities() {
        let model = toy();
        let oracle = model.nearest_neighbors("paris", 2).unwrap();
        assert!(oracle.iter().all(|(_, s)| *s >= 0.9));
        let mut g = tiny("/x?l=[location]", &["paris"]);
        let report = g.enrich_values(&model, 2, 0.9);
        let mut added: Vec<&str> = report.added.iter().map(|e| e.added_literal.as_str()).collect();
        added.sort();
        assert_eq!(added, ["london", "sydney"]);
        assert_eq!(report.links_added, 2);
        let param = &g.declaration("a.d").unwrap().parameters[0];
        assert_eq!(param.values.len(), 3);
        assert!(param.values[1..].iter().all(|v| v.source == ValueSource::Enriched));
        let links: Vec<&str> = param.values[0].neighbors.iter().map(|n| n.literal.as_str()).collect();
        assert_eq!(links, oracle.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>());
    }

    #[test]
    fn enrichment_threshold_blocks_weak_neighbors() {
        let mut g = tiny("/x", &["weather"]);
        let report = g.enrich_values(&toy(), 3, 0.99);
        assert!(report.added.is_empty());
        assert!(g.declaration("a.d").unwrap().parameters[0].values[0]
            .neighbors
            .is_empty());
    }

    #[test]
    fn enrichment_is_idempotent_and_counts_oov() {
        let mut g = tiny("/x", &["paris", "atlantis"]);
        let first = g.enrich_values(&toy(), 3, 0.5);
        assert_eq!(first.skipped_oov, 1);
        let snapshot = g.clone();
        let second = g.enrich_values(&toy(), 3, 0.5);
        assert!(second.is_empty());
        assert_eq!(g, snapshot);
        KnowledgeGraph::from_json_str(&g.to_json_string()).unwrap();
    }

    #[test]
    fn learned_values_respect_threshold_and_dedup() {
        let mut g = tiny("/x", &["paris"]);
        let t = KG_UPDATE_THRESHOLD;
        assert!(!g.record_learned_value("a.d", "location", "sydney", 0.39, t).unwrap());
        assert_eq!(g, tiny("/x", &["paris"]));
        assert!(g.record_learned_value("a.d", "location", "sydney", 0.40, t).unwrap());
        assert!(!g.record_learned_value("a.d", "location", "paris", 0.9, t).unwrap());
        assert!(!g.record_learned_value("a.d", "location", "Sydney", 0.9, t).unwrap());
        let values = &g.declaration("a.d").unwrap().parameters[0].values;
        assert_eq!(values.len(), 2);
        assert_eq!(values[1].source, ValueSource::Learned);
        assert!(matches!(
            g.record_learned_value("a.d", "term", "x", 1.0, t),
            Err(KgError::UnknownParameter { .. })
        ));
        assert!(matches!(
            g.record_learned_value("zz", "location", "x", 1.0, t),
            Err(KgError::UnknownDeclaration(_))
        ));
    }

    #[test]
    fn find_apis_by_terms_matches_tags_and_values() {
        let g = fixture();
        let ids =
            |terms: &[&str]| -> Vec<String> { g.find_apis_by_terms(terms).iter().map(|a| a.id.clone()).collect() };
        assert_eq!(ids(&["restaurant"]), ["yelp"]);
        assert!(ids(&[]).is_empty());
        // "pizza" is only a stored value of yelp.search/term
        assert!(!g.api("yelp").unwrap().tags.contains("pizza"));
        assert_eq!(ids(&["Pizza"]), ["yelp"]);
        assert_eq!(ids(&["San Francisco"]), ["yelp"]);
    }

    #[test]
    fn placeholder_parsing() {
        assert_eq!(
            placeholders("/search?term=[term]&location=[location]"),
            ["term", "location"]
        );
        assert!(placeholders("/plain").is_empty());
        assert_eq!(placeholders("/a/[id]/b[").len(), 1);
    }
}
