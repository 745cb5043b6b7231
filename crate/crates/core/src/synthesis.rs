//! The synthesis pipeline: API selection, declaration selection by summed
//! word vectors, entity-to-parameter mapping, coverage checking and call
//! construction.
//!
//! Every stage is a plain function over an immutable graph and model so the
//! stages can be exercised on their own; [`Synthesizer`] strings them together.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, normalize_token, EmbeddingError, EmbeddingModel};
use crate::extractor::{token_texts, EntityExtractor, ExtractError, ExtractedEntity};
use crate::kg::{self, Declaration, KnowledgeGraph, Method, KG_UPDATE_THRESHOLD};

/// Bytes left untouched in URLs: the RFC 3986 unreserved set.
const URL_COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("expression contains no tokens")]
    EmptyExpression,
    #[error("no entities survive filtering")]
    NoEntities,
    #[error("knowledge graph has no APIs")]
    EmptyGraph,
    #[error("no API reaches the minimum score")]
    NoCandidates,
    #[error("candidate declarations have no usable sample expressions")]
    NoSampleExpressions,
    #[error("every token of the expression is out of vocabulary")]
    AllTokensOov,
    #[error("binding names unknown parameter `{0}`")]
    UnknownParameterInBindings(String),
    #[error("empty list of coverage reports")]
    EmptyList,
    #[error("required parameter `{0}` is not bound")]
    MissingRequiredParameter(String),
    #[error("placeholder `[{0}]` has no binding")]
    UnboundPlaceholder(String),
    #[error("unknown api `{0}`")]
    UnknownApi(String),
}

impl From<ExtractError> for SynthesisError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::NoEntities => SynthesisError::NoEntities,
            _ => SynthesisError::EmptyExpression,
        }
    }
}

pub type Result<T, E = SynthesisError> = std::result::Result<T, E>;

/// Thresholds and limits of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub kg_update_threshold: f64,
    pub api_min_score: f64,
    pub declaration_floor: f64,
    pub top_k: usize,
    /// Declarations within this distance of the best similarity are
    /// re-ranked by coverage.
    pub tie_epsilon: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            kg_update_threshold: KG_UPDATE_THRESHOLD,
            api_min_score: 0.30,
            declaration_floor: 0.25,
            top_k: 5,
            tie_epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub entity: String,
    pub term: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiScore {
    pub api_id: String,
    pub score: f64,
    pub matched_evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclarationMatch {
    pub declaration_id: String,
    pub best_sample_expression: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub param: String,
    pub entity: String,
    pub confidence: f64,
}

/// Parameter bindings proposed by the entity-parameter mapper, one entry
/// per parameter at most.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamValueMatrix {
    pub entries: Vec<MatrixEntry>,
}

impl ParamValueMatrix {
    pub fn get(&self, param: &str) -> Option<&MatrixEntry> {
        self.entries.iter().find(|e| e.param == param)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub declaration_id: String,
    pub required_total: usize,
    pub required_bound: usize,
    pub coverage: f64,
    pub missing_required: Vec<String>,
    pub bound_optional: Vec<(String, String)>,
    /// Declaration-selection similarity, used to break coverage ties.
    pub similarity: f64,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing_required.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCall {
    pub method: Method,
    pub url: String,
    pub bindings: Bindings,
    /// Bound parameters outside the path template, for non-GET methods.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body: Option<Bindings>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ready,
    NeedsInput,
    NoMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoMatchReason {
    NoEntities,
    EmptyGraph,
    NoCandidates,
    NoSampleExpressions,
    AllTokensOov,
    BelowDeclarationFloor,
    UnknownParameterInBindings,
    CallConstruction,
}

/// A matrix binding handed to the KG updater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedValue {
    pub declaration_id: String,
    pub param: String,
    pub literal: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<NoMatchReason>,
    pub entities: Vec<ExtractedEntity>,
    pub api_score: Option<ApiScore>,
    pub declaration_match: Option<DeclarationMatch>,
    pub matrix: ParamValueMatrix,
    pub coverage_report: Option<CoverageReport>,
    pub call: Option<ApiCall>,
    pub learned: Vec<LearnedValue>,
}

impl SynthesisResult {
    fn no_match(reason: NoMatchReason, entities: Vec<ExtractedEntity>) -> Self {
        SynthesisResult {
            status: Status::NoMatch,
            reason: Some(reason),
            entities,
            api_score: None,
            declaration_match: None,
            matrix: ParamValueMatrix::default(),
            coverage_report: None,
            call: None,
            learned: Vec::new(),
        }
    }

    pub fn missing_required(&self) -> &[String] {
        self.coverage_report
            .as_ref()
            .map(|r| r.missing_required.as_slice())
            .unwrap_or_default()
    }
}

/// Follow-up question asked for a missing required parameter.
pub fn follow_up_question(param: &str) -> String {
    format!("What value should I use for '{param}'?")
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Similarity between an extracted entity and a graph term. Identical
/// normalized strings score 1.0; otherwise cosine, or `None` when either
/// side is out of vocabulary.
fn term_similarity(model: &EmbeddingModel, entity: &str, term: &str) -> Option<f64> {
    if normalize_token(entity) == normalize_token(term) {
        return Some(1.0);
    }
    model.similarity(entity, term)
}

/// Scores every API by the mean, over entities, of each entity's best
/// similarity to the API's tags, parameter names and stored values.
/// Returns the `top_k` APIs scoring at least `min_score`, best first.
pub fn select_apis(
    entities: &[ExtractedEntity],
    graph: &KnowledgeGraph,
    model: &EmbeddingModel,
    top_k: usize,
    min_score: f64,
) -> Result<Vec<ApiScore>> {
    if graph.apis.is_empty() {
        return Err(SynthesisError::EmptyGraph);
    }
    if entities.is_empty() {
        return Err(SynthesisError::NoEntities);
    }
    let mut scores: Vec<ApiScore> = graph
        .apis
        .iter()
        .map(|api| {
            let terms = graph.api_terms(&api.id);
            let mut total = 0.0;
            let mut evidence = Vec::new();
            for entity in entities {
                let best = terms
                    .iter()
                    .filter_map(|t| term_similarity(model, &entity.text, t).map(|s| (t, s)))
                    .max_by(|a, b| {
                        a.1.partial_cmp(&b.1)
                            .unwrap_or(Ordering::Equal)
                            .then_with(|| b.0.cmp(a.0))
                    });
                if let Some((term, sim)) = best.filter(|(_, s)| *s > 0.0) {
                    total += sim;
                    evidence.push(Evidence {
                        entity: entity.text.clone(),
                        term: term.clone(),
                        similarity: sim,
                    });
                }
            }
            ApiScore {
                api_id: api.id.clone(),
                score: total / entities.len() as f64,
                matched_evidence: evidence,
            }
        })
        .filter(|s| s.score >= min_score && s.score > 0.0)
        .collect();
    scores.sort_by(|a, b| desc(a.score, b.score).then_with(|| a.api_id.cmp(&b.api_id)));
    scores.truncate(top_k);
    if scores.is_empty() {
        return Err(SynthesisError::NoCandidates);
    }
    Ok(scores)
}

/// Best-matching sample expression of every declaration of the candidate
/// APIs, ranked by cosine between the summed word vectors of the user
/// expression and of the sample (best first, ties by declaration id).
pub fn rank_declarations<S: AsRef<str>>(
    expression_tokens: &[S],
    candidate_apis: &[&str],
    graph: &KnowledgeGraph,
    model: &EmbeddingModel,
) -> Result<Vec<DeclarationMatch>> {
    let user = model.expression_vector(expression_tokens).map_err(|e| match e {
        EmbeddingError::AllTokensOov => SynthesisError::AllTokensOov,
        _ => SynthesisError::NoSampleExpressions,
    })?;
    let mut ranked = Vec::new();
    for decl in graph
        .declarations
        .iter()
        .filter(|d| candidate_apis.contains(&d.api_id.as_str()))
    {
        let mut best: Option<(f64, &String)> = None;
        for sample in &decl.sample_expressions {
            let Ok(tokens) = token_texts(sample) else { continue };
            let Ok(target) = model.expression_vector(&tokens) else {
                continue;
            };
            let Ok(sim) = cosine(&user, &target) else { continue };
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, sample));
            }
        }
        if let Some((similarity, sample)) = best {
            ranked.push(DeclarationMatch {
                declaration_id: decl.id.clone(),
                best_sample_expression: sample.clone(),
                similarity,
            });
        }
    }
    if ranked.is_empty() {
        return Err(SynthesisError::NoSampleExpressions);
    }
    ranked.sort_by(|a, b| desc(a.similarity, b.similarity).then_with(|| a.declaration_id.cmp(&b.declaration_id)));
    Ok(ranked)
}

/// The declaration owning the sample expression most similar to the user
/// expression.
pub fn select_declaration<S: AsRef<str>>(
    expression_tokens: &[S],
    candidate_apis: &[&str],
    graph: &KnowledgeGraph,
    model: &EmbeddingModel,
) -> Result<DeclarationMatch> {
    let mut ranked = rank_declarations(expression_tokens, candidate_apis, graph, model)?;
    Ok(ranked.swap_remove(0))
}

/// Affinity of an entity for a parameter: its best similarity to any of
/// the parameter's stored values. `None` without comparable values.
pub fn affinity(model: &EmbeddingModel, entity: &str, param: &kg::Parameter) -> Option<f64> {
    param
        .values
        .iter()
        .filter_map(|v| term_similarity(model, entity, &v.literal))
        .max_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal))
}

/// Greedy one-to-one assignment of entities to parameters by descending
/// affinity. Pairs with no positive affinity are never bound.
pub fn map_entities_to_params(
    entities: &[ExtractedEntity],
    declaration: &Declaration,
    model: &EmbeddingModel,
) -> ParamValueMatrix {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ei, entity) in entities.iter().enumerate() {
        for (pi, param) in declaration.parameters.iter().enumerate() {
            if let Some(a) = affinity(model, &entity.text, param).filter(|a| *a > 0.0) {
                pairs.push((a.min(1.0), ei, pi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        desc(a.0, b.0)
            .then_with(|| declaration.parameters[a.2].name.cmp(&declaration.parameters[b.2].name))
            .then_with(|| entities[a.1].text.cmp(&entities[b.1].text))
            .then_with(|| a.1.cmp(&b.1))
    });
    let mut entity_used = vec![false; entities.len()];
    let mut param_used = vec![false; declaration.parameters.len()];
    let mut entries = Vec::new();
    for (confidence, ei, pi) in pairs {
        if entity_used[ei] || param_used[pi] {
            continue;
        }
        entity_used[ei] = true;
        param_used[pi] = true;
        entries.push(MatrixEntry {
            param: declaration.parameters[pi].name.clone(),
            entity: entities[ei].text.clone(),
            confidence,
        });
    }
    entries.sort_by_key(|e| declaration.parameters.iter().position(|p| p.name == e.param));
    ParamValueMatrix { entries }
}

fn bound(value: Option<&String>) -> Option<&String> {
    value.filter(|v| !v.trim().is_empty())
}

/// Fraction of required parameters bound by the matrix or by the user.
/// A declaration with no required parameters has coverage 1.
pub fn check_coverage(
    declaration: &Declaration,
    matrix: &ParamValueMatrix,
    user_bindings: &Bindings,
) -> Result<CoverageReport> {
    if let Some(unknown) = user_bindings.keys().find(|k| declaration.parameter(k).is_none()) {
        return Err(SynthesisError::UnknownParameterInBindings(unknown.clone()));
    }
    let value_of = |name: &str| -> Option<String> {
        bound(user_bindings.get(name))
            .cloned()
            .or_else(|| matrix.get(name).map(|e| e.entity.clone()))
    };
    let mut required_total = 0;
    let mut missing_required = Vec::new();
    let mut bound_optional = Vec::new();
    for p in &declaration.parameters {
        match (p.required, value_of(&p.name)) {
            (true, v) => {
                required_total += 1;
                if v.is_none() {
                    missing_required.push(p.name.clone());
                }
            }
            (false, Some(v)) => bound_optional.push((p.name.clone(), v)),
            (false, None) => {}
        }
    }
    let required_bound = required_total - missing_required.len();
    let coverage = if required_total == 0 {
        1.0
    } else {
        required_bound as f64 / required_total as f64
    };
    Ok(CoverageReport {
        declaration_id: declaration.id.clone(),
        required_total,
        required_bound,
        coverage,
        missing_required,
        bound_optional,
        similarity: 0.0,
    })
}

fn coverage_rank(a: &CoverageReport, b: &CoverageReport) -> Ordering {
    desc(a.coverage, b.coverage)
        .then_with(|| desc(a.similarity, b.similarity))
        .then_with(|| a.declaration_id.cmp(&b.declaration_id))
}

/// Highest coverage wins; ties go to the higher selection similarity, then
/// the smaller declaration id.
pub fn pick_best_declaration(reports: &[CoverageReport]) -> Result<&CoverageReport> {
    reports
        .iter()
        .min_by(|a, b| coverage_rank(a, b))
        .ok_or(SynthesisError::EmptyList)
}

fn render_value(value: &str) -> String {
    value.replace('_', " ")
}

fn encode(s: &str) -> String {
    utf8_percent_encode(s, URL_COMPONENT).to_string()
}

/// Expands the declaration's path template into an absolute URL.
///
/// Values have underscores rendered as spaces and are percent-encoded.
/// Bound parameters absent from the template become query pairs for GET
/// and body fields otherwise. Bindings for undeclared names are ignored.
pub fn build_call(graph: &KnowledgeGraph, declaration: &Declaration, bindings: &Bindings) -> Result<ApiCall> {
    let api = graph
        .api(&declaration.api_id)
        .ok_or_else(|| SynthesisError::UnknownApi(declaration.api_id.clone()))?;
    let mut values = Bindings::new();
    for p in &declaration.parameters {
        match bound(bindings.get(&p.name)) {
            Some(v) => {
                values.insert(p.name.clone(), render_value(v));
            }
            None if p.required => return Err(SynthesisError::MissingRequiredParameter(p.name.clone())),
            None => {}
        }
    }

    let template = &declaration.path_template;
    let mut path = String::with_capacity(template.len());
    let mut in_template = Vec::new();
    let mut rest = template.as_str();
    while let Some(open) = rest.find('[') {
        let Some(close) = rest[open..].find(']').map(|c| open + c) else {
            break;
        };
        let name = &rest[open + 1..close];
        let value = values
            .get(name)
            .ok_or_else(|| SynthesisError::UnboundPlaceholder(name.to_string()))?;
        path.push_str(&rest[..open]);
        path.push_str(&encode(value));
        in_template.push(name.to_string());
        rest = &rest[close + 1..];
    }
    path.push_str(rest);

    let extra: Bindings = values
        .iter()
        .filter(|(k, _)| !in_template.contains(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut body = None;
    if !extra.is_empty() {
        if declaration.method == Method::Get {
            for (k, v) in &extra {
                let sep = match path.find('?') {
                    None => "?",
                    Some(_) if path.ends_with('?') || path.ends_with('&') => "",
                    Some(_) => "&",
                };
                path.push_str(sep);
                path.push_str(&encode(k));
                path.push('=');
                path.push_str(&encode(v));
            }
        } else {
            body = Some(extra);
        }
    }

    let base = api.base_uri.trim_end_matches('/');
    let scheme = if base.starts_with("http://") || base.starts_with("https://") {
        ""
    } else {
        "https://"
    };
    let joiner = if path.is_empty() || path.starts_with('/') || path.starts_with('?') {
        ""
    } else {
        "/"
    };
    Ok(ApiCall {
        method: declaration.method,
        url: format!("{scheme}{base}{joiner}{path}"),
        bindings: values,
        body,
    })
}

/// Applies the KG updater to the learned values of a ready result.
/// Returns, per value, whether it was stored.
pub fn apply_learned(graph: &mut KnowledgeGraph, learned: &[LearnedValue], threshold: f64) -> kg::Result<Vec<bool>> {
    learned
        .iter()
        .map(|l| graph.record_learned_value(&l.declaration_id, &l.param, &l.literal, l.confidence, threshold))
        .collect()
}

/// End-to-end pipeline from expression to call or follow-up.
#[derive(Debug, Default)]
pub struct Synthesizer {
    pub extractor: EntityExtractor,
    pub config: SynthesisConfig,
}

impl Synthesizer {
    pub fn new(extractor: EntityExtractor, config: SynthesisConfig) -> Self {
        Synthesizer { extractor, config }
    }

    /// Runs the pipeline. Only an empty expression is an error; every other
    /// failure is reported as `Status::NoMatch` with a reason.
    pub fn synthesize(
        &self,
        expression: &str,
        graph: &KnowledgeGraph,
        model: &EmbeddingModel,
        user_bindings: &Bindings,
    ) -> Result<SynthesisResult> {
        use NoMatchReason as R;
        let cfg = &self.config;
        let entities = match self.extractor.extract(expression, model) {
            Ok(e) => e,
            Err(ExtractError::NoEntities) => return Ok(SynthesisResult::no_match(R::NoEntities, Vec::new())),
            Err(_) => return Err(SynthesisError::EmptyExpression),
        };
        let api_scores = match select_apis(&entities, graph, model, cfg.top_k, cfg.api_min_score) {
            Ok(s) => s,
            Err(SynthesisError::EmptyGraph) => return Ok(SynthesisResult::no_match(R::EmptyGraph, entities)),
            Err(_) => return Ok(SynthesisResult::no_match(R::NoCandidates, entities)),
        };
        let candidates: Vec<&str> = api_scores.iter().map(|s| s.api_id.as_str()).collect();
        let tokens = token_texts(expression).map_err(|_| SynthesisError::EmptyExpression)?;
        let ranked = match rank_declarations(&tokens, &candidates, graph, model) {
            Ok(r) => r,
            Err(SynthesisError::AllTokensOov) => return Ok(SynthesisResult::no_match(R::AllTokensOov, entities)),
            Err(_) => return Ok(SynthesisResult::no_match(R::NoSampleExpressions, entities)),
        };
        let top = ranked[0].similarity;
        if top < cfg.declaration_floor {
            let mut r = SynthesisResult::no_match(R::BelowDeclarationFloor, entities);
            r.declaration_match = Some(ranked[0].clone());
            return Ok(r);
        }

        let mut contenders = Vec::new();
        for m in ranked.iter().take_while(|m| m.similarity >= top - cfg.tie_epsilon) {
            let decl = graph.declaration(&m.declaration_id).expect("ranked declarations exist");
            let matrix = map_entities_to_params(&entities, decl, model);
            if let Ok(mut report) = check_coverage(decl, &matrix, user_bindings) {
                report.similarity = m.similarity;
                contenders.push((report, matrix, m));
            }
        }
        let reports: Vec<CoverageReport> = contenders.iter().map(|c| c.0.clone()).collect();
        let Ok(best) = pick_best_declaration(&reports) else {
            return Ok(SynthesisResult::no_match(R::UnknownParameterInBindings, entities));
        };
        let (report, matrix, matched) = contenders
            .into_iter()
            .find(|c| c.0.declaration_id == best.declaration_id)
            .expect("winner is a contender");
        let decl = graph.declaration(&report.declaration_id).expect("declaration exists");
        let api_score = api_scores.iter().find(|s| s.api_id == decl.api_id).cloned();

        let mut result = SynthesisResult {
            status: Status::NeedsInput,
            reason: None,
            entities,
            api_score,
            declaration_match: Some(matched.clone()),
            matrix,
            coverage_report: None,
            call: None,
            learned: Vec::new(),
        };
        if report.is_complete() {
            let mut resolved: Bindings = result
                .matrix
                .entries
                .iter()
                .map(|e| (e.param.clone(), e.entity.clone()))
                .collect();
            for (k, v) in user_bindings {
                if bound(Some(v)).is_some() {
                    resolved.insert(k.clone(), v.clone());
                }
            }
            match build_call(graph, decl, &resolved) {
                Ok(call) => {
                    result.status = Status::Ready;
                    result.call = Some(call);
                    result.learned = result
                        .matrix
                        .entries
                        .iter()
                        .filter(|e| bound(user_bindings.get(&e.param)).is_none())
                        .map(|e| LearnedValue {
                            declaration_id: decl.id.clone(),
                            param: e.param.clone(),
                            literal: e.entity.clone(),
                            confidence: e.confidence,
                        })
                        .collect();
                }
                Err(_) => {
                    result.status = Status::NoMatch;
                    result.reason = Some(R::CallConstruction);
                }
            }
        }
        result.coverage_report = Some(report);
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::{EntityKind, PosTag, Span};
    use crate::kg::{Api, ParamValue, Parameter, ValueSource};
    use std::collections::BTreeSet;

    const GRAPH: &str = include_str!("../fixtures/yelp_weather.json");
    const VECS: &str = include_str!("../fixtures/walkthrough.vec");
    const EXPR: &str = "Is there any Chinese restaurant near Sydney Opera House";

    fn graph() -> KnowledgeGraph {
        KnowledgeGraph::from_json_str(GRAPH).unwrap()
    }

    fn model() -> EmbeddingModel {
        EmbeddingModel::load(VECS.as_bytes()).unwrap()
    }

    fn entity(text: &str) -> ExtractedEntity {
        ExtractedEntity {
            text: text.into(),
            kind: if text.contains('_') {
                EntityKind::Ngram
            } else {
                EntityKind::Unigram
            },
            tags: vec![PosTag::Noun],
            span: Span { start: 0, len: 1 },
        }
    }

    fn param(name: &str, required: bool, values: &[&str]) -> Parameter {
        Parameter {
            name: name.into(),
            required,
            values: values.iter().map(|v| ParamValue::new(*v, ValueSource::Seed)).collect(),
        }
    }

    fn decl(id: &str, params: Vec<Parameter>) -> Declaration {
        Declaration {
            id: id.into(),
            api_id: "api".into(),
            method: Method::Get,
            path_template: "/x".into(),
            sample_expressions: vec![],
            parameters: params,
        }
    }

    fn bindings(pairs: &[(&str, &str)]) -> Bindings {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (n(a) * n(b))
    }

    fn raw(m: &EmbeddingModel, t: &str) -> Vec<f64> {
        m.vector_of(t).unwrap().components().to_vec()
    }

    #[test]
    fn exact_tag_match_scores_one() {
        let g = graph();
        let scores = select_apis(&[entity("restaurant")], &g, &model(), 5, 0.3).unwrap();
        assert_eq!(scores[0].api_id, "yelp");
        assert_eq!(scores[0].score, 1.0);
        assert_eq!(scores[0].matched_evidence[0].term, "restaurant");
    }

    #[test]
    fn yelp_ranks_first_against_exhaustive_recomputation() {
        let (g, m) = (graph(), model());
        let ents = [entity("chinese_restaurant"), entity("sydney_opera_house")];
        let scores = select_apis(&ents, &g, &m, 5, 0.0).unwrap();
        for s in &scores {
            let terms = g.api_terms(&s.api_id);
            let expected: f64 = ents
                .iter()
                .map(|e| {
                    terms
                        .iter()
                        .filter(|t| m.contains(t))
                        .map(|t| {
                            if *t == e.text {
                                1.0
                            } else {
                                cos(&raw(&m, &e.text), &raw(&m, t))
                            }
                        })
                        .fold(0.0f64, f64::max)
                })
                .sum::<f64>()
                / ents.len() as f64;
            assert!(
                (s.score - expected).abs() < 1e-12,
                "{}: {} vs {}",
                s.api_id,
                s.score,
                expected
            );
        }
        assert_eq!(scores[0].api_id, "yelp");
        assert!(scores[0].score > scores[1].score);
    }

    #[test]
    fn unreachable_min_score_yields_no_candidates() {
        let ents = [entity("chinese_restaurant")];
        assert!(matches!(
            select_apis(&ents, &graph(), &model(), 5, 1.01),
            Err(SynthesisError::NoCandidates)
        ));
        assert!(matches!(
            select_apis(&ents, &KnowledgeGraph::new(), &model(), 5, 0.0),
            Err(SynthesisError::EmptyGraph)
        ));
    }

    #[test]
    fn verbatim_sample_has_similarity_one() {
        let (g, m) = (graph(), model());
        let tokens = token_texts("find me a good french restaurant in paris").unwrap();
        let best = select_declaration(&tokens, &["yelp"], &g, &m).unwrap();
        assert_eq!(best.declaration_id, "yelp.search");
        assert!((best.similarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn running_example_selects_yelp_search_by_exhaustive_cosines() {
        let (g, m) = (graph(), model());
        let tokens = token_texts(EXPR).unwrap();
        let sum = |ts: &[String]| {
            let mut s = vec![0.0; m.dimension()];
            for t in ts.iter().filter(|t| m.contains(t)) {
                for (a, b) in s.iter_mut().zip(raw(&m, t)) {
                    *a += b;
                }
            }
            s
        };
        let user = sum(&tokens);
        let mut oracle: Vec<(f64, String)> = g
            .declarations
            .iter()
            .flat_map(|d| d.sample_expressions.iter().map(move |s| (d.id.clone(), s)))
            .map(|(id, s)| (cos(&user, &sum(&token_texts(s).unwrap())), id))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let got = select_declaration(&tokens, &["yelp", "weather"], &g, &m).unwrap();
        assert_eq!(got.declaration_id, oracle[0].1);
        assert_eq!(got.declaration_id, "yelp.search");
        assert_eq!(got.best_sample_expression, "find me a good french restaurant in paris");
        assert!((got.similarity - oracle[0].0).abs() < 1e-9);
    }

    #[test]
    fn identical_sample_lists_tie_break_by_id() {
        let m = model();
        let mut g = graph();
        let mut twin = g.declaration("yelp.search").unwrap().clone();
        twin.id = "yelp.a_twin".into();
        g.declarations.push(twin);
        let tokens = token_texts(EXPR).unwrap();
        for _ in 0..3 {
            assert_eq!(
                select_declaration(&tokens, &["yelp"], &g, &m).unwrap().declaration_id,
                "yelp.a_twin"
            );
        }
    }

    #[test]
    fn empty_samples_and_oov_expression() {
        let (g, m) = (graph(), model());
        let mut bare = g.clone();
        for d in &mut bare.declarations {
            d.sample_expressions.clear();
        }
        assert!(matches!(
            select_declaration(&["weather"], &["yelp", "weather"], &bare, &m),
            Err(SynthesisError::NoSampleExpressions)
        ));
        assert!(matches!(
            select_declaration(&["qqq"], &["yelp"], &g, &m),
            Err(SynthesisError::AllTokensOov)
        ));
    }

    #[test]
    fn chinese_restaurant_maps_to_term() {
        let m = model();
        let d = decl(
            "d",
            vec![
                param("term", true, &["french", "pizza", "food"]),
                param("location", true, &["paris", "san_francisco"]),
            ],
        );
        assert!(
            m.similarity("chinese_restaurant", "french").unwrap()
                > ["paris", "san_francisco"]
                    .iter()
                    .map(|l| m.similarity("chinese_restaurant", l).unwrap())
                    .fold(f64::MIN, f64::max)
        );
        let matrix = map_entities_to_params(&[entity("chinese_restaurant")], &d, &m);
        assert_eq!(matrix.entries.len(), 1);
        assert_eq!(matrix.get("term").unwrap().entity, "chinese_restaurant");
    }

    #[test]
    fn exact_value_match_wins_with_confidence_one() {
        let d = decl(
            "d",
            vec![param("term", true, &["pizza"]), param("city", true, &["paris"])],
        );
        let matrix = map_entities_to_params(&[entity("paris")], &d, &model());
        assert_eq!(
            matrix.entries,
            [MatrixEntry {
                param: "city".into(),
                entity: "paris".into(),
                confidence: 1.0
            }]
        );
    }

    #[test]
    fn two_entities_one_parameter_binds_the_stronger() {
        let m = model();
        let d = decl("d", vec![param("location", true, &["paris"])]);
        let ents = [entity("melbourne"), entity("london")];
        // brute force over both possible single bindings
        let best = ents
            .iter()
            .max_by(|a, b| {
                let sa = m.similarity(&a.text, "paris").unwrap();
                let sb = m.similarity(&b.text, "paris").unwrap();
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        let matrix = map_entities_to_params(&ents, &d, &m);
        assert_eq!(matrix.entries.len(), 1);
        assert_eq!(matrix.entries[0].entity, best.text);
    }

    #[test]
    fn parameters_without_values_are_never_bound() {
        let d = decl("d", vec![param("location", true, &[])]);
        assert!(map_entities_to_params(&[entity("sydney")], &d, &model()).is_empty());
        let d = decl("d", vec![param("location", true, &["atlantis"])]);
        assert!(map_entities_to_params(&[entity("qqq")], &d, &model()).is_empty());
    }

    #[test]
    fn coverage_examples() {
        let d = decl(
            "d",
            vec![param("a", true, &[]), param("b", true, &[]), param("c", false, &[])],
        );
        let empty = ParamValueMatrix::default();
        let full = check_coverage(&d, &empty, &bindings(&[("a", "1"), ("b", "2")])).unwrap();
        assert_eq!(full.coverage, 1.0);
        assert!(full.is_complete());
        let half = check_coverage(&d, &empty, &bindings(&[("a", "1"), ("c", "z")])).unwrap();
        assert_eq!(half.coverage, 0.5);
        assert_eq!(half.missing_required, ["b"]);
        assert_eq!(half.bound_optional, [("c".to_string(), "z".to_string())]);
        let none = check_coverage(&decl("n", vec![param("c", false, &[])]), &empty, &Bindings::new()).unwrap();
        assert_eq!(none.required_total, 0);
        assert_eq!(none.coverage, 1.0);
        assert!(matches!(
            check_coverage(&d, &empty, &bindings(&[("zz", "1")])),
            Err(SynthesisError::UnknownParameterInBindings(p)) if p == "zz"
        ));
        let matrix = ParamValueMatrix {
            entries: vec![MatrixEntry {
                param: "a".into(),
                entity: "x".into(),
                confidence: 0.5,
            }],
        };
        let mixed = check_coverage(&d, &matrix, &bindings(&[("b", "y")])).unwrap();
        assert_eq!(mixed.coverage, 1.0);
    }

    fn report(id: &str, coverage: f64, similarity: f64) -> CoverageReport {
        CoverageReport {
            declaration_id: id.into(),
            required_total: 2,
            required_bound: (coverage * 2.0) as usize,
            coverage,
            missing_required: vec![],
            bound_optional: vec![],
            similarity,
        }
    }

    #[test]
    fn pick_best_examples() {
        let rs = [report("a", 0.5, 0.9), report("b", 1.0, 0.1)];
        assert_eq!(pick_best_declaration(&rs).unwrap().declaration_id, "b");
        assert_eq!(pick_best_declaration(&rs[..1]).unwrap().declaration_id, "a");
        assert!(matches!(pick_best_declaration(&[]), Err(SynthesisError::EmptyList)));
        let tied = [report("c", 1.0, 0.5), report("b", 1.0, 0.5), report("a", 1.0, 0.4)];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for p in perms {
            let shuffled: Vec<CoverageReport> = p.iter().map(|&i| tied[i].clone()).collect();
            assert_eq!(pick_best_declaration(&shuffled).unwrap().declaration_id, "b");
        }
    }

    #[test]
    fn build_call_examples() {
        let g = graph();
        let search = g.declaration("yelp.search").unwrap();
        let call = build_call(
            &g,
            search,
            &bindings(&[("term", "chinese_restaurant"), ("location", "sydney_opera_house")]),
        )
        .unwrap();
        assert_eq!(
            call.url,
            "https://api.yelp.com/search?term=chinese%20restaurant&location=sydney%20opera%20house"
        );
        assert_eq!(call.bindings["term"], "chinese restaurant");

        let mut plain = g.clone();
        plain.declarations.push(Declaration {
            id: "yelp.categories".into(),
            api_id: "yelp".into(),
            method: Method::Get,
            path_template: "/categories".into(),
            sample_expressions: vec![],
            parameters: vec![],
        });
        let d = plain.declaration("yelp.categories").unwrap();
        assert_eq!(
            build_call(&plain, d, &Bindings::new()).unwrap().url,
            "https://api.yelp.com/categories"
        );

        assert!(matches!(
            build_call(&g, search, &bindings(&[("term", "pizza")])),
            Err(SynthesisError::MissingRequiredParameter(p)) if p == "location"
        ));
    }

    #[test]
    fn extra_bindings_go_to_query_or_body() {
        let g = graph();
        let forecast = g.declaration("weather.forecast").unwrap();
        let call = build_call(
            &g,
            forecast,
            &bindings(&[("city", "new_york"), ("date", "tomorrow & after")]),
        )
        .unwrap();
        assert_eq!(
            call.url,
            "https://api.weather.example/v1/forecast?city=new%20york&date=tomorrow%20%26%20after"
        );
        let mut post = forecast.clone();
        post.method = Method::Post;
        let call = build_call(&g, &post, &bindings(&[("city", "paris"), ("date", "today")])).unwrap();
        assert_eq!(call.url, "https://api.weather.example/v1/forecast?city=paris");
        assert_eq!(call.body.unwrap()["date"], "today");
    }

    #[test]
    fn unbound_optional_placeholder_is_an_error() {
        let mut g = graph();
        g.declarations[2].path_template = "/forecast/[date]?city=[city]".into();
        let d = g.declaration("weather.forecast").unwrap();
        assert!(matches!(
            build_call(&g, d, &bindings(&[("city", "paris")])),
            Err(SynthesisError::UnboundPlaceholder(p)) if p == "date"
        ));
    }

    #[test]
    fn running_example_is_ready() {
        let (g, m) = (graph(), model());
        let r = Synthesizer::default()
            .synthesize(EXPR, &g, &m, &Bindings::new())
            .unwrap();
        assert_eq!(r.status, Status::Ready);
        assert_eq!(r.declaration_match.as_ref().unwrap().declaration_id, "yelp.search");
        let call = r.call.as_ref().unwrap();
        assert_eq!(call.bindings["term"], "chinese restaurant");
        assert_eq!(call.bindings["location"], "sydney opera house");
        assert_eq!(r.learned.len(), 2);
        assert!(r.learned.iter().all(|l| l.confidence >= KG_UPDATE_THRESHOLD));
    }

    #[test]
    fn missing_location_values_ask_for_location() {
        let m = model();
        let mut g = graph();
        g.declarations[0].parameters[1].values.clear();
        let s = Synthesizer::default();
        let r = s.synthesize(EXPR, &g, &m, &Bindings::new()).unwrap();
        assert_eq!(r.status, Status::NeedsInput);
        assert_eq!(r.missing_required(), ["location"]);
        assert!(r.call.is_none() && r.learned.is_empty());
        let r = s
            .synthesize(EXPR, &g, &m, &bindings(&[("location", "sydney")]))
            .unwrap();
        assert_eq!(r.status, Status::Ready);
        assert_eq!(
            r.call.unwrap().url,
            "https://api.yelp.com/search?term=chinese%20restaurant&location=sydney"
        );
        assert_eq!(r.learned.len(), 1);
    }

    #[test]
    fn gibberish_is_no_match() {
        let r = Synthesizer::default()
            .synthesize("asdf qwerty", &graph(), &model(), &Bindings::new())
            .unwrap();
        assert_eq!(r.status, Status::NoMatch);
        assert_eq!(r.reason, Some(NoMatchReason::NoCandidates));
        assert!(matches!(
            Synthesizer::default().synthesize("  ", &graph(), &model(), &Bindings::new()),
            Err(SynthesisError::EmptyExpression)
        ));
    }

    #[test]
    fn unknown_binding_folds_into_no_match() {
        let r = Synthesizer::default()
            .synthesize(EXPR, &graph(), &model(), &bindings(&[("colour", "red")]))
            .unwrap();
        assert_eq!(r.status, Status::NoMatch);
        assert_eq!(r.reason, Some(NoMatchReason::UnknownParameterInBindings));
    }

    #[test]
    fn coverage_breaks_similarity_ties() {
        let m = model();
        let mut g = KnowledgeGraph::new();
        g.apis.push(Api {
            id: "api".into(),
            name: "api".into(),
            description: String::new(),
            tags: BTreeSet::from(["restaurant".to_string()]),
            base_uri: "api.example.com".into(),
        });
        for (id, values) in [("a.narrow", &["paris"][..]), ("b.wide", &["french"][..])] {
            let mut d = decl(id, vec![param("term", true, values)]);
            d.sample_expressions = vec!["good french restaurant".into()];
            g.declarations.push(d);
        }
        let r = Synthesizer::default()
            .synthesize("good Chinese restaurant", &g, &m, &Bindings::new())
            .unwrap();
        // both bind `term` (positive affinity), so coverage ties and the id decides
        assert_eq!(r.coverage_report.unwrap().declaration_id, "a.narrow");
        g.declarations[0].parameters[0].values.clear();
        let r = Synthesizer::default()
            .synthesize("good Chinese restaurant", &g, &m, &Bindings::new())
            .unwrap();
        assert_eq!(r.coverage_report.unwrap().declaration_id, "b.wide");
        assert_eq!(r.status, Status::Ready);
    }
}
