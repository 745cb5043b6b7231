//! Stateless HTTP front end over the synthesis pipeline.
//!
//! Conversation state never lives on the server: clients resend the
//! expression together with every binding collected so far. The only
//! server-side mutation is the knowledge graph itself, which is replaced
//! as a whole snapshot by a single writer and flushed to disk with an
//! atomic rename.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, Method as HttpMethod, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::embedding::{EmbeddingError, EmbeddingModel};
use crate::extractor::{EntityExtractor, ExtractError, LexiconTagger, Stopwords};
use crate::kg::{self, EnrichmentReport, KgError, KnowledgeGraph};
use crate::synthesis::{
    apply_learned, follow_up_question, ApiCall, Bindings, Status, SynthesisConfig, SynthesisError, SynthesisResult,
    Synthesizer,
};

/// Environment variable naming the JSON config file.
pub const CONFIG_ENV: &str = "APISYNTH_CONFIG";

pub const INVOKE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error(transparent)]
    Embeddings(#[from] EmbeddingError),
    #[error(transparent)]
    Extractor(#[from] ExtractError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvokeMode {
    #[default]
    DryRun,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub kg_update: f64,
    pub api_min_score: f64,
    pub declaration_floor: f64,
    pub enrich_min_sim: f64,
    pub enrich_k: usize,
    pub top_k: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        let s = SynthesisConfig::default();
        Thresholds {
            kg_update: s.kg_update_threshold,
            api_min_score: s.api_min_score,
            declaration_floor: s.declaration_floor,
            enrich_min_sim: 0.5,
            enrich_k: 5,
            top_k: s.top_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub graph_path: PathBuf,
    pub embeddings_path: PathBuf,
    /// Bundled list when unset.
    pub stopwords_path: Option<PathBuf>,
    /// Bundled lexicon when unset.
    pub lexicon_path: Option<PathBuf>,
    pub thresholds: Thresholds,
    pub listen_port: u16,
    pub invoke_mode: InvokeMode,
    /// Live invocation only happens when this is also set.
    pub allow_network: bool,
    /// `*` allows any origin.
    pub cors_origin: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            graph_path: PathBuf::from("graph.json"),
            embeddings_path: PathBuf::from("embeddings.vec"),
            stopwords_path: None,
            lexicon_path: None,
            thresholds: Thresholds::default(),
            listen_port: 8080,
            invoke_mode: InvokeMode::DryRun,
            allow_network: false,
            cors_origin: "*".into(),
        }
    }
}

impl ServiceConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = serde_json::from_str(s).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        for (name, v) in [
            ("kg_update", t.kg_update),
            ("api_min_score", t.api_min_score),
            ("declaration_floor", t.declaration_floor),
            ("enrich_min_sim", t.enrich_min_sim),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("threshold {name}={v} outside [0, 1]")));
            }
        }
        if t.top_k == 0 {
            return Err(ConfigError::Invalid("top_k must be positive".into()));
        }
        Ok(())
    }

    pub fn synthesis_config(&self) -> SynthesisConfig {
        SynthesisConfig {
            kg_update_threshold: self.thresholds.kg_update,
            api_min_score: self.thresholds.api_min_score,
            declaration_floor: self.thresholds.declaration_floor,
            top_k: self.thresholds.top_k,
            ..SynthesisConfig::default()
        }
    }

    pub fn extractor(&self) -> Result<EntityExtractor, ConfigError> {
        let tagger = match &self.lexicon_path {
            Some(p) => LexiconTagger::load_path(p)?,
            None => LexiconTagger::bundled(),
        };
        let stopwords = match &self.stopwords_path {
            Some(p) => Stopwords::load_path(p)?,
            None => Stopwords::bundled(),
        };
        Ok(EntityExtractor::new(tagger, stopwords))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvocationErrorKind {
    NetworkFailure,
    Timeout,
    NotPermitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationError {
    pub kind: InvocationErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationOutcome {
    pub mode: InvokeMode,
    pub executed: bool,
    pub call: ApiCall,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http_status: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_body: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<InvocationError>,
}

/// Executes (or, in dry-run mode, just echoes) synthesized calls.
#[derive(Debug, Clone)]
pub struct Invoker {
    mode: InvokeMode,
    allow_network: bool,
    client: reqwest::Client,
}

impl Invoker {
    pub fn new(mode: InvokeMode, allow_network: bool) -> Self {
        let client = reqwest::Client::builder()
            .timeout(INVOKE_TIMEOUT)
            .build()
            .expect("http client builds");
        Invoker {
            mode,
            allow_network,
            client,
        }
    }

    pub fn mode(&self) -> InvokeMode {
        self.mode
    }

    pub async fn invoke(&self, call: &ApiCall) -> InvocationOutcome {
        let mut outcome = InvocationOutcome {
            mode: self.mode,
            executed: false,
            call: call.clone(),
            http_status: None,
            response_body: None,
            error: None,
        };
        if self.mode == InvokeMode::DryRun {
            return outcome;
        }
        if !self.allow_network {
            outcome.error = Some(InvocationError {
                kind: InvocationErrorKind::NotPermitted,
                message: "live invocation requires allow_network".into(),
            });
            return outcome;
        }
        let method = reqwest::Method::from_bytes(call.method.to_string().as_bytes()).expect("valid method");
        let mut request = self.client.request(method, &call.url);
        if let Some(body) = &call.body {
            request = request
                .header(header::CONTENT_TYPE, "application/json")
                .body(serde_json::to_vec(body).expect("bindings serialize"));
        }
        outcome.executed = true;
        let response = match request.send().await {
            Ok(r) => r,
            Err(e) => {
                outcome.error = Some(classify(&e));
                return outcome;
            }
        };
        outcome.http_status = Some(response.status().as_u16());
        match response.bytes().await {
            Ok(body) => outcome.response_body = Some(String::from_utf8_lossy(&body).into_owned()),
            Err(e) => outcome.error = Some(classify(&e)),
        }
        outcome
    }
}

fn classify(e: &reqwest::Error) -> InvocationError {
    let kind = if e.is_timeout() {
        InvocationErrorKind::Timeout
    } else {
        InvocationErrorKind::NetworkFailure
    };
    InvocationError {
        kind,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeRequest {
    pub expression: String,
    #[serde(default)]
    pub bindings: Bindings,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesizeResponse {
    #[serde(flatten)]
    pub result: SynthesisResult,
    /// One question per missing required parameter, in order.
    pub questions: Vec<String>,
    /// Learned values the KG updater stored for this request.
    pub kg_updates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invocation: Option<InvocationOutcome>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpressionRequest {
    expression: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnrichRequest {
    k: Option<usize>,
    min_sim: Option<f64>,
}

/// Shared service state: an immutable model and a swappable graph snapshot.
pub struct AppState {
    graph: RwLock<Arc<KnowledgeGraph>>,
    writer: tokio::sync::Mutex<()>,
    graph_path: Option<PathBuf>,
    model: Arc<EmbeddingModel>,
    synthesizer: Synthesizer,
    invoker: Invoker,
    thresholds: Thresholds,
    cors_origin: String,
}

impl AppState {
    pub fn new(
        graph: KnowledgeGraph,
        model: Arc<EmbeddingModel>,
        extractor: EntityExtractor,
        config: &ServiceConfig,
    ) -> Self {
        AppState {
            graph: RwLock::new(Arc::new(graph)),
            writer: tokio::sync::Mutex::new(()),
            graph_path: None,
            model,
            synthesizer: Synthesizer::new(extractor, config.synthesis_config()),
            invoker: Invoker::new(config.invoke_mode, config.allow_network),
            thresholds: config.thresholds.clone(),
            cors_origin: config.cors_origin.clone(),
        }
    }

    /// Loads graph, embeddings, tagger and stopwords named by the config.
    /// Graph updates are flushed back to `graph_path`.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let graph = KnowledgeGraph::load_path(&config.graph_path)?;
        let model = Arc::new(EmbeddingModel::load_path(&config.embeddings_path)?);
        let mut state = AppState::new(graph, model, config.extractor()?, config);
        state.graph_path = Some(config.graph_path.clone());
        Ok(state)
    }

    /// Persist graph updates to `path`.
    pub fn with_graph_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.graph_path = Some(path.into());
        self
    }

    pub fn snapshot(&self) -> Arc<KnowledgeGraph> {
        self.graph.read().expect("graph lock").clone()
    }

    /// Applies `f` to a copy of the current graph, persists it and swaps it
    /// in. Writers are serialized; readers keep their old snapshot.
    pub async fn update_graph<T>(
        &self,
        f: impl FnOnce(&mut KnowledgeGraph) -> Result<T, KgError>,
    ) -> Result<T, KgError> {
        let _guard = self.writer.lock().await;
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next)?;
        next.validate()?;
        if let Some(path) = &self.graph_path {
            next.save_path(path)?;
        }
        *self.graph.write().expect("graph lock") = Arc::new(next);
        Ok(out)
    }

    pub async fn synthesize(&self, request: &SynthesizeRequest) -> Result<SynthesizeResponse, SynthesisError> {
        let graph = self.snapshot();
        let result = self
            .synthesizer
            .synthesize(&request.expression, &graph, &self.model, &request.bindings)?;
        let questions = result
            .missing_required()
            .iter()
            .map(|p| follow_up_question(p))
            .collect();
        let mut kg_updates = 0;
        let mut invocation = None;
        if result.status == Status::Ready {
            let threshold = self.thresholds.kg_update;
            if result.learned.iter().any(|l| l.confidence >= threshold) {
                let learned = result.learned.clone();
                match self.update_graph(|g| apply_learned(g, &learned, threshold)).await {
                    Ok(accepted) => {
                        kg_updates = accepted.iter().filter(|a| **a).count();
                        if kg_updates > 0 {
                            tracing::info!(kg_updates, "stored learned parameter values");
                        }
                    }
                    Err(e) => tracing::warn!(error = %e, "KG update failed"),
                }
            }
            if self.invoker.mode() == InvokeMode::Live {
                if let Some(call) = &result.call {
                    invocation = Some(self.invoker.invoke(call).await);
                }
            }
        }
        Ok(SynthesizeResponse {
            result,
            questions,
            kg_updates,
            invocation,
        })
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

#[allow(clippy::result_large_err)]
fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_apis(State(state): State<Arc<AppState>>) -> Response {
    Json(state.snapshot().summary()).into_response()
}

async fn synthesize(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let request: SynthesizeRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match state.synthesize(&request).await {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn add_expression(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let request: ExpressionRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    if request.expression.trim().is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "expression is empty");
    }
    match state
        .update_graph(|g| g.add_sample_expression(&id, &request.expression))
        .await
    {
        Ok(added) => Json(json!({ "declaration_id": id, "added": added })).into_response(),
        Err(KgError::UnknownDeclaration(d)) => error(StatusCode::NOT_FOUND, format!("unknown declaration `{d}`")),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn enrich(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let request: EnrichRequest = if body.iter().all(u8::is_ascii_whitespace) {
        EnrichRequest::default()
    } else {
        match parse(&body) {
            Ok(r) => r,
            Err(resp) => return resp,
        }
    };
    let k = request.k.unwrap_or(state.thresholds.enrich_k);
    let min_sim = request.min_sim.unwrap_or(state.thresholds.enrich_min_sim);
    if k == 0 || !(0.0..=1.0).contains(&min_sim) {
        return error(StatusCode::BAD_REQUEST, "k must be positive and min_sim within [0, 1]");
    }
    let model = state.model.clone();
    match state
        .update_graph(|g| Ok::<EnrichmentReport, kg::KgError>(g.enrich_values(&model, k, min_sim)))
        .await
    {
        Ok(report) => Json(report).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let origin = if state.cors_origin == "*" {
        AllowOrigin::any()
    } else {
        match HeaderValue::from_str(&state.cors_origin) {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => AllowOrigin::any(),
        }
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([HttpMethod::GET, HttpMethod::POST, HttpMethod::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/apis", get(list_apis))
        .route("/synthesize", post(synthesize))
        .route("/kg/declarations/{id}/expressions", post(add_expression))
        .route("/kg/enrich", post(enrich))
        .layer(cors)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
