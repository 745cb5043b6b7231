//! Command-line front end. Exit codes: 0 success, 1 no match, 2 input error.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::embedding::EmbeddingModel;
use crate::kg::KnowledgeGraph;
use crate::service::{self, AppState, InvokeMode, Invoker, ServiceConfig, CONFIG_ENV};
use crate::synthesis::{apply_learned, follow_up_question, Bindings, Status, Synthesizer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NO_MATCH: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "apisynth",
    version,
    about = "Turn natural-language requests into REST API calls"
)]
pub struct Cli {
    /// JSON config file (also read from $APISYNTH_CONFIG)
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Knowledge graph document
    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
    /// Word vectors in text format
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Stopword list, one word per line
    #[arg(long, global = true)]
    pub stopwords: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize an expression into an API call
    Synth {
        expression: String,
        /// Parameter binding collected from the user, as name=value
        #[arg(long = "bind", value_parser = parse_binding)]
        bindings: Vec<(String, String)>,
        /// Print the full result as JSON
        #[arg(long)]
        json: bool,
        /// Store learned parameter values back into the graph
        #[arg(long)]
        learn: bool,
        /// Execute the call over the network
        #[arg(long)]
        live: bool,
    },
    /// Add embedding neighbors of stored values as new parameter values
    Enrich {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        min_sim: Option<f64>,
        /// Report without writing the graph
        #[arg(long)]
        dry_run: bool,
    },
    /// Inspect or edit the knowledge graph
    Kg {
        #[command(subcommand)]
        command: KgCommand,
    },
    /// Run the HTTP service
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Debug, Subcommand)]
pub enum KgCommand {
    /// Append a sample expression to a declaration
    AddExpression { declaration: String, expression: String },
    /// Check the graph document
    Validate,
}

fn parse_binding(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(format!("expected name=value, got `{s}`")),
    }
}

impl Cli {
    /// Config file values overridden by explicit flags.
    pub fn resolve_config(&self) -> Result<ServiceConfig, service::ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => ServiceConfig::load_path(p)?,
            None => ServiceConfig::default(),
        };
        if let Some(p) = &self.graph {
            cfg.graph_path = p.clone();
        }
        if let Some(p) = &self.embeddings {
            cfg.embeddings_path = p.clone();
        }
        if let Some(p) = &self.stopwords {
            cfg.stopwords_path = Some(p.clone());
        }
        if let Command::Serve { port: Some(port) } = self.command {
            cfg.listen_port = port;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_INPUT
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::Kg {
            command: KgCommand::Validate,
        } => {
            let g = KnowledgeGraph::load_path(&cfg.graph_path)?;
            writeln!(out, "ok: {} apis, {} declarations", g.apis.len(), g.declarations.len())?;
            Ok(EXIT_OK)
        }
        Command::Kg {
            command: KgCommand::AddExpression {
                declaration,
                expression,
            },
        } => {
            if expression.trim().is_empty() {
                anyhow::bail!("expression is empty");
            }
            let mut g = KnowledgeGraph::load_path(&cfg.graph_path)?;
            let added = g.add_sample_expression(declaration, expression)?;
            if added {
                g.save_path(&cfg.graph_path)?;
                writeln!(out, "added to {declaration}")?;
            } else {
                writeln!(out, "already present in {declaration}")?;
            }
            Ok(EXIT_OK)
        }
        Command::Enrich { k, min_sim, dry_run } => {
            let mut g = KnowledgeGraph::load_path(&cfg.graph_path)?;
            let model = EmbeddingModel::load_path(&cfg.embeddings_path)?;
            let k = k.unwrap_or(cfg.thresholds.enrich_k);
            let min_sim = min_sim.unwrap_or(cfg.thresholds.enrich_min_sim);
            if k == 0 {
                anyhow::bail!("--k must be positive");
            }
            let report = g.enrich_values(&model, k, min_sim);
            if !dry_run && !report.is_empty() {
                g.save_path(&cfg.graph_path)?;
            }
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(EXIT_OK)
        }
        Command::Synth {
            expression,
            bindings,
            json,
            learn,
            live,
        } => {
            let mut g = KnowledgeGraph::load_path(&cfg.graph_path)?;
            let model = EmbeddingModel::load_path(&cfg.embeddings_path)?;
            let synth = Synthesizer::new(cfg.extractor()?, cfg.synthesis_config());
            let bindings: Bindings = bindings.iter().cloned().collect();
            let result = synth.synthesize(expression, &g, &model, &bindings)?;
            if *json {
                writeln!(out, "{}", serde_json::to_string_pretty(&result)?)?;
            } else {
                print_summary(out, &result)?;
            }
            if result.status == Status::Ready && *learn {
                let accepted = apply_learned(&mut g, &result.learned, cfg.thresholds.kg_update)?;
                let stored = accepted.iter().filter(|a| **a).count();
                if stored > 0 {
                    g.save_path(&cfg.graph_path)?;
                }
                writeln!(out, "learned: {stored} new value(s)")?;
            }
            if let (Status::Ready, true, Some(call)) = (result.status, *live, &result.call) {
                let rt = tokio::runtime::Runtime::new()?;
                let outcome = rt.block_on(Invoker::new(InvokeMode::Live, true).invoke(call));
                writeln!(out, "{}", serde_json::to_string_pretty(&outcome)?)?;
            }
            Ok(match result.status {
                Status::NoMatch => EXIT_NO_MATCH,
                _ => EXIT_OK,
            })
        }
        Command::Serve { .. } => {
            let state = Arc::new(AppState::from_config(&cfg)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", cfg.listen_port)).await?;
                tracing::info!(addr = %listener.local_addr()?, "listening");
                service::serve(listener, state, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
            Ok(EXIT_OK)
        }
    }
}

fn print_summary(out: &mut dyn Write, r: &crate::synthesis::SynthesisResult) -> std::io::Result<()> {
    let status = serde_json::to_value(r.status).ok();
    let status = status.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
    writeln!(out, "status: {status}")?;
    if let Some(reason) = r.reason {
        writeln!(
            out,
            "reason: {}",
            serde_json::to_value(reason).unwrap_or_default().as_str().unwrap_or("?")
        )?;
    }
    if let Some(m) = &r.declaration_match {
        writeln!(
            out,
            "declaration: {} (similarity {:.3})",
            m.declaration_id, m.similarity
        )?;
    }
    for e in &r.matrix.entries {
        writeln!(out, "  {} <- {} (confidence {:.3})", e.param, e.entity, e.confidence)?;
    }
    if let Some(call) = &r.call {
        writeln!(out, "call: {} {}", call.method, call.url)?;
    }
    for p in r.missing_required() {
        writeln!(out, "question: {}", follow_up_question(p))?;
    }
    Ok(())
}
