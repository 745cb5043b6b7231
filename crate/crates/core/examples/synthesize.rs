//! Turn a natural-language request into an API call.
//!
//! `cargo run --example synthesize -- "find me a pizza place in london"`

use apisynth::synthesis::follow_up_question;
use apisynth::{Bindings, EmbeddingModel, KnowledgeGraph, Status, Synthesizer};

fn main() -> anyhow::Result<()> {
    let expression = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "Is there any Chinese restaurant near Sydney Opera House".into());
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let graph = KnowledgeGraph::load_path(format!("{dir}/yelp_weather.json"))?;
    let model = EmbeddingModel::load_path(format!("{dir}/walkthrough.vec"))?;

    let result = Synthesizer::default().synthesize(&expression, &graph, &model, &Bindings::new())?;
    let entities: Vec<_> = result.entities.iter().map(|e| e.text.as_str()).collect();
    println!("entities: {entities:?}");
    if let Some(api) = &result.api_score {
        println!("api: {} (score {:.3})", api.api_id, api.score);
    }
    if let Some(m) = &result.declaration_match {
        println!(
            "declaration: {} via \"{}\" ({:.3})",
            m.declaration_id, m.best_sample_expression, m.similarity
        );
    }
    for e in &result.matrix.entries {
        println!("  {} = {} ({:.3})", e.param, e.entity, e.confidence);
    }
    match (result.status, &result.call) {
        (Status::Ready, Some(call)) => println!("{} {}", call.method, call.url),
        (Status::NeedsInput, _) => {
            for p in result.missing_required() {
                println!("{}", follow_up_question(p));
            }
        }
        _ => println!("no match: {:?}", result.reason),
    }
    Ok(())
}
