//! Inspect the API knowledge graph, add a sample expression, enrich
//! parameter values from embedding neighbors and record a learned value.
//!
//! `cargo run --example knowledge_graph`

use apisynth::kg::KnowledgeGraph;
use apisynth::EmbeddingModel;

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let mut graph = KnowledgeGraph::load_path(format!("{dir}/yelp_weather.json"))?;
    let model = EmbeddingModel::load_path(format!("{dir}/walkthrough.vec"))?;

    for api in graph.summary() {
        println!("{} {:?}", api.id, api.tags);
        for d in &api.declarations {
            println!("  {} {} {} required={:?}", d.id, d.method, d.path_template, d.required);
        }
    }

    let added = graph.add_sample_expression("yelp.search", "Is there any good french restaurant around?")?;
    println!("sample added: {added}");

    let report = graph.enrich_values(&model, 2, 0.8);
    for e in &report.added {
        println!(
            "enriched {}.{}: {} -> {} ({:.3})",
            e.declaration_id, e.parameter, e.from_literal, e.added_literal, e.similarity
        );
    }
    println!(
        "{} neighbor links, {} literals not in the vocabulary",
        report.links_added, report.skipped_oov
    );

    let threshold = apisynth::kg::KG_UPDATE_THRESHOLD;
    for (literal, confidence) in [("melbourne", 0.39), ("brisbane", 0.40)] {
        let stored = graph.record_learned_value("yelp.search", "location", literal, confidence, threshold)?;
        println!(
            "learn {literal} at {confidence:.2}: {}",
            if stored { "stored" } else { "rejected" }
        );
    }
    graph.validate()?;
    Ok(())
}
