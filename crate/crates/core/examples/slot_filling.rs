//! Two-turn conversation: the first request lacks a location, the
//! follow-up answer is sent back as a binding.
//!
//! `cargo run --example slot_filling`

use apisynth::synthesis::follow_up_question;
use apisynth::{Bindings, EmbeddingModel, KnowledgeGraph, Status, Synthesizer};

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    // this graph stores no example locations, so "Sydney Opera House" cannot be bound
    let graph = KnowledgeGraph::load_path(format!("{dir}/yelp_weather_no_locations.json"))?;
    let model = EmbeddingModel::load_path(format!("{dir}/walkthrough.vec"))?;
    let synth = Synthesizer::default();
    let expression = "Is there any Chinese restaurant near Sydney Opera House";

    let mut bindings = Bindings::new();
    loop {
        let result = synth.synthesize(expression, &graph, &model, &bindings)?;
        match result.status {
            Status::NeedsInput => {
                for p in result.missing_required() {
                    println!("bot:  {}", follow_up_question(p));
                    println!("user: sydney opera house");
                    bindings.insert(p.clone(), "sydney opera house".into());
                }
            }
            Status::Ready => {
                let call = result.call.expect("ready results carry a call");
                println!("bot:  {} {}", call.method, call.url);
                return Ok(());
            }
            Status::NoMatch => anyhow::bail!("no match: {:?}", result.reason),
        }
    }
}
