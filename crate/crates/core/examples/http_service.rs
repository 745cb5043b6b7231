//! Serve the synthesizer over HTTP on an ephemeral port and talk to it.
//!
//! `cargo run --example http_service`

use std::sync::Arc;

use apisynth::service::{self, AppState, ServiceConfig};
use apisynth::{EmbeddingModel, EntityExtractor, KnowledgeGraph};

async fn post(client: &reqwest::Client, url: &str, body: serde_json::Value) -> anyhow::Result<serde_json::Value> {
    let text = client
        .post(url)
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .await?
        .text()
        .await?;
    Ok(serde_json::from_str(&text)?)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let graph = KnowledgeGraph::load_path(format!("{dir}/yelp_weather_no_locations.json"))?;
    let model = Arc::new(EmbeddingModel::load_path(format!("{dir}/walkthrough.vec"))?);
    let state = AppState::new(graph, model, EntityExtractor::default(), &ServiceConfig::default());

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let url = format!("http://{}/synthesize", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(service::serve(listener, Arc::new(state), async {
        let _ = stopped.await;
    }));

    let client = reqwest::Client::new();
    let expression = "Is there any Chinese restaurant near Sydney Opera House";
    let first = post(&client, &url, serde_json::json!({ "expression": expression })).await?;
    println!("{} {}", first["status"], first["questions"]);
    let second = post(
        &client,
        &url,
        serde_json::json!({ "expression": expression, "bindings": { "location": "sydney opera house" } }),
    )
    .await?;
    println!("{} {}", second["status"], second["call"]["url"]);

    let _ = stop.send(());
    server.await??;
    Ok(())
}
