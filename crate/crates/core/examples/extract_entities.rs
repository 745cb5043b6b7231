//! Tokenize an expression and pull out its entities, merging adjacent
//! words into n-grams when the embedding knows the phrase.
//!
//! `cargo run --example extract_entities -- "any good french restaurant in New York?"`

use apisynth::{EmbeddingModel, EntityExtractor};

fn main() -> anyhow::Result<()> {
    let expression = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "Is there any Chinese restaurant near Sydney Opera House".into());
    let model = EmbeddingModel::load_path(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/walkthrough.vec"))?;

    for token in apisynth::tokenize(&expression)? {
        print!("{} ", token.normalized);
    }
    println!();

    let extractor = EntityExtractor::default();
    for entity in extractor.extract(&expression, &model)? {
        println!(
            "{:<22} {:?} {:?} at {}+{}",
            entity.text, entity.kind, entity.tags, entity.span.start, entity.span.len
        );
    }
    Ok(())
}
