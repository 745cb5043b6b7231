//! Load word vectors, compare words and query nearest neighbors.
//!
//! `cargo run --example embeddings`

use apisynth::embedding::EmbeddingModel;

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy.vec");
    let model = EmbeddingModel::load_path(path)?;
    println!("{} tokens, {} dimensions", model.len(), model.dimension());

    for (a, b) in [("paris", "london"), ("paris", "pizza"), ("french", "chinese")] {
        println!("cos({a}, {b}) = {:.3}", model.similarity(a, b).unwrap_or(f64::NAN));
    }

    for (token, sim) in model.nearest_neighbors("paris", 3)? {
        println!("paris ~ {token} ({sim:.3})");
    }

    let phrase = model.expression_vector(&["french", "restaurant", "unknownword"])?;
    let food = model.vector_of("pizza").expect("pizza is in the fixture");
    println!(
        "cos(\"french restaurant\", pizza) = {:.3}",
        apisynth::cosine(&phrase, &food)?
    );
    Ok(())
}
