//! Runs the graph encoder on the running example with random weights and
//! prints per-node embeddings and both graph embeddings.
//!
//!     cargo run --example encode_graph

use sql2text::data::{build_vocab, ExamplePair};
use sql2text::encoder::GraphEmbeddingMethod;
use sql2text::model::{Graph2Seq, ModelConfig};
use sql2text::tensor::Tape;

const SQL: &str = "SELECT company WHERE assets > val0 AND sales > val0 AND industry <= val1 AND profits = val2";

fn main() -> sql2text::Result<()> {
    let pair = ExamplePair::new(SQL, "unused")?;
    let (src, tgt) = build_vocab(std::slice::from_ref(&pair), 1);
    let mut config = ModelConfig {
        word_dim: 16,
        ..ModelConfig::default()
    };
    config.encoder.hidden_dim = 4;
    config.encoder.hop_size = 2;
    config.decoder.hidden_size = 4;

    for method in [GraphEmbeddingMethod::Pooling, GraphEmbeddingMethod::Supernode] {
        config.encoder.ge_method = method;
        let model = Graph2Seq::<f64>::new(config.clone(), src.clone(), tgt.clone(), 1)?;
        let prepared = model.prepare(&pair.query);
        let mut tape = Tape::new(&model.params);
        let enc = model.encode(&mut tape, &prepared)?;
        println!("{method:?}");
        for (node, row) in prepared.graph.nodes().iter().zip(tape.value(enc.nodes).to_rows()) {
            let row: Vec<String> = row.iter().map(|x| format!("{x:+.2e}")).collect();
            println!("  {:<12} [{}]", node.text.join(" "), row.join(" "));
        }
        let g: Vec<String> = tape.value(enc.graph).data().iter().map(|x| format!("{x:+.2e}")).collect();
        println!("  graph        [{}]", g.join(" "));
    }
    Ok(())
}
