//! Saves a model, loads it back, and checks that parameters, bytes and
//! generations are unchanged.
//!
//!     cargo run --example checkpoint_roundtrip

use sql2text::checkpoint::{load_checkpoint, save_checkpoint, to_bytes};
use sql2text::data::{build_vocab, template_corpus};
use sql2text::model::{Graph2Seq, ModelConfig};

fn main() -> sql2text::Result<()> {
    let pairs = template_corpus(5, 2);
    let (src, tgt) = build_vocab(&pairs, 1);
    let mut config = ModelConfig {
        word_dim: 16,
        ..ModelConfig::default()
    };
    config.encoder.hidden_dim = 8;
    config.encoder.hop_size = 2;
    config.decoder.hidden_size = 16;
    config.decoder.max_decode_len = 8;
    let model = Graph2Seq::<f32>::new(config, src, tgt, 11)?;

    let path = std::env::temp_dir().join("sql2text_example.ckpt");
    save_checkpoint(&model, &path)?;
    let loaded = load_checkpoint::<f32>(&path)?;
    println!("{} bytes, {} tensors", std::fs::metadata(&path).map_or(0, |m| m.len()), loaded.params.len());
    println!("parameters equal: {}", loaded.params == model.params);
    println!("bytes equal: {}", to_bytes(&loaded) == to_bytes(&model));
    for p in &pairs {
        let (a, b) = (model.generate(&p.query)?, loaded.generate(&p.query)?);
        println!("{:<5} {}", a == b, a.join(" "));
    }
    std::fs::remove_file(&path).ok();
    Ok(())
}
