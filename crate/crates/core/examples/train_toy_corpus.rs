//! Trains a small model on a synthetic corpus whose references come from the
//! template baseline, then prints a few generations.
//!
//!     cargo run --release --example train_toy_corpus

use std::time::Instant;

use sql2text::data::template_corpus;
use sql2text::train::{train_with, TrainConfig};

fn main() -> sql2text::Result<()> {
    let pairs = template_corpus(20, 7);
    let mut config = TrainConfig {
        epochs: 300,
        patience: 0,
        target_bleu: Some(0.9),
        dev_every: 10,
        ..TrainConfig::default()
    };
    config.model.word_dim = 300;
    config.model.encoder.hidden_dim = 64;
    config.model.encoder.hop_size = 3;
    config.model.decoder.hidden_size = 64;

    let start = Instant::now();
    let out = train_with::<f32>(&config, &pairs, &pairs, |m| {
        if let Some(b) = m.dev_bleu {
            println!("epoch {:>3}  loss {:.4}  bleu {:.3}  ({:.1?})", m.epoch, m.train_loss, b, start.elapsed());
        }
    })?;
    println!("best epoch {} bleu {:?}", out.best_epoch, out.best_dev_bleu);
    for p in pairs.iter().take(3) {
        println!("{}\n  -> {}", p.sql, out.model.generate(&p.query)?.join(" "));
    }
    Ok(())
}
