//! Trains briefly on a toy corpus, then compares greedy decoding with beam
//! search at several widths.
//!
//!     cargo run --release --example beam_decode

use sql2text::data::template_corpus;
use sql2text::train::{train, TrainConfig};

fn main() -> sql2text::Result<()> {
    let pairs = template_corpus(30, 5);
    let mut config = TrainConfig {
        epochs: 30,
        batch_size: 10,
        lr: 0.005,
        ..TrainConfig::default()
    };
    config.model.word_dim = 32;
    config.model.encoder.hidden_dim = 32;
    config.model.encoder.hop_size = 2;
    config.model.decoder.hidden_size = 48;
    let model = train::<f32>(&config, &pairs, &[])?.model;

    for p in &pairs[..3] {
        let prepared = model.prepare(&p.query);
        println!("{}", p.sql);
        println!("  reference  {}", p.target.join(" "));
        let g = model.greedy(&prepared, model.config.decoder.max_decode_len)?;
        println!("  greedy     {:<70} logp {:.3}", model.tgt_vocab.decode(&g.tokens).join(" "), g.log_prob);
        for beam in [1, 3, 5] {
            let mut dc = model.config.decoder.clone();
            dc.beam_size = beam;
            let h = model.beam_search(&prepared, &dc)?;
            println!("  beam {beam}     {:<70} logp {:.3}", model.tgt_vocab.decode(&h.tokens).join(" "), h.log_prob);
        }
    }
    Ok(())
}
