//! Corpus BLEU-4 with its n-gram precisions and brevity penalty.
//!
//!     cargo run --example bleu

use sql2text::eval::{bleu4_corpus, sentence_bleu};

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn main() -> sql2text::Result<()> {
    let refs = [
        "which company has assets more than val_0 and sales more than val_0",
        "how many player are there where starter equals val_0",
    ];
    let hyps = [
        "which company has assets more than val_0 and sales above val_0",
        "how many player where starter equals val_0",
    ];
    let r: Vec<Vec<&str>> = refs.iter().map(|s| words(s)).collect();
    let h: Vec<Vec<&str>> = hyps.iter().map(|s| words(s)).collect();
    let score = bleu4_corpus(&h, &r)?;
    println!("corpus BLEU-4 {:.4}", score.bleu);
    for n in 0..4 {
        println!("  p{} = {}/{} = {:.4}", n + 1, score.matches[n], score.totals[n], score.precisions[n]);
    }
    println!("  BP = {:.4} (hyp {} / ref {} tokens)", score.brevity_penalty, score.hyp_len, score.ref_len);
    for (h, r) in h.iter().zip(&r) {
        println!("sentence BLEU (add-one) {:.4}", sentence_bleu(h, r));
    }
    Ok(())
}
