//! Writes a synthetic JSON Lines dataset whose references come from the
//! template baseline.
//!
//!     cargo run --example write_toy_dataset -- toy.jsonl 20 [seed]

use std::io::Write;

use sql2text::data::template_corpus;

fn main() -> std::io::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map_or("toy.jsonl", String::as_str);
    let n = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut f = std::fs::File::create(path)?;
    for p in template_corpus(n, seed) {
        let line = serde_json::json!({ "sql": p.sql, "text": p.target.join(" ") });
        writeln!(f, "{line}")?;
    }
    println!("wrote {n} pairs to {path}");
    Ok(())
}
