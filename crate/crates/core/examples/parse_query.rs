//! Parses a query, prints its AST and canonical rendering, and shows how an
//! unsupported construct is reported.
//!
//!     cargo run --example parse_query -- "SELECT COUNT name WHERE age > 30"

use sql2text::sql::{parse, parse_with, render, ParseOptions};

fn main() {
    let sql = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "SELECT COUNT player WHERE team = 'Lakers' AND (points > 20 OR NOT rank <= val1)".into());
    match parse_with(&sql, ParseOptions { anonymize: true }) {
        Ok(q) => {
            println!("{}", serde_json::to_string_pretty(&q).expect("AST serialises"));
            println!("rendered: {}", render(&q));
        }
        Err(e) => println!("error: {e}"),
    }
    if let Err(e) = parse("SELECT a FROM t ORDER BY a") {
        println!("error: {e}");
    }
}
