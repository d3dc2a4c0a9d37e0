//! The rule-based interpretation and the flat and tree sequence
//! representations used by sequence baselines.
//!
//!     cargo run --example template_baseline

use sql2text::repr::{linearize, template_interpret, tree_repr};
use sql2text::sql::parse;

fn main() -> sql2text::Result<()> {
    for sql in [
        "SELECT company WHERE assets > val0 AND sales > val0 AND industry <= val1 AND profits = val2",
        "SELECT COUNT player WHERE starter = val0 AND touchdowns = val1",
        "SELECT MAX height WHERE team = val0 OR NOT position != val1",
        "SELECT name, age",
    ] {
        let q = parse(sql)?;
        println!("{sql}");
        println!("  template: {}", template_interpret(&q));
        println!("  sequence: {}", linearize(&q).join(" "));
        println!("  tree:     {}", serde_json::to_string(&tree_repr(&q)).expect("tree serialises"));
    }
    Ok(())
}
