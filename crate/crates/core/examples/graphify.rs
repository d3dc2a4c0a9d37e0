//! Builds the query graph for the running example and prints it as JSON and
//! Graphviz dot, plus the undirected and super-node variants.
//!
//!     cargo run --example graphify | dot -Tpng > graph.png

use sql2text::repr::{build_graph, to_dot, to_json};
use sql2text::sql::parse;

fn main() -> sql2text::Result<()> {
    let q = parse("SELECT company WHERE assets > val0 AND sales > val0 AND industry <= val1 AND profits = val2")?;
    let g = build_graph(&q);
    eprintln!("{}", to_json(&g));
    for n in g.nodes() {
        eprintln!("{:>2} {:<11} {:<12} in={}", n.id, format!("{:?}", n.kind), n.text.join(" "), g.in_degree(n.id));
    }
    eprintln!("undirected edges: {}", g.to_undirected().edges().len());
    eprintln!("with super node: {} nodes", g.with_super_node()?.node_count());
    print!("{}", to_dot(&g));
    Ok(())
}
