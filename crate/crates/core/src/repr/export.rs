use serde::{Deserialize, Serialize};

use super::graph::{GraphError, GraphNode, QueryGraph};

#[derive(Serialize, Deserialize)]
struct GraphJson {
    nodes: Vec<GraphNode>,
    edges: Vec<[usize; 2]>,
}

/// `{"nodes":[{"id","kind","text"}],"edges":[[src,dst]]}`
pub fn to_json(graph: &QueryGraph) -> String {
    let doc = GraphJson {
        nodes: graph.nodes().to_vec(),
        edges: graph.edges().iter().map(|&(s, d)| [s, d]).collect(),
    };
    serde_json::to_string(&doc).expect("graph serializes")
}

#[derive(Debug, thiserror::Error)]
pub enum GraphJsonError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub fn from_json(text: &str) -> Result<QueryGraph, GraphJsonError> {
    let doc: GraphJson = serde_json::from_str(text)?;
    let edges = doc.edges.into_iter().map(|[s, d]| (s, d)).collect();
    Ok(QueryGraph::new(doc.nodes, edges)?)
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn to_dot(graph: &QueryGraph) -> String {
    let mut out = String::from("digraph query {\n");
    for n in graph.nodes() {
        let kind = serde_json::to_value(n.kind).expect("kind serializes");
        out.push_str(&format!(
            "  n{} [label=\"{}\", kind=\"{}\"];\n",
            n.id,
            dot_escape(&n.text.join(" ")),
            kind.as_str().unwrap_or_default()
        ));
    }
    for &(s, d) in graph.edges() {
        out.push_str(&format!("  n{s} -> n{d};\n"));
    }
    out.push_str("}\n");
    out
}
