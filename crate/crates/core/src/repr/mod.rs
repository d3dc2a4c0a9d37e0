//! Input encodings of a parsed query: the directed graph consumed by the
//! graph encoder, a flat token sequence, a constituent tree, and the
//! rule-based template sentence.

mod export;
mod graph;
mod sequence;

pub use export::{from_json, to_dot, to_json, GraphJsonError};
pub use graph::{build_graph, GraphError, GraphNode, NodeKind, QueryGraph};
pub use sequence::{linearize, template_interpret, tree_repr, TreeNode, TreeRepr, SEP};
