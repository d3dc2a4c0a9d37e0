use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sql::{Condition, LogicExpr, SqlQuery};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Select,
    Aggregation,
    Column,
    Constraint,
    Operator,
    Super,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub kind: NodeKind,
    pub text: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a missing node")]
    DanglingEdge(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("node {0} has an empty text attribute")]
    EmptyText(usize),
    #[error("node ids must be dense: position {position} holds id {id}")]
    SparseIds { position: usize, id: usize },
    #[error("graph already contains a super node")]
    HasSuperNode,
}

/// Directed graph with typed, token-labelled nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGraph {
    nodes: Vec<GraphNode>,
    edges: Vec<(usize, usize)>,
    #[serde(default)]
    undirected_view: bool,
}

/// Splits a column name or value into lowercase word tokens.
pub(crate) fn words(text: &str) -> Vec<String> {
    let w: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if w.is_empty() {
        vec![text.to_lowercase()]
    } else {
        w
    }
}

impl QueryGraph {
    /// Builds a graph from explicit parts, checking the structural invariants
    /// that the encoder relies on (dense ids, no self-loops or duplicates).
    pub fn new(nodes: Vec<GraphNode>, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        for (position, n) in nodes.iter().enumerate() {
            if n.id != position {
                return Err(GraphError::SparseIds { position, id: n.id });
            }
            if n.text.is_empty() || n.text.iter().any(String::is_empty) {
                return Err(GraphError::EmptyText(n.id));
            }
        }
        let mut seen = BTreeSet::new();
        for &(s, d) in &edges {
            if s >= nodes.len() || d >= nodes.len() {
                return Err(GraphError::DanglingEdge(s, d));
            }
            if s == d {
                return Err(GraphError::SelfLoop(s));
            }
            if !seen.insert((s, d)) {
                return Err(GraphError::DuplicateEdge(s, d));
            }
        }
        Ok(Self {
            nodes,
            edges,
            undirected_view: false,
        })
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_undirected_view(&self) -> bool {
        self.undirected_view
    }

    /// Nodes that `v` points to.
    pub fn forward_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for &(s, d) in &self.edges {
            out[s].push(d);
        }
        out
    }

    /// Nodes that point to `v`.
    pub fn backward_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for &(s, d) in &self.edges {
            out[d].push(s);
        }
        out
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(_, d)| d == v).count()
    }

    pub fn has_super_node(&self) -> bool {
        self.nodes.iter().any(|n| n.kind == NodeKind::Super)
    }

    /// Adds the mirror of every edge. Idempotent.
    pub fn to_undirected(&self) -> QueryGraph {
        let mut seen: BTreeSet<(usize, usize)> = self.edges.iter().copied().collect();
        let mut edges = self.edges.clone();
        for &(s, d) in &self.edges {
            if seen.insert((d, s)) {
                edges.push((d, s));
            }
        }
        QueryGraph {
            nodes: self.nodes.clone(),
            edges,
            undirected_view: true,
        }
    }

    /// Appends a super node with an edge from every existing node into it.
    pub fn with_super_node(&self) -> Result<QueryGraph, GraphError> {
        if self.has_super_node() {
            return Err(GraphError::HasSuperNode);
        }
        let id = self.nodes.len();
        let mut nodes = self.nodes.clone();
        nodes.push(GraphNode {
            id,
            kind: NodeKind::Super,
            text: vec!["<super>".into()],
        });
        let mut edges = self.edges.clone();
        edges.extend((0..id).map(|v| (v, id)));
        Ok(QueryGraph {
            nodes,
            edges,
            undirected_view: self.undirected_view,
        })
    }

    /// True when every node is reachable ignoring edge direction.
    pub fn is_weakly_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for &(s, d) in &self.edges {
            adj[s].push(d);
            adj[d].push(s);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn is_acyclic(&self) -> bool {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for &(_, d) in &self.edges {
            indeg[d] += 1;
        }
        let fwd = self.forward_neighbors();
        let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut visited = 0;
        while let Some(v) = queue.pop() {
            visited += 1;
            for &u in &fwd[v] {
                indeg[u] -= 1;
                if indeg[u] == 0 {
                    queue.push(u);
                }
            }
        }
        visited == n
    }
}

struct Builder {
    nodes: Vec<GraphNode>,
    edges: Vec<(usize, usize)>,
    constraints: HashMap<Vec<String>, usize>,
    select: usize,
}

impl Builder {
    fn node(&mut self, kind: NodeKind, text: Vec<String>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(GraphNode { id, kind, text });
        id
    }

    fn edge(&mut self, s: usize, d: usize) {
        if s != d && !self.edges.contains(&(s, d)) {
            self.edges.push((s, d));
        }
    }

    /// Column node for the condition plus its (possibly shared) constraint node.
    fn condition(&mut self, c: &Condition) -> usize {
        let col = self.node(NodeKind::Column, words(&c.column));
        let mut text = vec![c.comparator.symbol().to_string()];
        text.extend(words(&c.value.text));
        let constraint = match self.constraints.get(&text) {
            Some(&id) => id,
            None => {
                let id = self.node(NodeKind::Constraint, text.clone());
                self.constraints.insert(text, id);
                id
            }
        };
        self.edge(col, constraint);
        col
    }

    fn expr(&mut self, e: &LogicExpr, parent: usize) {
        match e {
            LogicExpr::Condition(c) => {
                let col = self.condition(c);
                self.edge(parent, col);
            }
            op => {
                let word = op.op().expect("operator").word();
                let id = self.node(NodeKind::Operator, vec![word.to_string()]);
                if parent != self.select {
                    self.edge(parent, id);
                }
                self.edge(id, self.select);
                for child in op.children() {
                    self.expr(child, id);
                }
            }
        }
    }
}

/// Builds the directed query graph.
///
/// Edge convention: `select → column` (or `select → aggregation → column`),
/// `operator → select`, `operator → column` for each operand condition,
/// nested `operator → operator`, and `column → constraint`. Constraint nodes
/// with identical text are shared. A WHERE clause without any operator hangs
/// its condition column directly under the select node.
pub fn build_graph(query: &SqlQuery) -> QueryGraph {
    let mut b = Builder {
        nodes: Vec::new(),
        edges: Vec::new(),
        constraints: HashMap::new(),
        select: 0,
    };
    b.select = b.node(NodeKind::Select, vec!["select".into()]);
    let head = match query.aggregation {
        Some(agg) => {
            let a = b.node(NodeKind::Aggregation, vec![agg.keyword().to_string()]);
            b.edge(b.select, a);
            a
        }
        None => b.select,
    };
    for col in &query.select_columns {
        let c = b.node(NodeKind::Column, words(col));
        b.edge(head, c);
    }
    if let Some(w) = &query.where_clause {
        let select = b.select;
        b.expr(w, select);
    }
    QueryGraph {
        nodes: b.nodes,
        edges: b.edges,
        undirected_view: false,
    }
}
