//! Graph encoder: LSTM node features, K hops of direction-aware max-pooling
//! aggregation, and a pooled or super-node graph embedding.
//!
//! For every hop `k` and node `v`:
//!
//! ```text
//! n_fwd(v) = max_{u ∈ out(v)} relu(M_fwd_k · h_fwd(u) + m)      (zero if out(v) = ∅)
//! h_fwd(v) = relu(W_fwd_k · [h_fwd(v); n_fwd(v)] + w)
//! ```
//!
//! and the same with `in(v)` for the backward direction. The final node
//! embedding is `[h_fwd_K(v); h_bwd_K(v)]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, LstmCell, ParamSource};
use crate::repr::QueryGraph;
use crate::tensor::{ParamId, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphEmbeddingMethod {
    /// Fully connected layer followed by max-pooling over all nodes.
    Pooling,
    /// Embedding of an extra node that every other node points to.
    Supernode,
}

impl std::str::FromStr for GraphEmbeddingMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pooling" | "pge" => Ok(Self::Pooling),
            "supernode" | "nge" => Ok(Self::Supernode),
            other => Err(format!("unknown graph embedding method {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hop_size: usize,
    pub hidden_dim: usize,
    /// Use one `W_k` for both directions instead of separate matrices.
    pub share_direction_weights: bool,
    pub ge_method: GraphEmbeddingMethod,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hop_size: 6,
            hidden_dim: 300,
            share_direction_weights: false,
            ge_method: GraphEmbeddingMethod::Pooling,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Hop {
    agg_fwd: Linear,
    agg_bwd: Linear,
    w_fwd: Linear,
    w_bwd: Linear,
}

/// Per-hop node representations recorded on a tape.
#[derive(Clone, Debug)]
pub struct NodeEmbeddings {
    /// Initial features `a`, `|V| × d`.
    pub initial: Var,
    /// `h_fwd[k]` for `k = 0..=K`; `h_fwd[0] == initial`.
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
    /// `[h_fwd[K]; h_bwd[K]]`, `|V| × 2d`.
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct EncodedGraph {
    /// Embeddings of the query's own nodes (super node excluded), `|V| × 2d`.
    pub nodes: Var,
    /// `1 × 2d`.
    pub graph: Var,
    pub layers: NodeEmbeddings,
}

#[derive(Clone, Debug)]
pub struct GraphEncoder {
    pub config: EncoderConfig,
    pub embedding: ParamId,
    node_lstm: LstmCell,
    hops: Vec<Hop>,
    pool: Option<Linear>,
}

impl GraphEncoder {
    pub fn new<T: Real>(
        src: &mut ParamSource<'_, T>,
        config: EncoderConfig,
        vocab_size: usize,
        word_dim: usize,
    ) -> Result<Self> {
        if config.hidden_dim == 0 {
            return Err(Error::Config("encoder hidden_dim must be at least 1".into()));
        }
        let d = config.hidden_dim;
        let embedding = src.weight("encoder.embedding", vec![vocab_size, word_dim])?;
        let node_lstm = LstmCell::new(src, "encoder.node_lstm", word_dim, d)?;
        let mut hops = Vec::with_capacity(config.hop_size);
        for k in 1..=config.hop_size {
            let agg_fwd = Linear::new(src, &format!("encoder.hop{k}.agg_fwd"), d, d)?;
            let agg_bwd = Linear::new(src, &format!("encoder.hop{k}.agg_bwd"), d, d)?;
            let (w_fwd, w_bwd) = if config.share_direction_weights {
                let w = Linear::new(src, &format!("encoder.hop{k}.w"), 2 * d, d)?;
                (w, w)
            } else {
                (
                    Linear::new(src, &format!("encoder.hop{k}.w_fwd"), 2 * d, d)?,
                    Linear::new(src, &format!("encoder.hop{k}.w_bwd"), 2 * d, d)?,
                )
            };
            hops.push(Hop {
                agg_fwd,
                agg_bwd,
                w_fwd,
                w_bwd,
            });
        }
        let pool = match config.ge_method {
            GraphEmbeddingMethod::Pooling => Some(Linear::new(src, "encoder.pool", 2 * d, 2 * d)?),
            GraphEmbeddingMethod::Supernode => None,
        };
        Ok(Self {
            config,
            embedding,
            node_lstm,
            hops,
            pool,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.config.hidden_dim
    }

    /// Final LSTM hidden state over each node's token embeddings, `|V| × d`.
    /// Nodes of equal token length run through the cell as one batch.
    pub fn init_node_features<T: Real>(&self, tape: &mut Tape<'_, T>, node_tokens: &[Vec<usize>]) -> Result<Var> {
        if node_tokens.is_empty() {
            return Err(Error::Empty("graph"));
        }
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (v, toks) in node_tokens.iter().enumerate() {
            if toks.is_empty() {
                return Err(Error::Invalid(format!("node {v} has no text tokens")));
            }
            by_len.entry(toks.len()).or_default().push(v);
        }
        let d = self.config.hidden_dim;
        let table = tape.param(self.embedding);
        let mut outputs = Vec::new();
        let mut order = Vec::with_capacity(node_tokens.len());
        for (len, members) in by_len {
            let zeros = Tensor::zeros(vec![members.len(), d]);
            let mut h = tape.constant(zeros.clone());
            let mut c = tape.constant(zeros);
            for t in 0..len {
                let ids: Vec<usize> = members.iter().map(|&v| node_tokens[v][t]).collect();
                let x = tape.gather_rows(table, &ids)?;
                (h, c) = self.node_lstm.step(tape, x, h, c)?;
            }
            outputs.push(h);
            order.extend(members);
        }
        let stacked = if outputs.len() == 1 {
            outputs[0]
        } else {
            tape.concat_rows(&outputs)?
        };
        if order.iter().enumerate().all(|(i, &v)| i == v) {
            return Ok(stacked);
        }
        let mut position = vec![0; order.len()];
        for (row, &v) in order.iter().enumerate() {
            position[v] = row;
        }
        Ok(tape.gather_rows(stacked, &position)?)
    }

    /// `max_{u ∈ group} relu(FC(h_u))` for every group; empty groups give zeros.
    pub fn aggregate_neighbors<T: Real>(
        tape: &mut Tape<'_, T>,
        h: Var,
        groups: &[Vec<usize>],
        fc: &Linear,
    ) -> Result<Var> {
        let projected = fc.forward(tape, h)?;
        let activated = tape.relu(projected);
        Ok(tape.segment_max(activated, groups)?)
    }

    /// Runs the K hops in both directions starting from features `a`.
    pub fn propagate<T: Real>(&self, tape: &mut Tape<'_, T>, graph: &QueryGraph, a: Var) -> Result<NodeEmbeddings> {
        let out_nbrs = graph.forward_neighbors();
        let in_nbrs = graph.backward_neighbors();
        let mut forward = vec![a];
        let mut backward = vec![a];
        for hop in &self.hops {
            let hf = *forward.last().expect("non-empty");
            let hb = *backward.last().expect("non-empty");

            let nf = Self::aggregate_neighbors(tape, hf, &out_nbrs, &hop.agg_fwd)?;
            let cat = tape.concat_cols(&[hf, nf])?;
            let z = hop.w_fwd.forward(tape, cat)?;
            forward.push(tape.relu(z));

            let nb = Self::aggregate_neighbors(tape, hb, &in_nbrs, &hop.agg_bwd)?;
            let cat = tape.concat_cols(&[hb, nb])?;
            let z = hop.w_bwd.forward(tape, cat)?;
            backward.push(tape.relu(z));
        }
        let last_f = *forward.last().expect("non-empty");
        let last_b = *backward.last().expect("non-empty");
        let output = tape.concat_cols(&[last_f, last_b])?;
        Ok(NodeEmbeddings {
            initial: a,
            forward,
            backward,
            output,
        })
    }

    /// `max_v FC(e_v)` over the rows of `node_embs`.
    pub fn graph_embedding_pooling<T: Real>(&self, tape: &mut Tape<'_, T>, node_embs: Var) -> Result<Var> {
        let pool = self
            .pool
            .as_ref()
            .ok_or_else(|| Error::Config("pooling layer not present in a supernode model".into()))?;
        let projected = pool.forward(tape, node_embs)?;
        Ok(tape.max_rows(projected)?)
    }

    /// Encodes a graph whose nodes carry the given source-vocabulary token ids.
    /// For the supernode method `super_token` labels the added node.
    pub fn encode<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        graph: &QueryGraph,
        node_tokens: &[Vec<usize>],
        super_token: usize,
    ) -> Result<EncodedGraph> {
        if graph.node_count() != node_tokens.len() {
            return Err(Error::Invalid(format!(
                "graph has {} nodes but {} token lists were given",
                graph.node_count(),
                node_tokens.len()
            )));
        }
        match self.config.ge_method {
            GraphEmbeddingMethod::Pooling => {
                let a = self.init_node_features(tape, node_tokens)?;
                let layers = self.propagate(tape, graph, a)?;
                let g = self.graph_embedding_pooling(tape, layers.output)?;
                Ok(EncodedGraph {
                    nodes: layers.output,
                    graph: g,
                    layers,
                })
            }
            GraphEmbeddingMethod::Supernode => {
                let augmented = graph.with_super_node()?;
                let mut tokens = node_tokens.to_vec();
                tokens.push(vec![super_token]);
                let a = self.init_node_features(tape, &tokens)?;
                let layers = self.propagate(tape, &augmented, a)?;
                let n = graph.node_count();
                let own: Vec<usize> = (0..n).collect();
                let nodes = tape.gather_rows(layers.output, &own)?;
                let g = tape.gather_rows(layers.output, &[n])?;
                Ok(EncodedGraph {
                    nodes,
                    graph: g,
                    layers,
                })
            }
        }
    }
}
