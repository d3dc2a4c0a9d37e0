//! LSTM decoder with attention over node embeddings.
//!
//! Each step feeds `[embed(y_{i-1}); c_{i-1}]` to the cell, attends over the
//! node embeddings with the new hidden state `s_i`, and predicts `y_i` from
//! `[s_i; c_i]`. The initial hidden state is `tanh(FC(graph embedding))`.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncodedGraph;
use crate::error::{Error, Result};
use crate::nn::{Linear, LstmCell, ParamSource};
use crate::tensor::{log_softmax_slice, ParamId, Real, Tape, Tensor, Var};
use crate::vocab::{BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// `w · tanh(FC_s(s) + FC_h(e_v))`
    Additive,
    /// `FC_s(s) · e_v`
    Dot,
}

impl std::str::FromStr for AttentionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "additive" => Ok(Self::Additive),
            "dot" => Ok(Self::Dot),
            other => Err(format!("unknown attention kind {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub hidden_size: usize,
    pub max_decode_len: usize,
    pub beam_size: usize,
    pub length_norm_alpha: f64,
    pub attention: AttentionKind,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden_size: 300,
            max_decode_len: 60,
            beam_size: 5,
            length_norm_alpha: 0.0,
            attention: AttentionKind::Additive,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
    /// Context from the previous step, `1 × 2d`.
    pub context: Var,
    pub prev_token: usize,
}

/// Precomputed per-graph attention inputs.
#[derive(Clone, Copy, Debug)]
pub struct Memory {
    pub nodes: Var,
    keys: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub logits: Var,
    pub weights: Var,
    pub state: DecoderState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, without the terminating EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub terminated: bool,
}

impl Hypothesis {
    /// `log_prob / len^alpha`, counting EOS when present.
    pub fn score(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            return self.log_prob;
        }
        let len = (self.tokens.len() + usize::from(self.terminated)).max(1) as f64;
        self.log_prob / len.powf(alpha)
    }
}

/// Dropout applied to the pre-output vector during training.
pub struct Dropout<'r, R: Rng> {
    pub rate: f64,
    pub rng: &'r mut R,
}

#[derive(Clone, Debug)]
pub struct AttentionDecoder {
    pub config: DecoderConfig,
    pub embedding: ParamId,
    init: Linear,
    cell: LstmCell,
    query: Linear,
    key: Option<Linear>,
    score: Option<ParamId>,
    output: Linear,
    node_dim: usize,
}

impl AttentionDecoder {
    pub fn new<T: Real>(
        src: &mut ParamSource<'_, T>,
        config: DecoderConfig,
        vocab_size: usize,
        word_dim: usize,
        node_dim: usize,
    ) -> Result<Self> {
        if config.beam_size == 0 || config.max_decode_len == 0 || config.hidden_size == 0 {
            return Err(Error::Config(
                "beam_size, max_decode_len and hidden_size must be at least 1".into(),
            ));
        }
        let h = config.hidden_size;
        let embedding = src.weight("decoder.embedding", vec![vocab_size, word_dim])?;
        let init = Linear::new(src, "decoder.init", node_dim, h)?;
        let cell = LstmCell::new(src, "decoder.cell", word_dim + node_dim, h)?;
        let (query, key, score) = match config.attention {
            AttentionKind::Additive => (
                Linear::new(src, "decoder.attn.query", h, h)?,
                Some(Linear::new(src, "decoder.attn.key", node_dim, h)?),
                Some(src.weight("decoder.attn.score", vec![h, 1])?),
            ),
            AttentionKind::Dot => (Linear::new(src, "decoder.attn.query", h, node_dim)?, None, None),
        };
        let output = Linear::new(src, "decoder.output", h + node_dim, vocab_size)?;
        Ok(Self {
            config,
            embedding,
            init,
            cell,
            query,
            key,
            score,
            output,
            node_dim,
        })
    }

    pub fn memory<T: Real>(&self, tape: &mut Tape<'_, T>, nodes: Var) -> Result<Memory> {
        let keys = match &self.key {
            Some(k) => Some(k.forward(tape, nodes)?),
            None => None,
        };
        Ok(Memory { nodes, keys })
    }

    pub fn init_state<T: Real>(&self, tape: &mut Tape<'_, T>, graph_emb: Var) -> Result<DecoderState> {
        let dim = tape.value(graph_emb).len();
        if dim != self.node_dim {
            return Err(Error::Invalid(format!(
                "graph embedding has {dim} entries, decoder expects {}",
                self.node_dim
            )));
        }
        let z = self.init.forward(tape, graph_emb)?;
        let hidden = tape.tanh(z);
        let cell = tape.constant(Tensor::zeros(vec![1, self.config.hidden_size]));
        let context = tape.constant(Tensor::zeros(vec![1, self.node_dim]));
        Ok(DecoderState {
            hidden,
            cell,
            context,
            prev_token: BOS,
        })
    }

    /// Returns `(context 1 × 2d, weights 1 × |V|)`.
    pub fn attention<T: Real>(&self, tape: &mut Tape<'_, T>, hidden: Var, memory: &Memory) -> Result<(Var, Var)> {
        let q = self.query.forward(tape, hidden)?;
        let scores = match (memory.keys, self.score) {
            (Some(keys), Some(w)) => {
                let summed = tape.add_bias(keys, q)?;
                let act = tape.tanh(summed);
                let w = tape.param(w);
                let col = tape.matmul(act, w)?;
                tape.transpose(col)?
            }
            _ => {
                let nt = tape.transpose(memory.nodes)?;
                tape.matmul(q, nt)?
            }
        };
        let weights = tape.softmax_rows(scores)?;
        let context = tape.matmul(weights, memory.nodes)?;
        Ok((context, weights))
    }

    pub fn step<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<'_, T>,
        state: &DecoderState,
        memory: &Memory,
        dropout: Option<&mut Dropout<'_, R>>,
    ) -> Result<Step> {
        let table = tape.param(self.embedding);
        let emb = tape.gather_rows(table, &[state.prev_token])?;
        let x = tape.concat_cols(&[emb, state.context])?;
        let (hidden, cell) = self.cell.step(tape, x, state.hidden, state.cell)?;
        let (context, weights) = self.attention(tape, hidden, memory)?;
        let mut pre = tape.concat_cols(&[hidden, context])?;
        if let Some(d) = dropout {
            if d.rate > 0.0 {
                let n = tape.value(pre).len();
                let keep = 1.0 - d.rate;
                let scale = T::lit(1.0 / keep);
                let mask: Vec<T> = (0..n)
                    .map(|_| if d.rng.gen::<f64>() < keep { scale } else { T::zero() })
                    .collect();
                let mask = tape.constant(Tensor::matrix(1, n, mask)?);
                pre = tape.mul(pre, mask)?;
            }
        }
        let logits = self.output.forward(tape, pre)?;
        Ok(Step {
            logits,
            weights,
            state: DecoderState {
                hidden,
                cell,
                context,
                prev_token: state.prev_token,
            },
        })
    }

    /// Teacher-forced `−Σ_t log p(y_t | y_<t, x)`. `target` must end with EOS.
    /// Returns the summed negative log-likelihood and the token count.
    pub fn sequence_loss<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<'_, T>,
        encoded: &EncodedGraph,
        target: &[usize],
        mut dropout: Option<&mut Dropout<'_, R>>,
    ) -> Result<(Var, usize)> {
        if target.is_empty() {
            return Err(Error::Empty("target sequence"));
        }
        if target.last() != Some(&EOS) {
            return Err(Error::Invalid("target sequence must end with EOS".into()));
        }
        let memory = self.memory(tape, encoded.nodes)?;
        let mut state = self.init_state(tape, encoded.graph)?;
        let mut logits = Vec::with_capacity(target.len());
        for &y in target {
            let step = self.step(tape, &state, &memory, dropout.as_deref_mut())?;
            logits.push(step.logits);
            state = DecoderState {
                prev_token: y,
                ..step.state
            };
        }
        let stacked = tape.concat_rows(&logits)?;
        let logp = tape.log_softmax_rows(stacked)?;
        let cells: Vec<(usize, usize)> = target.iter().copied().enumerate().collect();
        let ll = tape.pick_sum(logp, &cells)?;
        Ok((tape.scale(ll, -T::one()), target.len()))
    }

    fn step_log_probs<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        state: &DecoderState,
        memory: &Memory,
    ) -> Result<(Vec<T>, DecoderState)> {
        let step = self.step::<T, rand_chacha::ChaCha8Rng>(tape, state, memory, None)?;
        let lp = log_softmax_slice(tape.value(step.logits).data());
        Ok((lp, step.state))
    }

    /// Argmax decoding; ties go to the lowest token id.
    pub fn greedy<T: Real>(&self, tape: &mut Tape<'_, T>, encoded: &EncodedGraph, max_len: usize) -> Result<Hypothesis> {
        let memory = self.memory(tape, encoded.nodes)?;
        let mut state = self.init_state(tape, encoded.graph)?;
        let mut hyp = Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            terminated: false,
        };
        for _ in 0..max_len {
            let (lp, next) = self.step_log_probs(tape, &state, &memory)?;
            let best = argmax(&lp);
            hyp.log_prob += lp[best].to_f64().unwrap_or(f64::NEG_INFINITY);
            if best == EOS {
                hyp.terminated = true;
                break;
            }
            hyp.tokens.push(best);
            state = DecoderState {
                prev_token: best,
                ..next
            };
        }
        Ok(hyp)
    }

    /// Beam search keeping the global top `beam_size` hypotheses by
    /// length-normalised log-probability. Terminated hypotheses stay in the
    /// beam unextended; the search stops once all are terminated or after
    /// `max_decode_len` steps.
    pub fn beam_search<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        encoded: &EncodedGraph,
        config: &DecoderConfig,
    ) -> Result<Hypothesis> {
        let width = config.beam_size.max(1);
        let alpha = config.length_norm_alpha;
        let memory = self.memory(tape, encoded.nodes)?;
        let start = self.init_state(tape, encoded.graph)?;
        let mut beam: Vec<(Hypothesis, DecoderState)> = vec![(
            Hypothesis {
                tokens: Vec::new(),
                log_prob: 0.0,
                terminated: false,
            },
            start,
        )];
        for _ in 0..config.max_decode_len {
            if beam.iter().all(|(h, _)| h.terminated) {
                break;
            }
            let mut candidates: Vec<(Hypothesis, DecoderState)> = Vec::new();
            for (hyp, state) in &beam {
                if hyp.terminated {
                    candidates.push((hyp.clone(), *state));
                    continue;
                }
                let (lp, next) = self.step_log_probs(tape, state, &memory)?;
                for tok in top_k(&lp, width) {
                    let mut h = hyp.clone();
                    h.log_prob += lp[tok].to_f64().unwrap_or(f64::NEG_INFINITY);
                    if tok == EOS {
                        h.terminated = true;
                    } else {
                        h.tokens.push(tok);
                    }
                    candidates.push((
                        h,
                        DecoderState {
                            prev_token: tok,
                            ..next
                        },
                    ));
                }
            }
            // stable sort keeps generation order among equal scores
            candidates.sort_by(|a, b| b.0.score(alpha).partial_cmp(&a.0.score(alpha)).unwrap_or(Ordering::Equal));
            candidates.truncate(width);
            beam = candidates;
        }
        let best = beam
            .iter()
            .filter(|(h, _)| h.terminated)
            .map(|(h, _)| h)
            .next()
            .or_else(|| beam.first().map(|(h, _)| h))
            .cloned()
            .expect("beam is never empty");
        Ok(best)
    }
}

fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest entries, descending, ties by lower index.
fn top_k<T: Real>(xs: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].partial_cmp(&xs[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_orders_and_breaks_ties_low() {
        assert_eq!(top_k(&[0.1f64, 0.5, 0.5, 0.2], 3), vec![1, 2, 3]);
        assert_eq!(argmax(&[0.5f64, 0.9, 0.9]), 1);
    }

    #[test]
    fn hypothesis_score_normalisation() {
        let h = Hypothesis {
            tokens: vec![4, 5, 6],
            log_prob: -8.0,
            terminated: true,
        };
        assert_eq!(h.score(0.0), -8.0);
        assert!((h.score(1.0) + 2.0).abs() < 1e-12);
    }
}
