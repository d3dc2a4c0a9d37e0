//! Corpus BLEU-4 and model evaluation reports.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ExamplePair;
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::model::Graph2Seq;
use crate::tensor::Real;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub bleu: f64,
    /// Modified n-gram precisions p1..p4.
    pub precisions: [f64; 4],
    pub matches: [u64; 4],
    pub totals: [u64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and hypothesis n-gram totals for one pair.
fn pair_stats<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> ([u64; 4], [u64; 4]) {
    let mut matches = [0; 4];
    let mut totals = [0; 4];
    for n in 1..=4 {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        totals[n - 1] = h.values().sum();
        matches[n - 1] = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    (matches, totals)
}

fn combine(precisions: &[f64; 4], bp: f64) -> f64 {
    if precisions.iter().any(|&p| p <= 0.0) {
        return 0.0;
    }
    let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
    bp * mean_log.exp()
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Corpus-level BLEU-4 with a single reference per hypothesis. Counts are
/// pooled over the corpus before taking ratios.
pub fn bleu4_corpus<S: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<S>]) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (m, t) = pair_stats(h, r);
        for n in 0..4 {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        hyp_len += h.len();
        ref_len += r.len();
    }
    let precisions = std::array::from_fn(|n| {
        if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        }
    });
    let bp = brevity_penalty(hyp_len, ref_len);
    Ok(BleuScore {
        bleu: combine(&precisions, bp),
        precisions,
        matches,
        totals,
        brevity_penalty: bp,
        hyp_len,
        ref_len,
    })
}

/// Sentence BLEU-4 with add-one smoothing on every precision.
pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    let (m, t) = pair_stats(hyp, reference);
    let precisions = std::array::from_fn(|n| (m[n] as f64 + 1.0) / (t[n] as f64 + 1.0));
    combine(&precisions, brevity_penalty(hyp.len(), reference.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub sql: String,
    pub reference: String,
    pub hypothesis: String,
    pub sentence_bleu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub corpus_bleu4: f64,
    pub corpus_bleu4_x100: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub failures: usize,
    pub examples: Vec<ExampleRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Hex SHA-256 of a value's canonical JSON.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("config serialises");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `f` on a pool of `jobs` threads (at least one).
pub fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Beam-search outputs for every pair, in input order.
pub fn generate_all<T: Real>(
    model: &Graph2Seq<T>,
    pairs: &[ExamplePair],
    beam: &DecoderConfig,
    jobs: usize,
) -> Result<Vec<Result<Vec<String>>>> {
    with_pool(jobs, || {
        pairs
            .par_iter()
            .map(|p| {
                let hyp = model.beam_search(&model.prepare(&p.query), beam)?;
                Ok(model.tgt_vocab.decode(&hyp.tokens))
            })
            .collect()
    })
}

/// Generates for every pair and scores the result. A failed generation is
/// recorded and scored as an empty hypothesis.
pub fn evaluate_model<T: Real>(
    model: &Graph2Seq<T>,
    pairs: &[ExamplePair],
    beam: &DecoderConfig,
    jobs: usize,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let outputs = generate_all(model, pairs, beam, jobs)?;
    let mut hyps = Vec::with_capacity(pairs.len());
    let mut examples = Vec::with_capacity(pairs.len());
    let mut failures = 0;
    for (pair, out) in pairs.iter().zip(outputs) {
        let (hyp, error) = match out {
            Ok(h) => (h, None),
            Err(e) => {
                failures += 1;
                (Vec::new(), Some(e.to_string()))
            }
        };
        examples.push(ExampleRecord {
            sql: pair.sql.clone(),
            reference: pair.target.join(" "),
            hypothesis: hyp.join(" "),
            sentence_bleu: sentence_bleu(&hyp, &pair.target),
            error,
        });
        hyps.push(hyp);
    }
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.target.clone()).collect();
    let score = bleu4_corpus(&hyps, &refs)?;
    let config = serde_json::json!({ "model": model.config, "beam": beam });
    Ok(EvalReport {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config_hash(&config),
        config,
        corpus_bleu4: score.bleu,
        corpus_bleu4_x100: score.bleu * 100.0,
        precisions: score.precisions,
        brevity_penalty: score.brevity_penalty,
        hyp_len: score.hyp_len,
        ref_len: score.ref_len,
        failures,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn perfect_match_is_one() {
        let h = vec![toks("which company where assets more than val_0")];
        let s = bleu4_corpus(&h, &h).unwrap();
        assert_eq!(s.bleu, 1.0);
        assert_eq!(s.brevity_penalty, 1.0);
    }

    #[test]
    fn disjoint_is_zero() {
        let s = bleu4_corpus(&[toks("a b c d")], &[toks("e f g h")]).unwrap();
        assert_eq!(s.precisions[0], 0.0);
        assert_eq!(s.bleu, 0.0);
    }

    #[test]
    fn clipping_and_brevity() {
        // "the the the the" vs "the cat sat on the mat": p1 = 2/4
        let s = bleu4_corpus(&[toks("the the the the")], &[toks("the cat sat on the mat")]).unwrap();
        assert_eq!(s.matches[0], 2);
        assert!((s.brevity_penalty - (1.0f64 - 6.0 / 4.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(bleu4_corpus(&[toks("a")], &[]).is_err());
        assert!(bleu4_corpus::<String>(&[], &[]).is_err());
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let s = bleu4_corpus(&[vec![]], &[toks("a b")]).unwrap();
        assert_eq!(s.bleu, 0.0);
        assert_eq!(sentence_bleu::<String>(&[], &toks("a b")), 0.0);
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = config_hash(&serde_json::json!({"a": 1}));
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(&serde_json::json!({"a": 1})));
    }
}
