//! Dataset ingestion, vocabulary construction and pretrained vectors.
//!
//! Datasets are JSON Lines files with one `{"sql": "...", "text": "..."}`
//! object per line. Blank lines are ignored.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::repr::{build_graph, template_interpret};
use crate::sql::{parse, Aggregation, Comparator, SqlQuery};
use crate::tensor::{Real, Tensor};
use crate::vocab::{is_placeholder, Vocabulary, SPECIALS, SUPER_TOKEN};

#[derive(Clone, Debug, PartialEq)]
pub struct ExamplePair {
    pub sql: String,
    pub query: SqlQuery,
    pub target: Vec<String>,
}

impl ExamplePair {
    pub fn new(sql: &str, text: &str) -> Result<Self> {
        let query = parse(sql)?;
        let target = tokenize(text);
        if target.is_empty() {
            return Err(Error::Empty("target text"));
        }
        Ok(Self {
            sql: sql.to_string(),
            query,
            target,
        })
    }
}

/// Lowercase, whitespace-separated tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub pairs: Vec<ExamplePair>,
    /// `(line number, reason)` for queries outside the supported dialect.
    pub skipped: Vec<(usize, String)>,
}

#[derive(Deserialize)]
struct Line {
    sql: String,
    text: String,
}

pub fn ingest_dataset(path: &Path) -> Result<IngestReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = IngestReport::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let data_err = |message: String| Error::Data {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let raw: Line = serde_json::from_str(&line).map_err(|e| data_err(e.to_string()))?;
        let target = tokenize(&raw.text);
        if target.is_empty() {
            return Err(data_err("empty text".into()));
        }
        match parse(&raw.sql) {
            Ok(query) => report.pairs.push(ExamplePair {
                sql: raw.sql,
                query,
                target,
            }),
            Err(e) => report.skipped.push((lineno, e.to_string())),
        }
    }
    Ok(report)
}

/// Source vocabulary over graph node tokens (plus the super-node token) and
/// target vocabulary over interpretation tokens. Placeholders are always kept.
pub fn build_vocab(pairs: &[ExamplePair], min_freq: usize) -> (Vocabulary, Vocabulary) {
    let node_tokens: Vec<String> = pairs
        .iter()
        .flat_map(|p| build_graph(&p.query).nodes().to_vec())
        .flat_map(|n| n.text)
        .collect();
    let mut src = Vocabulary::build(node_tokens.iter().map(String::as_str), min_freq, is_placeholder);
    src.insert(SUPER_TOKEN);
    let tgt = Vocabulary::build(
        pairs.iter().flat_map(|p| p.target.iter().map(String::as_str)),
        min_freq,
        is_placeholder,
    );
    (src, tgt)
}

/// Copies vectors for known tokens into the rows of `table`
/// (`vocab.len() × word_dim`). Returns the fraction of non-special
/// vocabulary tokens found in the file.
pub fn load_pretrained_vectors<T: Real>(path: &Path, vocab: &Vocabulary, table: &mut Tensor<T>) -> Result<f64> {
    let dim = table.cols();
    if table.rows() != vocab.len() {
        return Err(Error::Invalid(format!(
            "embedding table has {} rows for a vocabulary of {}",
            table.rows(),
            vocab.len()
        )));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = vec![false; vocab.len()];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let data_err = |message: String| Error::Data {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|e| data_err(format!("{f:?}: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(data_err(format!(
                "vector has {} dimensions, word_dim is {dim}",
                values.len()
            )));
        }
        if let Some(id) = vocab.get(token) {
            let row = &mut table.data_mut()[id * dim..(id + 1) * dim];
            for (dst, &v) in row.iter_mut().zip(&values) {
                *dst = T::lit(v);
            }
            seen[id] = true;
        }
    }
    let regular = SPECIALS.len()..vocab.len();
    if regular.is_empty() {
        return Ok(0.0);
    }
    let hits = seen[regular.clone()].iter().filter(|&&s| s).count();
    Ok(hits as f64 / regular.len() as f64)
}

const TOY_COLUMNS: [&str; 16] = [
    "name", "age", "team", "position", "score", "city", "country", "year", "rank", "points", "school",
    "salary", "height", "company", "sales", "profits",
];

/// `n` distinct random queries paired with their template interpretation.
pub fn template_corpus(n: usize, seed: u64) -> Vec<ExamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut sql = String::from("SELECT ");
        if rng.gen_bool(0.3) {
            sql.push_str(Aggregation::ALL.choose(&mut rng).expect("non-empty").keyword());
            sql.push(' ');
        }
        sql.push_str(TOY_COLUMNS.choose(&mut rng).expect("non-empty"));
        let conditions = rng.gen_range(0..=3);
        for k in 0..conditions {
            sql.push_str(match k {
                0 => " WHERE ",
                _ if rng.gen_bool(0.2) => " OR ",
                _ => " AND ",
            });
            let col = TOY_COLUMNS.choose(&mut rng).expect("non-empty");
            let cmp = Comparator::ALL.choose(&mut rng).expect("non-empty").symbol();
            let _ = write!(sql, "{col} {cmp} val_{k}");
        }
        if !seen.insert(sql.clone()) {
            continue;
        }
        let query = parse(&sql).expect("generated query parses");
        let target = tokenize(&template_interpret(&query));
        out.push(ExamplePair { sql, query, target });
    }
    out
}
