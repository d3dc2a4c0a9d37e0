//! Run configuration: a flat key table with defaults, optionally read from a
//! TOML file and overridden by `KEY=VALUE` pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::TrainConfig;

pub const CONFIG_ENV: &str = "SQL2TEXT_CONFIG";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" | "32" => Ok(Self::F32),
            "f64" | "64" => Ok(Self::F64),
            other => Err(format!("unknown precision {other:?}, expected f32 or f64")),
        }
    }
}

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

pub const KEYS: &[Key] = &[
    key("lr", "0.001", "Adam learning rate"),
    key("batch_size", "30", "examples per mini-batch"),
    key("dropout", "0.5", "dropout rate on the decoder pre-output vector"),
    key("clip_norm", "20", "global gradient-norm clipping threshold"),
    key("epochs", "20", "maximum training epochs"),
    key("patience", "5", "dev evaluations without improvement before stopping (0 = off)"),
    key("seed", "1", "seed for initialisation, shuffling and dropout"),
    key("min_freq", "1", "minimum token count to enter a vocabulary"),
    key("pretrained_vectors", "", "word-vector text file used to initialise embeddings"),
    key("target_bleu", "", "stop once dev BLEU reaches this value"),
    key("dev_every", "1", "evaluate on the dev set every N epochs"),
    key("jobs", "1", "worker threads for generation"),
    key("word_dim", "300", "word embedding size"),
    key("init_scale", "0.12", "half-width of the uniform parameter initialisation"),
    key("hop_size", "6", "neighbour aggregation hops K"),
    key("hidden_dim", "300", "encoder node embedding size d (outputs are 2d)"),
    key("share_direction_weights", "false", "one W per hop for both directions"),
    key("ge_method", "pooling", "graph embedding: pooling or supernode"),
    key("undirected", "false", "treat query graphs as undirected"),
    key("hidden_size", "300", "decoder LSTM state size"),
    key("attention", "additive", "attention scoring: additive or dot"),
    key("max_decode_len", "60", "maximum generated tokens"),
    key("beam_size", "5", "beam width"),
    key("length_norm_alpha", "0.0", "length normalisation exponent for beam scores"),
    key("precision", "f32", "arithmetic: f32 or f64"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            precision: Precision::F32,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value:?}: {e}")))
}

fn optional<V: FromStr>(key: &str, value: &str) -> Result<Option<V>>
where
    V::Err: std::fmt::Display,
{
    if value.is_empty() {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let m = &mut t.model;
        match key {
            "lr" => t.lr = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "dropout" => m.dropout = parse_value(key, value)?,
            "clip_norm" => t.clip_norm = parse_value(key, value)?,
            "epochs" => t.epochs = parse_value(key, value)?,
            "patience" => t.patience = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "min_freq" => t.min_freq = parse_value(key, value)?,
            "pretrained_vectors" => t.pretrained_vectors = optional::<PathBuf>(key, value)?,
            "target_bleu" => t.target_bleu = optional(key, value)?,
            "dev_every" => t.dev_every = parse_value(key, value)?,
            "jobs" => t.jobs = parse_value(key, value)?,
            "word_dim" => m.word_dim = parse_value(key, value)?,
            "init_scale" => m.init_scale = parse_value(key, value)?,
            "hop_size" => m.encoder.hop_size = parse_value(key, value)?,
            "hidden_dim" => m.encoder.hidden_dim = parse_value(key, value)?,
            "share_direction_weights" => m.encoder.share_direction_weights = parse_value(key, value)?,
            "ge_method" => m.encoder.ge_method = parse_value(key, value)?,
            "undirected" => m.undirected = parse_value(key, value)?,
            "hidden_size" => m.decoder.hidden_size = parse_value(key, value)?,
            "attention" => m.decoder.attention = parse_value(key, value)?,
            "max_decode_len" => m.decoder.max_decode_len = parse_value(key, value)?,
            "beam_size" => m.decoder.beam_size = parse_value(key, value)?,
            "length_norm_alpha" => m.decoder.length_norm_alpha = parse_value(key, value)?,
            "precision" => self.precision = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `KEY=VALUE` string.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    /// Merges a TOML document of top-level `key = value` pairs.
    pub fn merge_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in table {
            let value = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => return Err(Error::Config(format!("{k}: unsupported value {other}"))),
            };
            self.set(&k, &value)?;
        }
        Ok(())
    }

    /// Defaults, then the config file (or `$SQL2TEXT_CONFIG`), then
    /// `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        if let Some(path) = file.map(Path::to_path_buf).or(from_env) {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            cfg.merge_toml(&text)?;
        }
        for o in overrides {
            cfg.apply(o)?;
        }
        Ok(cfg)
    }

    /// Effective value of every key.
    pub fn effective(&self) -> BTreeMap<&'static str, String> {
        let t = &self.train;
        let m = &t.model;
        let opt = |v: Option<String>| v.unwrap_or_default();
        KEYS.iter()
            .map(|k| {
                let v = match k.name {
                    "lr" => t.lr.to_string(),
                    "batch_size" => t.batch_size.to_string(),
                    "dropout" => m.dropout.to_string(),
                    "clip_norm" => t.clip_norm.to_string(),
                    "epochs" => t.epochs.to_string(),
                    "patience" => t.patience.to_string(),
                    "seed" => t.seed.to_string(),
                    "min_freq" => t.min_freq.to_string(),
                    "pretrained_vectors" => opt(t.pretrained_vectors.as_ref().map(|p| p.display().to_string())),
                    "target_bleu" => opt(t.target_bleu.map(|b| b.to_string())),
                    "dev_every" => t.dev_every.to_string(),
                    "jobs" => t.jobs.to_string(),
                    "word_dim" => m.word_dim.to_string(),
                    "init_scale" => m.init_scale.to_string(),
                    "hop_size" => m.encoder.hop_size.to_string(),
                    "hidden_dim" => m.encoder.hidden_dim.to_string(),
                    "share_direction_weights" => m.encoder.share_direction_weights.to_string(),
                    "ge_method" => format!("{:?}", m.encoder.ge_method).to_lowercase(),
                    "undirected" => m.undirected.to_string(),
                    "hidden_size" => m.decoder.hidden_size.to_string(),
                    "attention" => format!("{:?}", m.decoder.attention).to_lowercase(),
                    "max_decode_len" => m.decoder.max_decode_len.to_string(),
                    "beam_size" => m.decoder.beam_size.to_string(),
                    "length_norm_alpha" => m.decoder.length_norm_alpha.to_string(),
                    "precision" => format!("{:?}", self.precision).to_lowercase(),
                    other => unreachable!("key {other} missing from effective()"),
                };
                (k.name, v)
            })
            .collect()
    }
}

/// One line per key with its default, for `--help`.
pub fn keys_help() -> String {
    let mut out = String::from("Configuration keys (set in a TOML file or with --set KEY=VALUE):\n");
    for k in KEYS {
        let default = if k.default.is_empty() { "unset" } else { k.default };
        let _ = writeln!(out, "  {:<24} {} [default: {}]", k.name, k.help, default);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_table_matches_structs() {
        let mut from_table = RunConfig::default();
        for k in KEYS {
            from_table.set(k.name, k.default).unwrap();
        }
        assert_eq!(from_table, RunConfig::default());
    }

    #[test]
    fn effective_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply("ge_method=supernode").unwrap();
        cfg.apply("target_bleu=0.5").unwrap();
        let mut again = RunConfig::default();
        for (k, v) in cfg.effective() {
            again.set(k, &v).unwrap();
        }
        assert_eq!(again, cfg);
    }

    #[test]
    fn toml_then_overrides() {
        let mut cfg = RunConfig::default();
        cfg.merge_toml("lr = 0.01\nhop_size = 2\nundirected = true\n").unwrap();
        cfg.apply("hop_size=3").unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.model.encoder.hop_size, 3);
        assert!(cfg.train.model.undirected);
    }

    #[test]
    fn unknown_and_bad_values_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply("learning_rate=1").is_err());
        assert!(cfg.apply("hop_size=two").is_err());
        assert!(cfg.apply("hop_size").is_err());
        assert!(cfg.merge_toml("bogus = 1").is_err());
    }

    #[test]
    fn help_lists_every_key() {
        let h = keys_help();
        assert!(KEYS.iter().all(|k| h.contains(k.name)));
    }
}
