//! SQL-to-text generation with a graph-to-sequence model.
//!
//! A restricted SQL query is parsed ([`sql`]), turned into a directed graph
//! ([`repr`]), encoded by bidirectional K-hop neighbour aggregation
//! ([`encoder`]) and verbalised by an attention LSTM decoder ([`decoder`]).
//! The whole stack runs on a small reverse-mode tape ([`tensor`]).

pub mod tensor;
pub mod sql;
pub mod repr;
pub mod encoder;
pub mod error;
pub mod nn;
pub mod vocab;
pub mod decoder;
pub mod model;
pub mod data;
pub mod checkpoint;
pub mod eval;
pub mod train;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
