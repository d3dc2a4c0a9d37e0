//! Parser for the restricted query dialect:
//!
//! ```text
//! SELECT [COUNT|MAX|MIN|SUM|AVG] col[, col …] [WHERE cond ((AND|OR) cond)*]
//! ```
//!
//! Conditions may be negated with `NOT` and grouped with parentheses.
//! Multi-word column names are written in double quotes.

mod ast;
mod parser;

pub use ast::{
    Aggregation, Comparator, Condition, LogicExpr, LogicOp, SqlQuery, ValueKind, ValueToken,
};
pub use parser::{anonymize, parse, parse_with, render, ParseError, ParseErrorKind, ParseOptions};
