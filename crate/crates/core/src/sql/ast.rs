use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Count,
    Max,
    Min,
    Sum,
    Avg,
}

impl Aggregation {
    pub const ALL: [Aggregation; 5] = [
        Aggregation::Count,
        Aggregation::Max,
        Aggregation::Min,
        Aggregation::Sum,
        Aggregation::Avg,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Aggregation::Count => "count",
            Aggregation::Max => "max",
            Aggregation::Min => "min",
            Aggregation::Sum => "sum",
            Aggregation::Avg => "avg",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.keyword().eq_ignore_ascii_case(word))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub const ALL: [Comparator; 6] = [
        Comparator::Eq,
        Comparator::Ne,
        Comparator::Lt,
        Comparator::Gt,
        Comparator::Le,
        Comparator::Ge,
    ];

    /// Canonical token, also used as graph and sequence text.
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Gt => ">",
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Placeholder,
    Literal,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ValueToken {
    pub kind: ValueKind,
    pub text: String,
}

impl ValueToken {
    pub fn placeholder(index: usize) -> Self {
        Self {
            kind: ValueKind::Placeholder,
            text: format!("val_{index}"),
        }
    }

    pub fn literal(text: impl Into<String>) -> Self {
        Self {
            kind: ValueKind::Literal,
            text: text.into(),
        }
    }

    pub fn placeholder_index(&self) -> Option<usize> {
        match self.kind {
            ValueKind::Placeholder => self.text.strip_prefix("val_")?.parse().ok(),
            ValueKind::Literal => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub column: String,
    pub comparator: Comparator,
    pub value: ValueToken,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogicOp {
    And,
    Or,
    Not,
}

impl LogicOp {
    pub fn word(self) -> &'static str {
        match self {
            LogicOp::And => "and",
            LogicOp::Or => "or",
            LogicOp::Not => "not",
        }
    }
}

/// Boolean condition tree. `And`/`Or` hold at least two children and never
/// directly contain a node of their own kind; `Not` holds exactly one.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogicExpr {
    Condition(Condition),
    And(Vec<LogicExpr>),
    Or(Vec<LogicExpr>),
    Not(Box<LogicExpr>),
}

impl LogicExpr {
    pub fn op(&self) -> Option<LogicOp> {
        match self {
            LogicExpr::Condition(_) => None,
            LogicExpr::And(_) => Some(LogicOp::And),
            LogicExpr::Or(_) => Some(LogicOp::Or),
            LogicExpr::Not(_) => Some(LogicOp::Not),
        }
    }

    pub fn children(&self) -> &[LogicExpr] {
        match self {
            LogicExpr::Condition(_) => &[],
            LogicExpr::And(c) | LogicExpr::Or(c) => c,
            LogicExpr::Not(c) => std::slice::from_ref(c.as_ref()),
        }
    }

    /// Leaf conditions in left-to-right order.
    pub fn conditions(&self) -> Vec<&Condition> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a Condition>) {
        match self {
            LogicExpr::Condition(c) => out.push(c),
            other => other.children().iter().for_each(|c| c.collect(out)),
        }
    }

    pub(crate) fn and(children: Vec<LogicExpr>) -> LogicExpr {
        Self::flatten(children, true)
    }

    pub(crate) fn or(children: Vec<LogicExpr>) -> LogicExpr {
        Self::flatten(children, false)
    }

    fn flatten(children: Vec<LogicExpr>, is_and: bool) -> LogicExpr {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match (c, is_and) {
                (LogicExpr::And(inner), true) | (LogicExpr::Or(inner), false) => flat.extend(inner),
                (other, _) => flat.push(other),
            }
        }
        if flat.len() == 1 {
            return flat.pop().expect("one child");
        }
        if is_and {
            LogicExpr::And(flat)
        } else {
            LogicExpr::Or(flat)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SqlQuery {
    pub aggregation: Option<Aggregation>,
    pub select_columns: Vec<String>,
    #[serde(rename = "where")]
    pub where_clause: Option<LogicExpr>,
}

impl SqlQuery {
    pub fn conditions(&self) -> Vec<&Condition> {
        self.where_clause
            .as_ref()
            .map(LogicExpr::conditions)
            .unwrap_or_default()
    }
}

impl fmt::Display for SqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::render(self))
    }
}
