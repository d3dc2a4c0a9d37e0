use serde::{Deserialize, Serialize};

use super::graph::words;
use crate::sql::{Aggregation, Comparator, Condition, LogicExpr, SqlQuery};

pub const SEP: &str = "<sep>";

fn condition_tokens(c: &Condition, out: &mut Vec<String>) {
    out.extend(words(&c.column));
    out.push(c.comparator.symbol().to_string());
    out.extend(words(&c.value.text));
}

fn linear_expr(e: &LogicExpr, out: &mut Vec<String>) {
    match e {
        LogicExpr::Condition(c) => condition_tokens(c, out),
        LogicExpr::And(cs) => {
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    out.push(SEP.into());
                }
                linear_expr(c, out);
            }
        }
        // Non-conjunctive operators become their own segment ahead of
        // their operands.
        LogicExpr::Or(cs) => {
            out.push("or".into());
            for c in cs {
                out.push(SEP.into());
                linear_expr(c, out);
            }
        }
        LogicExpr::Not(c) => {
            out.push("not".into());
            out.push(SEP.into());
            linear_expr(c, out);
        }
    }
}

/// Flat token sequence for sequence-to-sequence baselines:
/// `select [agg] <sep> columns where cond <sep> cond …`.
pub fn linearize(query: &SqlQuery) -> Vec<String> {
    let mut out = vec!["select".to_string()];
    if let Some(a) = query.aggregation {
        out.push(a.keyword().into());
    }
    out.push(SEP.into());
    for (i, col) in query.select_columns.iter().enumerate() {
        if i > 0 {
            out.push(SEP.into());
        }
        out.extend(words(col));
    }
    if let Some(w) = &query.where_clause {
        out.push("where".into());
        linear_expr(w, &mut out);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    fn leaf(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn find(&self, label: &str) -> Option<&TreeNode> {
        self.children.iter().find(|c| c.label == label)
    }
}

/// Constituent tree: root → {Select List, Where Clause}; Select List holds
/// the selected columns, Where Clause the logical operators, and each
/// operator its conditions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeRepr {
    pub root: TreeNode,
}

fn condition_label(c: &Condition) -> String {
    format!("{} {} {}", c.column, c.comparator.symbol(), c.value.text)
}

fn tree_expr(e: &LogicExpr) -> TreeNode {
    match e {
        LogicExpr::Condition(c) => TreeNode::leaf(condition_label(c)),
        op => TreeNode {
            label: op.op().expect("operator").word().to_uppercase(),
            children: op.children().iter().map(tree_expr).collect(),
        },
    }
}

pub fn tree_repr(query: &SqlQuery) -> TreeRepr {
    let columns = query
        .select_columns
        .iter()
        .map(|c| match query.aggregation {
            Some(a) => TreeNode::leaf(format!("{}({c})", a.keyword())),
            None => TreeNode::leaf(c.clone()),
        })
        .collect();
    let mut children = vec![TreeNode {
        label: "Select List".into(),
        children: columns,
    }];
    if let Some(w) = &query.where_clause {
        children.push(TreeNode {
            label: "Where Clause".into(),
            children: vec![tree_expr(w)],
        });
    }
    TreeRepr {
        root: TreeNode {
            label: "Root".into(),
            children,
        },
    }
}

fn comparator_words(c: Comparator) -> &'static str {
    match c {
        Comparator::Gt => "more than",
        Comparator::Lt => "less than",
        Comparator::Ge => "more than or equal to",
        Comparator::Le => "less than or equal to",
        Comparator::Eq => "equals",
        Comparator::Ne => "not equals",
    }
}

fn template_expr(e: &LogicExpr, out: &mut Vec<String>) {
    match e {
        LogicExpr::Condition(c) => {
            out.extend(words(&c.column));
            out.push(comparator_words(c.comparator).into());
            out.extend(words(&c.value.text));
        }
        LogicExpr::And(cs) | LogicExpr::Or(cs) => {
            let joiner = e.op().expect("operator").word();
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    out.push(joiner.into());
                }
                template_expr(c, out);
            }
        }
        LogicExpr::Not(c) => {
            out.push("not".into());
            template_expr(c, out);
        }
    }
}

/// Rule-based interpretation: each query element is mapped to a fixed phrase
/// (`SELECT` → "which", `>` → "more than", `COUNT` → "how many", …).
pub fn template_interpret(query: &SqlQuery) -> String {
    let mut out: Vec<String> = match query.aggregation {
        Some(Aggregation::Count) => vec!["how many".into()],
        Some(Aggregation::Max) => vec!["which maximum".into()],
        Some(Aggregation::Min) => vec!["which minimum".into()],
        Some(Aggregation::Sum) => vec!["which total".into()],
        Some(Aggregation::Avg) => vec!["which average".into()],
        None => vec!["which".into()],
    };
    for (i, col) in query.select_columns.iter().enumerate() {
        if i > 0 {
            out.push("and".into());
        }
        out.extend(words(col));
    }
    if let Some(w) = &query.where_clause {
        out.push("where".into());
        template_expr(w, &mut out);
    }
    out.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse;

    const FIG1: &str =
        "SELECT company WHERE assets > val0 AND sales > val0 AND industry <= val1 AND profits = val2";

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn linearize_reference() {
        let q = parse(FIG1).unwrap();
        assert_eq!(
            linearize(&q),
            toks(&[
                "select", "<sep>", "company", "where", "assets", ">", "val_0", "<sep>", "sales",
                ">", "val_0", "<sep>", "industry", "<=", "val_1", "<sep>", "profits", "=", "val_2"
            ])
        );
        assert_eq!(linearize(&parse("SELECT name").unwrap()), toks(&["select", "<sep>", "name"]));
        let q = parse("SELECT COUNT player WHERE pos = val_0").unwrap();
        assert_eq!(&linearize(&q)[..3], &toks(&["select", "count", "<sep>"])[..]);
    }

    #[test]
    fn tree_reference() {
        let t = tree_repr(&parse(FIG1).unwrap());
        let select = t.root.find("Select List").unwrap();
        assert_eq!(select.children, vec![TreeNode::leaf("company")]);
        let where_ = t.root.find("Where Clause").unwrap();
        assert_eq!(where_.children.len(), 1);
        assert_eq!(where_.children[0].label, "AND");
        assert_eq!(where_.children[0].children.len(), 4);
        assert_eq!(where_.children[0].children[0].label, "assets > val_0");
    }

    #[test]
    fn tree_without_where() {
        let t = tree_repr(&parse("SELECT name").unwrap());
        assert_eq!(t.root.children.len(), 1);
        assert!(t.root.find("Where Clause").is_none());
    }

    #[test]
    fn tree_keeps_not_chain() {
        let t = tree_repr(&parse("SELECT a WHERE b = 1 AND NOT c = 2").unwrap());
        let and = &t.root.find("Where Clause").unwrap().children[0];
        assert_eq!(and.label, "AND");
        assert_eq!(and.children[1].label, "NOT");
        assert_eq!(and.children[1].children[0].label, "c = 2");
    }

    #[test]
    fn template_examples() {
        assert_eq!(
            template_interpret(&parse(FIG1).unwrap()),
            "which company where assets more than val_0 and sales more than val_0 and industry less than or equal to val_1 and profits equals val_2"
        );
        assert_eq!(template_interpret(&parse("SELECT name").unwrap()), "which name");
        assert_eq!(
            template_interpret(&parse("SELECT COUNT player WHERE pos = val_0").unwrap()),
            "how many player where pos equals val_0"
        );
        assert_eq!(
            template_interpret(&parse("SELECT a WHERE b != 1 OR NOT c >= 2").unwrap()),
            "which a where b not equals 1 or not c more than or equal to 2"
        );
    }
}
