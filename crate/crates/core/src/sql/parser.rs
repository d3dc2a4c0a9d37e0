use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use super::ast::{Aggregation, Comparator, Condition, LogicExpr, SqlQuery, ValueKind, ValueToken};

const UNSUPPORTED: &[&str] = &[
    "from", "join", "inner", "outer", "left", "right", "cross", "on", "order", "group", "by",
    "having", "limit", "offset", "union", "distinct", "as", "insert", "update", "delete", "into",
    "values", "set", "like", "in", "between", "is", "null", "exists",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedToken(String),
    UnexpectedEnd,
    UnknownKeyword(String),
    Unsupported(String),
    EmptySelect,
    UnbalancedParen,
    InvalidCharacter(char),
    UnterminatedString,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnexpectedToken(t) => write!(f, "unexpected token {t:?}"),
            ParseErrorKind::UnexpectedEnd => f.write_str("unexpected end of input"),
            ParseErrorKind::UnknownKeyword(k) => write!(f, "unknown keyword {k:?}"),
            ParseErrorKind::Unsupported(k) => write!(f, "unsupported syntax {k:?}"),
            ParseErrorKind::EmptySelect => f.write_str("empty SELECT list"),
            ParseErrorKind::UnbalancedParen => f.write_str("unbalanced parentheses"),
            ParseErrorKind::InvalidCharacter(c) => write!(f, "invalid character {c:?}"),
            ParseErrorKind::UnterminatedString => f.write_str("unterminated quoted string"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {kind}; expected one of [{}]", expected.join(", "))]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
    pub expected: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Replace distinct literal values with `val_k` placeholders.
    pub anonymize: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Str(String),
    Cmp(Comparator),
    Comma,
    LParen,
    RParen,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => w.clone(),
            Tok::Quoted(q) => format!("\"{q}\""),
            Tok::Str(s) => format!("'{s}'"),
            Tok::Cmp(c) => c.symbol().to_string(),
            Tok::Comma => ",".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '.'
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let mut out = Vec::new();
    let mut it = src.char_indices().peekable();
    let err = |offset, kind| ParseError {
        offset,
        kind,
        expected: vec![],
    };
    while let Some(&(i, c)) = it.peek() {
        if c.is_whitespace() {
            it.next();
            continue;
        }
        match c {
            ',' | '(' | ')' => {
                it.next();
                out.push((
                    i,
                    match c {
                        ',' => Tok::Comma,
                        '(' => Tok::LParen,
                        _ => Tok::RParen,
                    },
                ));
            }
            '=' => {
                it.next();
                out.push((i, Tok::Cmp(Comparator::Eq)));
            }
            '!' => {
                it.next();
                match it.next() {
                    Some((_, '=')) => out.push((i, Tok::Cmp(Comparator::Ne))),
                    _ => return Err(err(i, ParseErrorKind::InvalidCharacter('!'))),
                }
            }
            '<' | '>' => {
                it.next();
                let next = it.peek().map(|&(_, n)| n);
                let cmp = match (c, next) {
                    ('<', Some('=')) => Some(Comparator::Le),
                    ('<', Some('>')) => Some(Comparator::Ne),
                    ('>', Some('=')) => Some(Comparator::Ge),
                    _ => None,
                };
                match cmp {
                    Some(cmp) => {
                        it.next();
                        out.push((i, Tok::Cmp(cmp)));
                    }
                    None if c == '<' => out.push((i, Tok::Cmp(Comparator::Lt))),
                    None => out.push((i, Tok::Cmp(Comparator::Gt))),
                }
            }
            '"' | '\'' => {
                it.next();
                let mut text = String::new();
                let mut closed = false;
                while let Some((_, d)) = it.next() {
                    if d == c {
                        // doubled quote escapes itself
                        if it.peek().map(|&(_, n)| n) == Some(c) {
                            it.next();
                            text.push(c);
                            continue;
                        }
                        closed = true;
                        break;
                    }
                    text.push(d);
                }
                if !closed {
                    return Err(err(i, ParseErrorKind::UnterminatedString));
                }
                out.push((i, if c == '"' { Tok::Quoted(text) } else { Tok::Str(text) }));
            }
            '-' => {
                it.next();
                let mut text = String::from("-");
                while let Some(&(_, d)) = it.peek() {
                    if is_word_char(d) {
                        text.push(d);
                        it.next();
                    } else {
                        break;
                    }
                }
                if !text[1..].starts_with(|d: char| d.is_ascii_digit()) {
                    return Err(err(i, ParseErrorKind::InvalidCharacter('-')));
                }
                out.push((i, Tok::Word(text)));
            }
            c if is_word_char(c) => {
                let mut text = String::new();
                while let Some(&(_, d)) = it.peek() {
                    if is_word_char(d) {
                        text.push(d);
                        it.next();
                    } else {
                        break;
                    }
                }
                out.push((i, Tok::Word(text)));
            }
            other => return Err(err(i, ParseErrorKind::InvalidCharacter(other))),
        }
    }
    Ok(out)
}

/// `val0`, `val_0`, `VAL_12` → `val_0` … ; anything else is not a placeholder.
pub(crate) fn normalize_placeholder(word: &str) -> Option<String> {
    let lower = word.to_ascii_lowercase();
    let digits = lower.strip_prefix("val")?;
    let digits = digits.strip_prefix('_').unwrap_or(digits);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n: usize = digits.parse().ok()?;
    Some(format!("val_{n}"))
}

fn is_reserved(word: &str) -> bool {
    let lower = word.to_ascii_lowercase();
    matches!(lower.as_str(), "select" | "where" | "and" | "or" | "not")
        || UNSUPPORTED.contains(&lower.as_str())
}

/// True when only keywords (or the end of input) may follow.
fn keyword_slot(expected: &[&str]) -> bool {
    !expected.is_empty()
        && expected
            .iter()
            .all(|e| *e == "<end>" || e.chars().all(|c| c.is_ascii_uppercase()))
}

struct Parser<'s> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    depth: usize,
    _src: &'s str,
}

impl<'s> Parser<'s> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        let kind = match self.peek() {
            None => ParseErrorKind::UnexpectedEnd,
            Some(Tok::RParen) if self.depth == 0 => ParseErrorKind::UnbalancedParen,
            Some(Tok::Word(w)) if UNSUPPORTED.contains(&w.to_ascii_lowercase().as_str()) => {
                ParseErrorKind::Unsupported(w.to_ascii_uppercase())
            }
            Some(Tok::Word(w)) if keyword_slot(expected) => {
                ParseErrorKind::UnknownKeyword(w.clone())
            }
            Some(t) => ParseErrorKind::UnexpectedToken(t.describe()),
        };
        Err(ParseError {
            offset: self.offset(),
            kind,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek().is_some_and(|t| t.is_kw(kw)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn column(&mut self) -> Option<String> {
        match self.peek()? {
            Tok::Quoted(q) if !q.trim().is_empty() => {
                let q = q.trim().to_string();
                self.pos += 1;
                Some(q)
            }
            Tok::Word(w) if !is_reserved(w) => {
                let w = w.clone();
                self.pos += 1;
                Some(w)
            }
            _ => None,
        }
    }

    fn query(&mut self) -> Result<SqlQuery, ParseError> {
        if !self.eat_kw("select") {
            return self.fail(&["SELECT"]);
        }
        let aggregation = self.aggregation();
        let mut select_columns = Vec::new();
        let parens = aggregation.is_some() && self.eat(&Tok::LParen);
        match self.column() {
            Some(c) => select_columns.push(c),
            None => {
                let at_clause_end = self.peek().is_none()
                    || self.peek().is_some_and(|t| t.is_kw("where"));
                if at_clause_end {
                    return Err(ParseError {
                        offset: self.offset(),
                        kind: ParseErrorKind::EmptySelect,
                        expected: vec!["<column>".into()],
                    });
                }
                return self.fail(&["<column>"]);
            }
        }
        while self.eat(&Tok::Comma) {
            match self.column() {
                Some(c) => select_columns.push(c),
                None => return self.fail(&["<column>"]),
            }
        }
        if parens && !self.eat(&Tok::RParen) {
            return Err(ParseError {
                offset: self.offset(),
                kind: ParseErrorKind::UnbalancedParen,
                expected: vec![")".into(), ",".into()],
            });
        }
        let where_clause = if self.eat_kw("where") {
            Some(self.or_expr()?)
        } else {
            None
        };
        if self.peek().is_some() {
            let expected: &[&str] = if where_clause.is_some() {
                &["AND", "OR", "<end>"]
            } else {
                &["WHERE", "<end>"]
            };
            return self.fail(expected);
        }
        Ok(SqlQuery {
            aggregation,
            select_columns,
            where_clause,
        })
    }

    /// An aggregation keyword counts only when a column follows it, so a
    /// column literally named `count` still parses.
    fn aggregation(&mut self) -> Option<Aggregation> {
        let Some(Tok::Word(w)) = self.peek() else {
            return None;
        };
        let agg = Aggregation::from_keyword(w)?;
        let next = self.toks.get(self.pos + 1).map(|(_, t)| t);
        let followed = match next {
            Some(Tok::LParen) | Some(Tok::Quoted(_)) => true,
            Some(Tok::Word(n)) => !is_reserved(n),
            _ => false,
        };
        if followed {
            self.pos += 1;
            Some(agg)
        } else {
            None
        }
    }

    fn or_expr(&mut self) -> Result<LogicExpr, ParseError> {
        let mut items = vec![self.and_expr()?];
        while self.eat_kw("or") {
            items.push(self.and_expr()?);
        }
        Ok(LogicExpr::or(items))
    }

    fn and_expr(&mut self) -> Result<LogicExpr, ParseError> {
        let mut items = vec![self.not_expr()?];
        while self.eat_kw("and") {
            items.push(self.not_expr()?);
        }
        Ok(LogicExpr::and(items))
    }

    fn not_expr(&mut self) -> Result<LogicExpr, ParseError> {
        if self.eat_kw("not") {
            return Ok(LogicExpr::Not(Box::new(self.not_expr()?)));
        }
        if self.eat(&Tok::LParen) {
            self.depth += 1;
            let inner = self.or_expr()?;
            if !self.eat(&Tok::RParen) {
                return Err(ParseError {
                    offset: self.offset(),
                    kind: ParseErrorKind::UnbalancedParen,
                    expected: vec![")".into(), "AND".into(), "OR".into()],
                });
            }
            self.depth -= 1;
            return Ok(inner);
        }
        self.condition().map(LogicExpr::Condition)
    }

    fn condition(&mut self) -> Result<Condition, ParseError> {
        let Some(column) = self.column() else {
            return self.fail(&["<column>", "NOT", "("]);
        };
        let comparator = match self.peek() {
            Some(Tok::Cmp(c)) => *c,
            _ => return self.fail(&["=", "!=", "<>", "<", ">", "<=", ">="]),
        };
        self.pos += 1;
        let value = match self.peek() {
            Some(Tok::Word(w)) if !is_reserved(w) => {
                let v = match normalize_placeholder(w) {
                    Some(p) => ValueToken {
                        kind: ValueKind::Placeholder,
                        text: p,
                    },
                    None => ValueToken::literal(w.clone()),
                };
                self.pos += 1;
                v
            }
            Some(Tok::Str(s)) | Some(Tok::Quoted(s)) => {
                let v = ValueToken::literal(s.clone());
                self.pos += 1;
                v
            }
            _ => return self.fail(&["<value>"]),
        };
        Ok(Condition {
            column,
            comparator,
            value,
        })
    }
}

pub fn parse(sql: &str) -> Result<SqlQuery, ParseError> {
    parse_with(sql, ParseOptions::default())
}

pub fn parse_with(sql: &str, opts: ParseOptions) -> Result<SqlQuery, ParseError> {
    let toks = lex(sql)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: sql.len(),
        depth: 0,
        _src: sql,
    };
    let mut q = p.query()?;
    if opts.anonymize {
        anonymize(&mut q);
    }
    Ok(q)
}

/// Maps each distinct literal to a placeholder in first-occurrence order,
/// skipping indices already taken by explicit placeholders.
pub fn anonymize(query: &mut SqlQuery) {
    let taken: Vec<usize> = query
        .conditions()
        .iter()
        .filter_map(|c| c.value.placeholder_index())
        .collect();
    let mut next = 0;
    let mut assigned: HashMap<String, usize> = HashMap::new();
    if let Some(expr) = query.where_clause.as_mut() {
        visit_values(expr, &mut |v: &mut ValueToken| {
            if v.kind != ValueKind::Literal {
                return;
            }
            let idx = *assigned.entry(v.text.clone()).or_insert_with(|| {
                while taken.contains(&next) {
                    next += 1;
                }
                next += 1;
                next - 1
            });
            *v = ValueToken::placeholder(idx);
        });
    }
}

fn visit_values(expr: &mut LogicExpr, f: &mut impl FnMut(&mut ValueToken)) {
    match expr {
        LogicExpr::Condition(c) => f(&mut c.value),
        LogicExpr::And(cs) | LogicExpr::Or(cs) => cs.iter_mut().for_each(|c| visit_values(c, f)),
        LogicExpr::Not(c) => visit_values(c, f),
    }
}

fn render_column(name: &str) -> String {
    let bare = !name.is_empty()
        && name.chars().all(is_word_char)
        && !is_reserved(name)
        && Aggregation::from_keyword(name).is_none()
        && !name.starts_with('-');
    if bare {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

fn render_value(v: &ValueToken) -> String {
    match v.kind {
        ValueKind::Placeholder => v.text.clone(),
        ValueKind::Literal => {
            let bare_word = !v.text.is_empty()
                && v.text.chars().all(is_word_char)
                && !is_reserved(&v.text)
                && normalize_placeholder(&v.text).is_none();
            let number = v.text.starts_with('-')
                && v.text[1..].starts_with(|c: char| c.is_ascii_digit())
                && v.text[1..].chars().all(is_word_char);
            if bare_word || number {
                v.text.clone()
            } else {
                format!("'{}'", v.text.replace('\'', "''"))
            }
        }
    }
}

fn render_expr(e: &LogicExpr, out: &mut String) {
    match e {
        LogicExpr::Condition(c) => {
            out.push_str(&render_column(&c.column));
            out.push(' ');
            out.push_str(c.comparator.symbol());
            out.push(' ');
            out.push_str(&render_value(&c.value));
        }
        LogicExpr::And(cs) | LogicExpr::Or(cs) => {
            let sep = if matches!(e, LogicExpr::And(_)) { " AND " } else { " OR " };
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                let wrap = matches!(c, LogicExpr::And(_) | LogicExpr::Or(_));
                if wrap {
                    out.push('(');
                }
                render_expr(c, out);
                if wrap {
                    out.push(')');
                }
            }
        }
        LogicExpr::Not(c) => {
            out.push_str("NOT (");
            render_expr(c, out);
            out.push(')');
        }
    }
}

/// Canonical text that parses back to an equal AST.
pub fn render(q: &SqlQuery) -> String {
    let mut out = String::from("SELECT ");
    if let Some(a) = q.aggregation {
        out.push_str(&a.keyword().to_ascii_uppercase());
        out.push(' ');
    }
    let cols: Vec<String> = q.select_columns.iter().map(|c| render_column(c)).collect();
    out.push_str(&cols.join(", "));
    if let Some(w) = &q.where_clause {
        out.push_str(" WHERE ");
        render_expr(w, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str =
        "SELECT company WHERE assets > val0 AND sales > val0 AND industry <= val1 AND profits = val2";

    #[test]
    fn parses_reference_query() {
        let q = parse(FIG1).unwrap();
        assert_eq!(q.aggregation, None);
        assert_eq!(q.select_columns, vec!["company"]);
        let LogicExpr::And(children) = q.where_clause.as_ref().unwrap() else {
            panic!("expected AND");
        };
        assert_eq!(children.len(), 4);
        let conds = q.conditions();
        assert_eq!(conds[0].column, "assets");
        assert_eq!(conds[0].comparator, Comparator::Gt);
        assert_eq!(conds[0].value, ValueToken::placeholder(0));
        assert_eq!(conds[2].comparator, Comparator::Le);
        assert_eq!(conds[3].value, ValueToken::placeholder(2));
    }

    #[test]
    fn parses_count_query() {
        let q = parse("SELECT COUNT Player WHERE starter = val0 AND touchdowns = val1 AND position = val2")
            .unwrap();
        assert_eq!(q.aggregation, Some(Aggregation::Count));
        assert_eq!(q.select_columns, vec!["Player"]);
        assert_eq!(q.conditions().len(), 3);
        assert!(matches!(q.where_clause, Some(LogicExpr::And(_))));
    }

    #[test]
    fn minimal_and_keyword_case() {
        let q = parse("select name").unwrap();
        assert_eq!(q.select_columns, vec!["name"]);
        assert!(q.where_clause.is_none());
        let q = parse("SeLeCt cOuNt(x) wHeRe y = 3").unwrap();
        assert_eq!(q.aggregation, Some(Aggregation::Count));
    }

    #[test]
    fn column_named_like_aggregate() {
        let q = parse("SELECT count WHERE a = 1").unwrap();
        assert_eq!(q.aggregation, None);
        assert_eq!(q.select_columns, vec!["count"]);
    }

    #[test]
    fn empty_select_rejected() {
        let e = parse("SELECT WHERE a = 1").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::EmptySelect);
        assert_eq!(e.offset, 7);
        assert_eq!(parse("SELECT").unwrap_err().kind, ParseErrorKind::EmptySelect);
    }

    #[test]
    fn error_cases() {
        let e = parse("SELECT a WHERE b >").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnexpectedEnd);
        assert!(e.expected.contains(&"<value>".to_string()));

        let e = parse("SELECT a WHERE (b = 1").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnbalancedParen);

        let e = parse("SELECT a WHERE b = 1)").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnbalancedParen);

        let e = parse("SELECT a FROM t JOIN u").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Unsupported("FROM".into()));

        let e = parse("SELECT a WHERE b = 1 ORDER BY c").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Unsupported("ORDER".into()));

        let e = parse("SELECT a FOO b").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownKeyword("FOO".into()));
        assert_eq!(e.offset, 9);

        let e = parse("SELECT a WHERE b ~ 1").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::InvalidCharacter('~'));
    }

    #[test]
    fn comparator_surface_forms() {
        for (text, cmp) in [
            ("=", Comparator::Eq),
            ("!=", Comparator::Ne),
            ("<>", Comparator::Ne),
            ("<", Comparator::Lt),
            (">", Comparator::Gt),
            ("<=", Comparator::Le),
            (">=", Comparator::Ge),
        ] {
            let q = parse(&format!("SELECT a WHERE b {text} 1")).unwrap();
            assert_eq!(q.conditions()[0].comparator, cmp);
        }
        assert!(parse("SELECT a WHERE b equals 1").is_err());
    }

    #[test]
    fn quoted_columns_and_literals() {
        let q = parse("SELECT \"home team\" WHERE \"away team\" = 'St Kilda'").unwrap();
        assert_eq!(q.select_columns, vec!["home team"]);
        let c = q.conditions()[0];
        assert_eq!(c.column, "away team");
        assert_eq!(c.value, ValueToken::literal("St Kilda"));
    }

    #[test]
    fn precedence_and_flattening() {
        let q = parse("SELECT a WHERE b = 1 OR c = 2 AND d = 3").unwrap();
        let LogicExpr::Or(items) = q.where_clause.unwrap() else { panic!() };
        assert!(matches!(items[1], LogicExpr::And(_)));

        let q = parse("SELECT a WHERE (b = 1 AND c = 2) AND d = 3").unwrap();
        let LogicExpr::And(items) = q.where_clause.unwrap() else { panic!() };
        assert_eq!(items.len(), 3);

        let q = parse("SELECT a WHERE NOT b = 1 AND c = 2").unwrap();
        let LogicExpr::And(items) = q.where_clause.unwrap() else { panic!() };
        assert!(matches!(items[0], LogicExpr::Not(_)));
    }

    #[test]
    fn anonymization() {
        let opts = ParseOptions { anonymize: true };
        let q = parse_with("SELECT a WHERE b = 10 AND c > 'x' AND d < 10 AND e = val_0", opts).unwrap();
        let vals: Vec<_> = q.conditions().iter().map(|c| c.value.text.clone()).collect();
        assert_eq!(vals, vec!["val_1", "val_2", "val_1", "val_0"]);
        assert_eq!(q, parse_with("SELECT a WHERE b = 10 AND c > 'x' AND d < 10 AND e = val_0", opts).unwrap());
        let q = parse("SELECT a WHERE b = VAL3").unwrap();
        assert_eq!(q.conditions()[0].value, ValueToken::placeholder(3));
    }

    #[test]
    fn render_examples() {
        let q = parse(FIG1).unwrap();
        assert_eq!(parse(&render(&q)).unwrap(), q);
        let q = parse("SELECT count(player) WHERE x = 1").unwrap();
        assert!(render(&q).starts_with("SELECT COUNT player"));
        let q = parse("select a where not (b = 1 or c = 'it''s')").unwrap();
        let text = render(&q);
        assert!(text.contains("NOT ("), "{text}");
        assert_eq!(parse(&text).unwrap(), q);
    }
}
