use std::fmt;

use crate::error::ParseError;
use crate::table::format_number;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggFunc {
    fn from_name(name: &str) -> Option<AggFunc> {
        Some(match name.to_ascii_lowercase().as_str() {
            "count" => AggFunc::Count,
            "sum" => AggFunc::Sum,
            "avg" => AggFunc::Avg,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Contains,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Contains => "CONTAINS",
        }
    }

    pub fn is_ordering(self) -> bool {
        matches!(self, CmpOp::Lt | CmpOp::Le | CmpOp::Gt | CmpOp::Ge)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Text(String),
}

impl Literal {
    pub fn text(&self) -> String {
        match self {
            Literal::Number(n) => format_number(*n),
            Literal::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Column(String),
    /// `column: None` is `count(*)`.
    Aggregate {
        func: AggFunc,
        column: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub column: String,
    pub op: CmpOp,
    pub literal: Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderBy {
    pub column: String,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqlQuery {
    pub projection: Projection,
    pub predicates: Vec<Predicate>,
    pub order_by: Option<OrderBy>,
    pub limit: Option<usize>,
}

impl SqlQuery {
    /// Every column name the query references.
    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        match &self.projection {
            Projection::Column(c) => out.push(c.as_str()),
            Projection::Aggregate { column: Some(c), .. } => out.push(c.as_str()),
            Projection::Aggregate { column: None, .. } => {}
        }
        out.extend(self.predicates.iter().map(|p| p.column.as_str()));
        if let Some(o) = &self.order_by {
            out.push(o.column.as_str());
        }
        out
    }
}

const KEYWORDS: &[&str] = &[
    "select", "from", "where", "and", "order", "by", "asc", "desc", "limit", "contains",
];

fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

fn write_column(f: &mut fmt::Formatter<'_>, name: &str) -> fmt::Result {
    let plain = name.split(' ').all(|w| {
        !w.is_empty()
            && !is_keyword(w)
            && w.chars().all(|c| c.is_alphanumeric() || c == '_')
            && !w.starts_with(|c: char| c.is_ascii_digit())
    }) && AggFunc::from_name(name).is_none();
    if plain {
        f.write_str(name)
    } else {
        write!(f, "\"{}\"", name.replace('"', "\"\""))
    }
}

fn write_literal(f: &mut fmt::Formatter<'_>, lit: &Literal) -> fmt::Result {
    match lit {
        Literal::Number(n) => f.write_str(&format_number(*n)),
        Literal::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
    }
}

impl fmt::Display for SqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.projection {
            Projection::Column(c) => write_column(f, c)?,
            Projection::Aggregate { func, column } => {
                write!(f, "{}(", func.name())?;
                match column {
                    Some(c) => write_column(f, c)?,
                    None => f.write_str("*")?,
                }
                f.write_str(")")?;
            }
        }
        for (i, p) in self.predicates.iter().enumerate() {
            f.write_str(if i == 0 { " WHERE " } else { " AND " })?;
            write_column(f, &p.column)?;
            write!(f, " {} ", p.op.symbol())?;
            write_literal(f, &p.literal)?;
        }
        if let Some(o) = &self.order_by {
            f.write_str(" ORDER BY ")?;
            write_column(f, &o.column)?;
            f.write_str(if o.descending { " DESC" } else { " ASC" })?;
        }
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Str(String),
    Num(f64, String),
    Op(CmpOp),
    LParen,
    RParen,
    Star,
    Semi,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("'{w}'"),
            Tok::Quoted(w) => format!("\"{w}\""),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Num(_, raw) => format!("number {raw}"),
            Tok::Op(op) => format!("'{}'", op.symbol()),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Star => "'*'".into(),
            Tok::Semi => "';'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        offset,
        message: message.into(),
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().expect("in bounds");
        let start = i;
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            '*' => {
                i += 1;
                Tok::Star
            }
            ';' => {
                i += 1;
                Tok::Semi
            }
            '=' => {
                i += 1;
                Tok::Op(CmpOp::Eq)
            }
            '≠' | '≤' | '≥' => {
                i += c.len_utf8();
                Tok::Op(match c {
                    '≠' => CmpOp::Ne,
                    '≤' => CmpOp::Le,
                    _ => CmpOp::Ge,
                })
            }
            '!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 2;
                Tok::Op(CmpOp::Ne)
            }
            '<' | '>' => {
                let next = bytes.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('<', Some(b'=')) => (CmpOp::Le, 2),
                    ('<', Some(b'>')) => (CmpOp::Ne, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', Some(b'=')) => (CmpOp::Ge, 2),
                    _ => (CmpOp::Gt, 1),
                };
                i += len;
                Tok::Op(op)
            }
            '\'' | '"' | '`' | '[' => {
                let close = if c == '[' { ']' } else { c };
                i += 1;
                let mut text = String::new();
                loop {
                    let Some(ch) = src[i..].chars().next() else {
                        return Err(syntax(start, "unterminated quote"));
                    };
                    i += ch.len_utf8();
                    if ch == close {
                        if close != ']' && src[i..].starts_with(close) {
                            text.push(close);
                            i += 1;
                            continue;
                        }
                        break;
                    }
                    text.push(ch);
                }
                if c == '\'' {
                    Tok::Str(text)
                } else {
                    Tok::Quoted(text)
                }
            }
            c if c.is_ascii_digit()
                || ((c == '-' || c == '+' || c == '.')
                    && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit() || *b == b'.')) =>
            {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                let raw = &src[i..j];
                let v: f64 = raw
                    .parse()
                    .map_err(|_| syntax(start, format!("bad number '{raw}'")))?;
                i = j;
                Tok::Num(v, raw.to_string())
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut j = i;
                for ch in src[i..].chars() {
                    if ch.is_alphanumeric() || ch == '_' {
                        j += ch.len_utf8();
                    } else {
                        break;
                    }
                }
                let w = src[i..j].to_string();
                i = j;
                if w.eq_ignore_ascii_case("contains") {
                    Tok::Op(CmpOp::Contains)
                } else {
                    Tok::Word(w)
                }
            }
            other => return Err(syntax(start, format!("unexpected character '{other}'"))),
        };
        out.push((start, tok));
    }
    out.push((src.len(), Tok::Eof));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(syntax(
                self.offset(),
                format!("expected {}, found {}", kw.to_uppercase(), self.peek().describe()),
            ))
        }
    }

    /// A quoted identifier, or a run of bare non-keyword words joined by spaces.
    fn column_ref(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Quoted(name) => {
                self.bump();
                Ok(name)
            }
            Tok::Word(w) if !is_keyword(&w) => {
                let mut parts = vec![w];
                self.bump();
                while let Tok::Word(w) = self.peek() {
                    if is_keyword(w) {
                        break;
                    }
                    parts.push(w.clone());
                    self.bump();
                }
                Ok(parts.join(" "))
            }
            other => Err(syntax(
                self.offset(),
                format!("expected column name, found {}", other.describe()),
            )),
        }
    }

    fn projection(&mut self) -> Result<Projection, ParseError> {
        if let (Tok::Word(name), Tok::LParen) = (self.peek().clone(), self.peek_at(1)) {
            let at = self.offset();
            let func = AggFunc::from_name(&name)
                .ok_or(ParseError::UnknownFunction { offset: at, name })?;
            self.bump();
            self.bump();
            let column = if matches!(self.peek(), Tok::Star) {
                if func != AggFunc::Count {
                    return Err(syntax(self.offset(), "'*' is only valid in count(*)"));
                }
                self.bump();
                None
            } else {
                Some(self.column_ref()?)
            };
            if !matches!(self.peek(), Tok::RParen) {
                return Err(syntax(
                    self.offset(),
                    format!("expected ')', found {}", self.peek().describe()),
                ));
            }
            self.bump();
            return Ok(Projection::Aggregate { func, column });
        }
        match self.peek() {
            Tok::Word(w) if !is_keyword(w) => Ok(Projection::Column(self.column_ref()?)),
            Tok::Quoted(_) => Ok(Projection::Column(self.column_ref()?)),
            other => Err(syntax(
                self.offset(),
                format!("expected column or aggregate, found {}", other.describe()),
            )),
        }
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let column = self.column_ref()?;
        let op = match self.bump() {
            Tok::Op(op) => op,
            other => {
                return Err(syntax(
                    self.toks[self.pos - 1].0,
                    format!("expected comparison operator, found {}", other.describe()),
                ))
            }
        };
        let at = self.offset();
        let literal = match self.bump() {
            Tok::Num(v, _) => Literal::Number(v),
            Tok::Str(s) => Literal::Text(s),
            other => {
                return Err(syntax(at, format!("expected literal, found {}", other.describe())))
            }
        };
        Ok(Predicate { column, op, literal })
    }

    fn query(&mut self) -> Result<SqlQuery, ParseError> {
        self.expect_keyword("select")?;
        let projection = self.projection()?;
        if self.at_keyword("from") {
            self.bump();
            match self.bump() {
                Tok::Word(w) if !is_keyword(&w) => {}
                Tok::Quoted(_) => {}
                other => {
                    return Err(syntax(
                        self.toks[self.pos - 1].0,
                        format!("expected table name, found {}", other.describe()),
                    ))
                }
            }
        }
        let mut predicates = Vec::new();
        if self.at_keyword("where") {
            self.bump();
            predicates.push(self.predicate()?);
            while self.at_keyword("and") {
                self.bump();
                predicates.push(self.predicate()?);
            }
        }
        let mut order_by = None;
        if self.at_keyword("order") {
            self.bump();
            self.expect_keyword("by")?;
            let column = self.column_ref()?;
            let descending = if self.at_keyword("desc") {
                self.bump();
                true
            } else {
                if self.at_keyword("asc") {
                    self.bump();
                }
                false
            };
            order_by = Some(OrderBy { column, descending });
        }
        let mut limit = None;
        if self.at_keyword("limit") {
            self.bump();
            let at = self.offset();
            match self.bump() {
                Tok::Num(v, raw) if v >= 1.0 && raw.bytes().all(|b| b.is_ascii_digit()) => {
                    limit = Some(v as usize)
                }
                other => {
                    return Err(syntax(
                        at,
                        format!("LIMIT needs a positive integer, found {}", other.describe()),
                    ))
                }
            }
        }
        if matches!(self.peek(), Tok::Semi) {
            self.bump();
        }
        if !matches!(self.peek(), Tok::Eof) {
            return Err(syntax(
                self.offset(),
                format!("unexpected {}", self.peek().describe()),
            ));
        }
        Ok(SqlQuery {
            projection,
            predicates,
            order_by,
            limit,
        })
    }
}

/// Parses query text. Keywords are case-insensitive; errors carry byte offsets.
pub fn parse_sql(text: &str) -> Result<SqlQuery, ParseError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.query()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_lookup() {
        let q = parse_sql("SELECT city WHERE year = 2004").unwrap();
        assert_eq!(q.projection, Projection::Column("city".into()));
        assert_eq!(
            q.predicates,
            vec![Predicate {
                column: "year".into(),
                op: CmpOp::Eq,
                literal: Literal::Number(2004.0)
            }]
        );
    }

    #[test]
    fn aggregate() {
        let q = parse_sql("SELECT max(year)").unwrap();
        assert_eq!(
            q.projection,
            Projection::Aggregate {
                func: AggFunc::Max,
                column: Some("year".into())
            }
        );
        let q = parse_sql("select COUNT(*) from t where city contains 'ath'").unwrap();
        assert_eq!(q.projection, Projection::Aggregate { func: AggFunc::Count, column: None });
        assert_eq!(q.predicates[0].op, CmpOp::Contains);
    }

    #[test]
    fn select_from_is_error_at_offset_7() {
        let err = parse_sql("SELECT FROM").unwrap_err();
        assert_eq!(err.offset(), 7);
        assert!(matches!(err, ParseError::Syntax { .. }));
    }

    #[test]
    fn unknown_function() {
        let err = parse_sql("SELECT median(year)").unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownFunction {
                offset: 7,
                name: "median".into()
            }
        );
    }

    #[test]
    fn multiword_and_quoted_columns() {
        let q = parse_sql("SELECT home  team WHERE \"gold medals\" >= 3 ORDER BY year DESC LIMIT 2").unwrap();
        assert_eq!(q.projection, Projection::Column("home team".into()));
        assert_eq!(q.predicates[0].column, "gold medals");
        assert_eq!(q.order_by, Some(OrderBy { column: "year".into(), descending: true }));
        assert_eq!(q.limit, Some(2));
    }

    #[test]
    fn operators() {
        for (src, op) in [("<>", CmpOp::Ne), ("!=", CmpOp::Ne), ("≠", CmpOp::Ne), ("<", CmpOp::Lt), ("≤", CmpOp::Le), (">", CmpOp::Gt), (">=", CmpOp::Ge)] {
            let q = parse_sql(&format!("SELECT a WHERE b {src} 1")).unwrap();
            assert_eq!(q.predicates[0].op, op, "{src}");
        }
    }

    #[test]
    fn string_escapes_and_negative_numbers() {
        let q = parse_sql("SELECT a WHERE b = 'o''neil' AND c > -2.5").unwrap();
        assert_eq!(q.predicates[0].literal, Literal::Text("o'neil".into()));
        assert_eq!(q.predicates[1].literal, Literal::Number(-2.5));
    }

    #[test]
    fn malformed() {
        assert!(parse_sql("").is_err());
        assert!(parse_sql("SELECT a WHERE").is_err());
        assert!(parse_sql("SELECT a LIMIT 0").is_err());
        assert!(parse_sql("SELECT a LIMIT 1.5").is_err());
        assert!(parse_sql("SELECT a WHERE b = 'x").is_err());
        assert!(parse_sql("SELECT sum(*)").is_err());
        assert!(parse_sql("SELECT a b = 1").is_err());
    }

    #[test]
    fn display_round_trips() {
        for src in [
            "SELECT city WHERE year = 2004",
            "SELECT count(*) WHERE \"home team\" CONTAINS 'x''y' AND \"select\" <= 3.5",
            "SELECT max(\"2nd\") ORDER BY a DESC LIMIT 3",
        ] {
            let q = parse_sql(src).unwrap();
            assert_eq!(parse_sql(&q.to_string()).unwrap(), q, "{src}");
        }
    }
}
