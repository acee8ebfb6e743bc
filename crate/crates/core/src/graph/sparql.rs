//! Reading and writing the supported SPARQL subset.
//!
//! Supported: `PREFIX` declarations, `SELECT` (optionally `DISTINCT`, `*`)
//! and `ASK` over a basic graph pattern (`.`, `;` and `,` lists, `a` and
//! `rdf:type` as ISA), projected `COUNT/AVG/MAX/MIN` aggregates written
//! either as `(COUNT(?x) AS ?c)` or bare `COUNT(?x)`, and
//! `ORDER BY DESC(?v)|ASC(?v)|?v LIMIT 1 [OFFSET k]`, which becomes a
//! MAXATN/MINATN triple with N = k + 1.
//!
//! Two extensions make every query graph writable: placeholders `%Ent1`,
//! `%Class1`, `%Lit1`, `%Prop1`, and built-in pseudo-predicates in the
//! `qg:` namespace (`qg:count`, `qg:maxAtN`, ...).

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::prefix::{BUILTIN_NS, RDF_TYPE};
use super::{
    BuiltIn, EdgeLabel, GraphError, PrefixTable, QueryForm, QueryGraph, Term, Triple, Vertex,
    VertexId, VertexKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("invalid query graph: {0}")]
    Invalid(String),
}

impl From<GraphError> for ParseError {
    fn from(e: GraphError) -> Self {
        ParseError::Invalid(e.to_string())
    }
}

const UNSUPPORTED: &[&str] = &[
    "FILTER", "UNION", "OPTIONAL", "GROUP", "HAVING", "MINUS", "BIND", "VALUES", "SERVICE",
    "GRAPH", "FROM", "CONSTRUCT", "DESCRIBE", "NOT", "EXISTS", "SUM", "SAMPLE", "GROUP_CONCAT",
];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Punct(char),
    Word(String),
    Var(String),
    Iri(String),
    PName(String),
    Literal(String),
    Slot(String, u32),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax { pos: self.pos, msg: msg.into() }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut out = Vec::new();
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() {
            let c = self.src[self.pos..].chars().next().unwrap();
            let start = self.pos;
            if c.is_whitespace() {
                self.pos += c.len_utf8();
                continue;
            }
            if c == '#' {
                while self.pos < bytes.len() && bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            let tok = match c {
                '{' | '}' | '(' | ')' | '.' | ';' | ',' | '*' => {
                    // A '.' followed by a digit starts a decimal.
                    if c == '.' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit()) {
                        self.number()
                    } else {
                        self.pos += 1;
                        Tok::Punct(c)
                    }
                }
                '?' | '$' => {
                    self.pos += 1;
                    let name = self.take_while(|ch| ch.is_alphanumeric() || ch == '_');
                    if name.is_empty() {
                        return Err(self.err("empty variable name"));
                    }
                    Tok::Var(name)
                }
                '<' if self.peek_at(1).is_some_and(|n| n.is_whitespace() || n == '=') => {
                    self.pos += 1;
                    Tok::Punct('<')
                }
                '>' | '=' | '!' | '&' | '|' | '/' | '^' | '[' | ']' => {
                    self.pos += 1;
                    Tok::Punct(c)
                }
                '<' => {
                    self.pos += 1;
                    let iri = self.take_while(|ch| ch != '>' && !ch.is_whitespace());
                    if !self.src[self.pos..].starts_with('>') {
                        return Err(self.err("unterminated IRI"));
                    }
                    self.pos += 1;
                    Tok::Iri(iri)
                }
                '"' | '\'' => self.string(c)?,
                '%' => {
                    self.pos += 1;
                    let name = self.take_while(|ch| ch.is_alphanumeric());
                    let split = name.find(|ch: char| ch.is_ascii_digit()).unwrap_or(name.len());
                    let (kind, num) = name.split_at(split);
                    let idx: u32 = num.parse().map_err(|_| self.err("placeholder needs an index"))?;
                    if !matches!(kind, "Ent" | "Class" | "Lit" | "Prop") || idx == 0 {
                        return Err(self.err(format!("unknown placeholder %{name}")));
                    }
                    Tok::Slot(kind.to_owned(), idx)
                }
                '+' | '-' => self.number(),
                d if d.is_ascii_digit() => self.number(),
                ':' => {
                    self.pos += 1;
                    let local = self.take_local();
                    Tok::PName(format!(":{local}"))
                }
                a if a.is_alphabetic() || a == '_' => {
                    let word = self.take_while(|ch| ch.is_alphanumeric() || ch == '_' || ch == '-');
                    if self.src[self.pos..].starts_with(':') {
                        self.pos += 1;
                        let local = self.take_local();
                        Tok::PName(format!("{word}:{local}"))
                    } else {
                        Tok::Word(word)
                    }
                }
                other => return Err(self.err(format!("unexpected character {other:?}"))),
            };
            out.push((start, tok));
        }
        Ok(out)
    }

    fn peek_at(&self, off: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(off)
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let rest = &self.src[self.pos..];
        let len = rest.char_indices().find(|&(_, c)| !f(c)).map_or(rest.len(), |(i, _)| i);
        self.pos += len;
        rest[..len].to_owned()
    }

    /// Local part of a prefixed name. A trailing '.' ends the triple, not the name.
    fn take_local(&mut self) -> String {
        let mut s = self.take_while(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '%'));
        while s.ends_with('.') {
            s.pop();
            self.pos -= 1;
        }
        s
    }

    fn number(&mut self) -> Tok {
        let mut s = String::new();
        if let Some(sign @ ('+' | '-')) = self.peek_at(0) {
            s.push(sign);
            self.pos += 1;
        }
        s.push_str(&self.take_while(|c| c.is_ascii_digit()));
        if self.peek_at(0) == Some('.') && self.peek_at(1).is_some_and(|d| d.is_ascii_digit()) {
            self.pos += 1;
            s.push('.');
            s.push_str(&self.take_while(|c| c.is_ascii_digit()));
        }
        if matches!(self.peek_at(0), Some('e' | 'E')) {
            self.pos += 1;
            s.push('e');
            if let Some(sign @ ('+' | '-')) = self.peek_at(0) {
                s.push(sign);
                self.pos += 1;
            }
            s.push_str(&self.take_while(|c| c.is_ascii_digit()));
        }
        Tok::Literal(s)
    }

    fn string(&mut self, quote: char) -> Result<Tok, ParseError> {
        self.pos += 1;
        let mut value = String::new();
        loop {
            let Some(c) = self.src[self.pos..].chars().next() else {
                return Err(self.err("unterminated string"));
            };
            self.pos += c.len_utf8();
            match c {
                '\\' => {
                    let Some(e) = self.src[self.pos..].chars().next() else {
                        return Err(self.err("dangling escape"));
                    };
                    self.pos += e.len_utf8();
                    value.push(match e {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        other => other,
                    });
                }
                c if c == quote => break,
                c => value.push(c),
            }
        }
        // Datatype and language tags are accepted and dropped.
        if self.src[self.pos..].starts_with("^^") {
            self.pos += 2;
            if self.src[self.pos..].starts_with('<') {
                self.take_while(|c| c != '>');
                self.pos += 1;
            } else {
                self.take_while(|c| c.is_alphanumeric() || matches!(c, ':' | '_' | '-'));
            }
        } else if self.src[self.pos..].starts_with('@') {
            self.pos += 1;
            self.take_while(|c| c.is_alphanumeric() || c == '-');
        }
        Ok(Tok::Literal(value))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum NodeKey {
    Var(String),
    Iri(String),
    Lit(String),
    Slot(VertexKind, u32),
    /// Fresh literal holding the N of an ORDER BY clause.
    Rank(usize),
    /// The N of a `qg:maxAtN`/`qg:minAtN` triple; never shared with another triple.
    OrderLit(usize, String),
}

struct Parser<'t> {
    toks: &'t [(usize, Tok)],
    i: usize,
    prefixes: PrefixTable,
    src_len: usize,
}

struct Projection {
    var: String,
    aggregate: Option<(BuiltIn, String)>,
}

impl Parser<'_> {
    fn pos(&self) -> usize {
        self.toks.get(self.i).map_or(self.src_len, |t| t.0)
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax { pos: self.pos(), msg: msg.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.i).map(|t| t.1.clone());
        self.i += 1;
        t
    }

    fn peek_word(&self) -> Option<String> {
        match self.peek() {
            Some(Tok::Word(w)) => Some(w.to_ascii_uppercase()),
            _ => None,
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.peek_word().as_deref() == Some(w) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), ParseError> {
        if self.eat_word(w) {
            Ok(())
        } else {
            Err(self.err(format!("expected {w}")))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{c}'")))
        }
    }

    fn check_unsupported(&self) -> Result<(), ParseError> {
        if let Some(w) = self.peek_word() {
            if UNSUPPORTED.contains(&w.as_str()) {
                return Err(ParseError::UnsupportedFeature(w));
            }
        }
        Ok(())
    }

    fn var(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Some(Tok::Var(v)) => Ok(v),
            _ => {
                self.i -= 1;
                Err(self.err("expected variable"))
            }
        }
    }

    fn aggregate_name(&self) -> Option<BuiltIn> {
        match self.peek_word()?.as_str() {
            "COUNT" => Some(BuiltIn::Count),
            "AVG" => Some(BuiltIn::Avg),
            "MAX" => Some(BuiltIn::Max),
            "MIN" => Some(BuiltIn::Min),
            _ => None,
        }
    }

    /// `AGG ( [DISTINCT] ?v )`, with the aggregate keyword not yet consumed.
    fn aggregate_call(&mut self) -> Result<(BuiltIn, String), ParseError> {
        let agg = self.aggregate_name().ok_or_else(|| self.err("expected aggregate"))?;
        self.i += 1;
        self.expect_punct('(')?;
        self.eat_word("DISTINCT");
        let v = self.var()?;
        self.expect_punct(')')?;
        Ok((agg, v))
    }

    fn prologue(&mut self) -> Result<(), ParseError> {
        while self.eat_word("PREFIX") {
            let prefix = match self.next() {
                Some(Tok::PName(p)) if p.ends_with(':') => p.trim_end_matches(':').to_owned(),
                _ => return Err(self.err("expected prefix name")),
            };
            let ns = match self.next() {
                Some(Tok::Iri(iri)) => iri,
                _ => return Err(self.err("expected namespace IRI")),
            };
            self.prefixes.insert(prefix, ns);
        }
        if self.eat_word("BASE") {
            return Err(ParseError::UnsupportedFeature("BASE".into()));
        }
        Ok(())
    }

    fn projections(&mut self, fresh: &mut usize) -> Result<Option<Vec<Projection>>, ParseError> {
        self.eat_word("DISTINCT");
        self.eat_word("REDUCED");
        if self.eat_punct('*') {
            return Ok(None);
        }
        let mut out = Vec::new();
        loop {
            self.check_unsupported()?;
            match self.peek() {
                Some(Tok::Var(_)) => {
                    let var = self.var()?;
                    out.push(Projection { var, aggregate: None });
                }
                Some(Tok::Punct('(')) => {
                    self.i += 1;
                    self.check_unsupported()?;
                    let agg = self.aggregate_call()?;
                    self.expect_word("AS")?;
                    let var = self.var()?;
                    self.expect_punct(')')?;
                    out.push(Projection { var, aggregate: Some(agg) });
                }
                Some(Tok::Word(_)) if self.aggregate_name().is_some() => {
                    let agg = self.aggregate_call()?;
                    *fresh += 1;
                    out.push(Projection { var: format!(" agg{fresh}"), aggregate: Some(agg) });
                }
                _ => break,
            }
        }
        if out.is_empty() {
            return Err(self.err("empty projection"));
        }
        Ok(Some(out))
    }

    fn term(&mut self, predicate: bool) -> Result<(NodeKey, Option<EdgeLabel>), ParseError> {
        self.check_unsupported()?;
        let tok = self.next().ok_or_else(|| self.err("unexpected end of query"))?;
        let iri_term = |iri: String| -> (NodeKey, Option<EdgeLabel>) {
            let label = if iri == RDF_TYPE {
                EdgeLabel::BuiltIn(BuiltIn::IsA)
            } else if let Some(name) = iri.strip_prefix(BUILTIN_NS) {
                match builtin_from_name(name) {
                    Some(b) => EdgeLabel::BuiltIn(b),
                    None => EdgeLabel::User(Term::Const(iri.clone())),
                }
            } else {
                EdgeLabel::User(Term::Const(iri.clone()))
            };
            (NodeKey::Iri(iri), Some(label))
        };
        Ok(match tok {
            Tok::Var(v) => (NodeKey::Var(v), None),
            Tok::Iri(iri) => iri_term(iri),
            Tok::PName(p) => {
                let iri = self.prefixes.expand(&p).ok_or_else(|| {
                    self.i -= 1;
                    self.err(format!("unknown prefix in {p}"))
                })?;
                iri_term(iri)
            }
            Tok::Literal(l) => (NodeKey::Lit(l), None),
            Tok::Slot(kind, idx) => match kind.as_str() {
                "Prop" => (NodeKey::Slot(VertexKind::Entity, 0), Some(EdgeLabel::User(Term::Slot(idx)))),
                "Ent" => (NodeKey::Slot(VertexKind::Entity, idx), None),
                "Class" => (NodeKey::Slot(VertexKind::Class, idx), None),
                _ => (NodeKey::Slot(VertexKind::Literal, idx), None),
            },
            Tok::Word(w) if predicate && w == "a" => {
                (NodeKey::Iri(RDF_TYPE.into()), Some(EdgeLabel::BuiltIn(BuiltIn::IsA)))
            }
            Tok::Word(w) if w.eq_ignore_ascii_case("true") || w.eq_ignore_ascii_case("false") => {
                (NodeKey::Lit(w.to_ascii_lowercase()), None)
            }
            other => {
                self.i -= 1;
                return Err(self.err(format!("unexpected token {other:?}")));
            }
        })
    }

    fn verb(&mut self) -> Result<EdgeLabel, ParseError> {
        match self.term(true)? {
            (_, Some(label)) => Ok(label),
            (NodeKey::Var(_), None) => {
                Err(ParseError::UnsupportedFeature("variable in predicate position".into()))
            }
            _ => Err(self.err("expected predicate")),
        }
    }

    fn group(&mut self, out: &mut Vec<(NodeKey, EdgeLabel, NodeKey)>) -> Result<(), ParseError> {
        self.expect_punct('{')?;
        loop {
            self.check_unsupported()?;
            if self.eat_punct('}') {
                return Ok(());
            }
            if self.peek() == Some(&Tok::Punct('{')) {
                return Err(ParseError::UnsupportedFeature("nested group pattern".into()));
            }
            let (subject, _) = self.term(false)?;
            loop {
                let label = self.verb()?;
                loop {
                    let (object, _) = self.term(false)?;
                    out.push((subject.clone(), label.clone(), object));
                    if !self.eat_punct(',') {
                        break;
                    }
                }
                if !self.eat_punct(';') {
                    break;
                }
                if matches!(self.peek(), Some(Tok::Punct('.' | '}'))) {
                    break;
                }
            }
            if !self.eat_punct('.') && self.peek() != Some(&Tok::Punct('}')) {
                self.check_unsupported()?;
                return Err(self.err("expected '.' or '}'"));
            }
        }
    }

    fn modifiers(&mut self) -> Result<(Vec<(bool, String)>, Option<u64>, Option<u64>), ParseError> {
        let mut order = Vec::new();
        let (mut limit, mut offset) = (None, None);
        loop {
            self.check_unsupported()?;
            if self.eat_word("ORDER") {
                self.expect_word("BY")?;
                loop {
                    if self.eat_word("DESC") {
                        self.expect_punct('(')?;
                        order.push((true, self.var()?));
                        self.expect_punct(')')?;
                    } else if self.eat_word("ASC") {
                        self.expect_punct('(')?;
                        order.push((false, self.var()?));
                        self.expect_punct(')')?;
                    } else if matches!(self.peek(), Some(Tok::Var(_))) {
                        order.push((false, self.var()?));
                    } else {
                        break;
                    }
                }
                if order.is_empty() {
                    return Err(self.err("empty ORDER BY"));
                }
            } else if self.eat_word("LIMIT") {
                limit = Some(self.integer()?);
            } else if self.eat_word("OFFSET") {
                offset = Some(self.integer()?);
            } else {
                break;
            }
        }
        Ok((order, limit, offset))
    }

    fn integer(&mut self) -> Result<u64, ParseError> {
        match self.next() {
            Some(Tok::Literal(l)) => l.parse().map_err(|_| self.err("expected integer")),
            _ => Err(self.err("expected integer")),
        }
    }
}

fn builtin_from_name(name: &str) -> Option<BuiltIn> {
    BuiltIn::ALL.into_iter().find(|b| pseudo_name(*b) == name)
}

fn pseudo_name(b: BuiltIn) -> &'static str {
    match b {
        BuiltIn::Count => "count",
        BuiltIn::Avg => "avg",
        BuiltIn::Max => "max",
        BuiltIn::Min => "min",
        BuiltIn::MaxAtN => "maxAtN",
        BuiltIn::MinAtN => "minAtN",
        BuiltIn::IsA => "isA",
    }
}

/// Parses with the default prefix table.
pub fn parse_query(text: &str) -> Result<QueryGraph, ParseError> {
    parse_query_with(text, &PrefixTable::default())
}

pub fn parse_query_with(text: &str, prefixes: &PrefixTable) -> Result<QueryGraph, ParseError> {
    let toks = Lexer { src: text, pos: 0 }.tokens()?;
    let mut p = Parser { toks: &toks, i: 0, prefixes: prefixes.clone(), src_len: text.len() };
    p.prologue()?;
    let mut fresh = 0usize;
    let (form, projections) = if p.eat_word("SELECT") {
        (QueryForm::Select, p.projections(&mut fresh)?)
    } else if p.eat_word("ASK") {
        (QueryForm::Ask, None)
    } else {
        p.check_unsupported()?;
        return Err(p.err("expected SELECT or ASK"));
    };
    p.eat_word("WHERE");
    let mut raw = Vec::new();
    p.group(&mut raw)?;
    let (order, limit, offset) = p.modifiers()?;
    p.check_unsupported()?;
    if p.peek().is_some() {
        return Err(p.err("trailing input"));
    }
    if raw.is_empty() {
        return Err(ParseError::Invalid("empty graph pattern".into()));
    }
    if form == QueryForm::Ask && (!order.is_empty() || limit.is_some() || offset.is_some()) {
        return Err(ParseError::UnsupportedFeature("solution modifiers on ASK".into()));
    }

    let mut triples = raw;
    for proj in projections.iter().flatten() {
        if let Some((agg, of)) = &proj.aggregate {
            triples.push((
                NodeKey::Var(of.clone()),
                EdgeLabel::BuiltIn(*agg),
                NodeKey::Var(proj.var.clone()),
            ));
        }
    }
    if !order.is_empty() {
        if limit != Some(1) {
            return Err(ParseError::UnsupportedFeature("ORDER BY without LIMIT 1".into()));
        }
        let n = offset.unwrap_or(0) + 1;
        for (i, (desc, var)) in order.iter().enumerate() {
            let b = if *desc { BuiltIn::MaxAtN } else { BuiltIn::MinAtN };
            triples.push((NodeKey::Var(var.clone()), EdgeLabel::BuiltIn(b), NodeKey::Rank(i)));
        }
        return build(triples, projections, form, Some(n));
    } else if limit.is_some() || offset.is_some() {
        return Err(ParseError::UnsupportedFeature("LIMIT/OFFSET without ORDER BY".into()));
    }
    build(triples, projections, form, None)
}

fn build(
    triples: Vec<(NodeKey, EdgeLabel, NodeKey)>,
    projections: Option<Vec<Projection>>,
    form: QueryForm,
    rank: Option<u64>,
) -> Result<QueryGraph, ParseError> {
    let mut index: HashMap<NodeKey, VertexId> = HashMap::new();
    let mut keys: Vec<NodeKey> = Vec::new();
    let mut edges = Vec::with_capacity(triples.len());
    for (i, (s, label, o)) in triples.into_iter().enumerate() {
        let o = match o {
            NodeKey::Lit(l) if label.builtin().is_some_and(BuiltIn::is_ordering) => NodeKey::OrderLit(i, l),
            o => o,
        };
        let mut id = |k: NodeKey| {
            *index.entry(k.clone()).or_insert_with(|| {
                keys.push(k);
                keys.len() - 1
            })
        };
        let si = id(s);
        let oi = id(o);
        edges.push(Triple::new(si, label, oi));
    }
    let is_class = |v: VertexId| {
        edges.iter().any(|t| t.object == v && t.label == EdgeLabel::BuiltIn(BuiltIn::IsA))
    };
    let is_agg = |v: VertexId| {
        edges.iter().any(|t| t.object == v && t.label.builtin().is_some_and(BuiltIn::is_aggregate))
    };
    let vertices: Vec<Vertex> = keys
        .iter()
        .enumerate()
        .map(|(v, k)| match k {
            NodeKey::Var(_) if is_agg(v) => Vertex::aggregate_result(),
            NodeKey::Var(_) => Vertex::variable(),
            NodeKey::Iri(iri) if is_class(v) => Vertex::class(iri.clone()),
            NodeKey::Iri(iri) => Vertex::entity(iri.clone()),
            NodeKey::Lit(l) | NodeKey::OrderLit(_, l) => Vertex::literal(l.clone()),
            NodeKey::Rank(_) => Vertex::literal(rank.unwrap().to_string()),
            NodeKey::Slot(VertexKind::Entity, idx) if is_class(v) => Vertex::slot(VertexKind::Class, *idx),
            NodeKey::Slot(kind, idx) => Vertex::slot(*kind, *idx),
        })
        .collect();
    let target = match projections {
        Some(projs) => {
            let first = &projs[0];
            match index.get(&NodeKey::Var(first.var.clone())) {
                Some(&v) => Some(v),
                None => {
                    return Err(ParseError::Invalid(format!(
                        "projected variable ?{} is not bound by the pattern",
                        first.var.trim()
                    )))
                }
            }
        }
        None => None,
    };
    let g = QueryGraph::with_form(vertices, edges, target, form)?;
    if let Err(msg) = g.check_grammar() {
        return Err(ParseError::Invalid(msg));
    }
    Ok(g)
}

/// Writes with the default prefix table.
pub fn serialize_query(g: &QueryGraph) -> String {
    serialize_query_with(g, &PrefixTable::default())
}

/// Renders `g` as text accepted by [`parse_query_with`].
///
/// Aggregates whose result is the target become a projected aggregate; a
/// single MAXATN/MINATN becomes ORDER BY ... LIMIT 1 OFFSET N-1. Any other
/// built-in triple is written with its `qg:` pseudo-predicate.
pub fn serialize_query_with(g: &QueryGraph, prefixes: &PrefixTable) -> String {
    let var = |v: VertexId| format!("?v{v}");
    let term = |v: VertexId| -> String {
        let vx = g.vertex(v);
        match (&vx.surface, vx.kind) {
            (None, _) => var(v),
            (Some(Term::Slot(i)), kind) => format!("%{}{}", kind.slot_prefix(), i),
            (Some(Term::Const(s)), VertexKind::Literal) => quote(s),
            (Some(Term::Const(s)), _) => prefixes.compact(s),
        }
    };

    let mut head_agg: Option<usize> = None;
    if let Some(t) = g.target() {
        head_agg = g
            .triples()
            .iter()
            .position(|tr| tr.object == t && tr.label.builtin().is_some_and(BuiltIn::is_aggregate));
    }
    let order_triples: Vec<usize> = g
        .triples()
        .iter()
        .enumerate()
        .filter(|(_, t)| t.label.builtin().is_some_and(BuiltIn::is_ordering))
        .map(|(i, _)| i)
        .collect();
    let order_clause: Option<(usize, u64)> = match order_triples.as_slice() {
        [i] if g.form() == QueryForm::Select => {
            let t = &g.triples()[*i];
            g.vertex(t.object)
                .surface
                .as_ref()
                .and_then(Term::as_const)
                .and_then(|n| n.parse::<u64>().ok())
                .filter(|&n| n >= 1 && g.triples().iter().filter(|x| x.object == t.object).count() == 1)
                .map(|n| (*i, n))
        }
        _ => None,
    };

    let mut out = String::new();
    match g.form() {
        QueryForm::Ask => out.push_str("ASK WHERE {"),
        QueryForm::Select => {
            out.push_str("SELECT ");
            match (g.target(), head_agg) {
                (Some(_), Some(i)) => {
                    let t = &g.triples()[i];
                    let b = t.label.builtin().unwrap();
                    let _ = write!(out, "({}({}) AS {})", b.name(), var(t.subject), var(t.object));
                }
                (Some(t), None) => out.push_str(&var(t)),
                (None, _) => out.push('*'),
            }
            out.push_str(" WHERE {");
        }
    }
    for (i, t) in g.triples().iter().enumerate() {
        if Some(i) == head_agg && g.form() == QueryForm::Select {
            continue;
        }
        if order_clause.is_some_and(|(oi, _)| oi == i) {
            continue;
        }
        let label = match &t.label {
            EdgeLabel::BuiltIn(BuiltIn::IsA) => "a".to_owned(),
            EdgeLabel::BuiltIn(b) => format!("qg:{}", pseudo_name(*b)),
            EdgeLabel::User(Term::Const(p)) => prefixes.compact(p),
            EdgeLabel::User(Term::Slot(i)) => format!("%Prop{i}"),
        };
        let _ = write!(out, " {} {} {} .", term(t.subject), label, term(t.object));
    }
    out.push_str(" }");
    if let Some((i, n)) = order_clause {
        let t = &g.triples()[i];
        let dir = if t.label == EdgeLabel::BuiltIn(BuiltIn::MaxAtN) { "DESC" } else { "ASC" };
        let _ = write!(out, " ORDER BY {dir}({}) LIMIT 1", var(t.subject));
        if n > 1 {
            let _ = write!(out, " OFFSET {}", n - 1);
        }
    }
    out
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            '\t' => q.push_str("\\t"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}
