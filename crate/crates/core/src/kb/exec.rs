use std::cmp::Ordering;
use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::{KnowledgeBase, Node, SymbolId};
use crate::error::{Error, Result};
use crate::graph::{BuiltIn, EdgeLabel, QueryForm, QueryGraph, Term, VertexId, VertexKind};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Answer {
    Iri(String),
    Literal(String),
    Number(#[serde(with = "ratio_text")] BigRational),
}

/// Numbers are written as `"3"` or `"5/2"`.
mod ratio_text {
    use num_rational::BigRational;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(D::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerSet {
    Bindings(BTreeSet<Answer>),
    Boolean(bool),
}

impl AnswerSet {
    pub fn empty() -> Self {
        AnswerSet::Bindings(BTreeSet::new())
    }

    /// An ASK result is never empty; a SELECT result is empty without bindings.
    pub fn is_empty(&self) -> bool {
        matches!(self, AnswerSet::Bindings(b) if b.is_empty())
    }

    pub fn len(&self) -> usize {
        match self {
            AnswerSet::Bindings(b) => b.len(),
            AnswerSet::Boolean(_) => 1,
        }
    }
}

/// Parses a decimal literal (`-12`, `1.85`, `3e2`) exactly.
pub fn parse_number(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (neg, rest) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (mantissa, exp) = match rest.find(['e', 'E']) {
        Some(i) => (&rest[..i], rest[i + 1..].parse::<i32>().ok()?),
        None => (rest, 0),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut value = BigRational::from_integer(digits);
    if scale >= 0 {
        value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if neg { -value } else { value })
}

enum Pos {
    Const(SymbolId),
    Var(usize),
}

struct Pattern {
    subject: Pos,
    property: SymbolId,
    object: Pos,
}

/// Evaluates a grounded query.
///
/// User-defined and ISA triples form a basic graph pattern matched by a
/// backtracking join; solutions are distinct rows over the pattern
/// variables. MAXATN/MINATN then keep the row at offset N-1 of the rows
/// sorted by the constrained variable (descending/ascending, ties by row).
/// COUNT/AVG/MAX/MIN apply to the distinct values of their subject
/// variable; an aggregate over no values is unbound.
pub fn execute(q: &QueryGraph, kb: &KnowledgeBase) -> Result<AnswerSet> {
    if let Some(slot) = q.slots().first() {
        return Err(Error::Ungrounded(slot.name()));
    }
    let mut var_index = vec![None; q.vertex_count()];
    let mut n_vars = 0;
    for (id, v) in q.vertices().iter().enumerate() {
        if v.kind == VertexKind::Variable {
            var_index[id] = Some(n_vars);
            n_vars += 1;
        }
    }

    let mut patterns = Vec::new();
    let mut unsatisfiable = false;
    let mut in_pattern = vec![false; n_vars];
    for t in q.triples() {
        let property = match &t.label {
            EdgeLabel::BuiltIn(BuiltIn::IsA) => kb.rdf_type(),
            EdgeLabel::User(Term::Const(p)) => kb.lookup_iri(p),
            _ => continue,
        };
        let mut pos = |v: VertexId| -> Option<Pos> {
            if let Some(i) = var_index[v] {
                in_pattern[i] = true;
                return Some(Pos::Var(i));
            }
            let vx = q.vertex(v);
            let sym = vx.surface.as_ref().and_then(Term::as_const)?;
            match vx.kind {
                VertexKind::Literal => kb.lookup_literal(sym),
                _ => kb.lookup_iri(sym),
            }
            .map(Pos::Const)
        };
        let (s, o) = (pos(t.subject), pos(t.object));
        match (s, property, o) {
            (Some(subject), Some(property), Some(object)) => {
                patterns.push(Pattern { subject, property, object })
            }
            _ => unsatisfiable = true,
        }
    }
    if let Some(i) = in_pattern.iter().position(|&b| !b) {
        let v = var_index.iter().position(|&x| x == Some(i)).unwrap();
        return Err(Error::UnboundVariable(v));
    }

    let mut rows: Vec<Vec<SymbolId>> = Vec::new();
    if !unsatisfiable {
        let mut set = BTreeSet::new();
        let mut binding = vec![None; n_vars];
        let mut done = vec![false; patterns.len()];
        join(kb, &patterns, &mut done, &mut binding, &mut set);
        rows = set.into_iter().collect();
    }

    if q.form() == QueryForm::Ask {
        return Ok(AnswerSet::Boolean(!rows.is_empty()));
    }

    let var_of = |v: VertexId| var_index[v].ok_or(Error::UnboundVariable(v));
    let orderings: Vec<(usize, bool, usize)> = q
        .triples()
        .iter()
        .filter(|t| t.label.builtin().is_some_and(BuiltIn::is_ordering))
        .map(|t| {
            let n = q
                .order_rank(t.object)
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .unwrap_or(1);
            Ok((var_of(t.subject)?, t.label == EdgeLabel::BuiltIn(BuiltIn::MaxAtN), n))
        })
        .collect::<Result<_>>()?;
    if let Some(&(_, _, n)) = orderings.first() {
        rows = select_ordered(kb, rows, &orderings, n);
    }

    let target = q.target().ok_or(Error::UnboundTarget)?;
    let to_answer = |id: SymbolId| match kb.node(id) {
        Node::Iri(s) => Answer::Iri(s.clone()),
        Node::Literal(s) => Answer::Literal(s.clone()),
    };
    if q.vertex(target).kind == VertexKind::AggregateResult {
        for t in q.triples() {
            if t.object != target {
                continue;
            }
            let Some(agg) = t.label.builtin().filter(|b| b.is_aggregate()) else { continue };
            let var = var_of(t.subject)?;
            let values: BTreeSet<SymbolId> = rows.iter().map(|r| r[var]).collect();
            return Ok(match aggregate(kb, agg, &values)? {
                Some(v) => AnswerSet::Bindings(BTreeSet::from([Answer::Number(v)])),
                None => AnswerSet::empty(),
            });
        }
        return Err(Error::UnboundTarget);
    }
    let var = var_of(target)?;
    Ok(AnswerSet::Bindings(rows.iter().map(|r| to_answer(r[var])).collect()))
}

fn join(
    kb: &KnowledgeBase,
    patterns: &[Pattern],
    done: &mut [bool],
    binding: &mut [Option<SymbolId>],
    out: &mut BTreeSet<Vec<SymbolId>>,
) {
    let bound = |p: &Pos, binding: &[Option<SymbolId>]| match *p {
        Pos::Const(c) => Some(c),
        Pos::Var(i) => binding[i],
    };
    // Most constrained pattern first.
    let next = (0..patterns.len()).filter(|&i| !done[i]).max_by_key(|&i| {
        let p = &patterns[i];
        let s = bound(&p.subject, binding).is_some() as u8;
        let o = bound(&p.object, binding).is_some() as u8;
        (s + o, s, std::cmp::Reverse(i))
    });
    let Some(i) = next else {
        out.insert(binding.iter().map(|b| b.expect("all variables bound")).collect());
        return;
    };
    let p = &patterns[i];
    done[i] = true;
    let s = bound(&p.subject, binding);
    let o = bound(&p.object, binding);
    let mut try_pair = |sv: SymbolId, ov: SymbolId, binding: &mut [Option<SymbolId>], done: &mut [bool]| {
        let mut set = Vec::new();
        for (pos, val) in [(&p.subject, sv), (&p.object, ov)] {
            if let Pos::Var(v) = *pos {
                match binding[v] {
                    Some(x) if x != val => {
                        for &u in &set {
                            binding[u] = None;
                        }
                        return;
                    }
                    Some(_) => {}
                    None => {
                        binding[v] = Some(val);
                        set.push(v);
                    }
                }
            }
        }
        join(kb, patterns, done, binding, out);
        for &u in &set {
            binding[u] = None;
        }
    };
    match (s, o) {
        (Some(sv), Some(ov)) => {
            if kb.has_fact(sv, p.property, ov) {
                try_pair(sv, ov, binding, done);
            }
        }
        (Some(sv), None) => {
            for &ov in kb.objects_of(sv, p.property) {
                try_pair(sv, ov, binding, done);
            }
        }
        (None, Some(ov)) => {
            for &sv in kb.subjects_of(ov, p.property) {
                try_pair(sv, ov, binding, done);
            }
        }
        (None, None) => {
            for &(sv, ov) in kb.pairs_of(p.property) {
                try_pair(sv, ov, binding, done);
            }
        }
    }
    done[i] = false;
}

fn select_ordered(
    kb: &KnowledgeBase,
    mut rows: Vec<Vec<SymbolId>>,
    orderings: &[(usize, bool, usize)],
    n: usize,
) -> Vec<Vec<SymbolId>> {
    // Per ordering variable: numeric keys when every value parses, else text.
    let numeric: Vec<bool> = orderings
        .iter()
        .map(|&(var, _, _)| {
            let all = rows.iter().all(|r| parse_number(kb.node(r[var]).text()).is_some());
            if !all && !rows.is_empty() {
                log::debug!("ordering over non-numeric values; comparing lexically");
            }
            all
        })
        .collect();
    let cmp_value = |a: SymbolId, b: SymbolId, numeric: bool| -> Ordering {
        let (ta, tb) = (kb.node(a).text(), kb.node(b).text());
        if numeric {
            parse_number(ta).cmp(&parse_number(tb))
        } else {
            ta.cmp(tb)
        }
    };
    rows.sort_by(|a, b| {
        for (k, &(var, desc, _)) in orderings.iter().enumerate() {
            let ord = cmp_value(a[var], b[var], numeric[k]);
            let ord = if desc { ord.reverse() } else { ord };
            if ord != Ordering::Equal {
                return ord;
            }
        }
        let ta = a.iter().map(|&x| kb.node(x));
        let tb = b.iter().map(|&x| kb.node(x));
        ta.cmp(tb)
    });
    rows.into_iter().nth(n - 1).into_iter().collect()
}

fn aggregate(
    kb: &KnowledgeBase,
    agg: BuiltIn,
    values: &BTreeSet<SymbolId>,
) -> Result<Option<BigRational>> {
    if values.is_empty() {
        return Ok(None);
    }
    if agg == BuiltIn::Count {
        return Ok(Some(BigRational::from_integer(BigInt::from(values.len()))));
    }
    let nums: Vec<BigRational> = values
        .iter()
        .map(|&v| {
            let node = kb.node(v);
            match node {
                Node::Literal(l) => parse_number(l),
                Node::Iri(_) => None,
            }
            .ok_or_else(|| Error::NonNumericAggregate(node.text().to_owned()))
        })
        .collect::<Result<_>>()?;
    Ok(Some(match agg {
        BuiltIn::Avg => {
            let mut sum = BigRational::zero();
            let mut n = BigRational::zero();
            for x in nums {
                sum += x;
                n += BigRational::one();
            }
            sum / n
        }
        BuiltIn::Max => nums.into_iter().max().unwrap(),
        BuiltIn::Min => nums.into_iter().min().unwrap(),
        _ => unreachable!("only aggregates reach here"),
    }))
}
