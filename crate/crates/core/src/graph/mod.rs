//! Query graphs: vertices, built-in and user-defined edge labels, triples.
//!
//! A [`QueryGraph`] is the graph form of one formal query. The same type is
//! used for *query structures*, in which entity, class and literal vertices
//! and user-defined labels carry numbered placeholders ([`Term::Slot`])
//! instead of knowledge-base symbols.

mod canon;
mod iso;
mod prefix;
mod sparql;

pub use canon::{canonical_key, canonicalize, structure_of, Canonical, StructureKey};
pub use iso::{find_equivalence, is_equivalent, is_substructure, Witness};
pub use prefix::PrefixTable;
pub use prefix::{BUILTIN_NS, RDF_TYPE};
pub use sparql::{parse_query, parse_query_with, serialize_query, serialize_query_with, ParseError};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type VertexId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VertexKind {
    Variable,
    Entity,
    Class,
    Literal,
    AggregateResult,
}

impl VertexKind {
    pub fn is_variable(self) -> bool {
        matches!(self, VertexKind::Variable | VertexKind::AggregateResult)
    }

    pub(crate) fn code(self) -> char {
        match self {
            VertexKind::Variable => 'v',
            VertexKind::AggregateResult => 'a',
            VertexKind::Entity => 'e',
            VertexKind::Class => 'c',
            VertexKind::Literal => 'l',
        }
    }

    pub(crate) fn slot_prefix(self) -> &'static str {
        match self {
            VertexKind::Entity => "Ent",
            VertexKind::Class => "Class",
            VertexKind::Literal => "Lit",
            VertexKind::Variable | VertexKind::AggregateResult => "Var",
        }
    }
}

/// The symbol carried by a constant vertex or a user-defined label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    /// A knowledge-base symbol: an IRI or the lexical form of a literal.
    Const(String),
    /// A placeholder index (1-based) in a query structure.
    Slot(u32),
}

impl Term {
    pub fn as_const(&self) -> Option<&str> {
        match self {
            Term::Const(s) => Some(s),
            Term::Slot(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vertex {
    pub kind: VertexKind,
    pub surface: Option<Term>,
}

impl Vertex {
    pub fn variable() -> Self {
        Vertex { kind: VertexKind::Variable, surface: None }
    }

    pub fn aggregate_result() -> Self {
        Vertex { kind: VertexKind::AggregateResult, surface: None }
    }

    pub fn entity(iri: impl Into<String>) -> Self {
        Vertex { kind: VertexKind::Entity, surface: Some(Term::Const(iri.into())) }
    }

    pub fn class(iri: impl Into<String>) -> Self {
        Vertex { kind: VertexKind::Class, surface: Some(Term::Const(iri.into())) }
    }

    pub fn literal(lexical: impl Into<String>) -> Self {
        Vertex { kind: VertexKind::Literal, surface: Some(Term::Const(lexical.into())) }
    }

    pub fn slot(kind: VertexKind, index: u32) -> Self {
        Vertex { kind, surface: Some(Term::Slot(index)) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BuiltIn {
    Count,
    Avg,
    Max,
    Min,
    MaxAtN,
    MinAtN,
    IsA,
}

impl BuiltIn {
    pub const ALL: [BuiltIn; 7] = [
        BuiltIn::Count,
        BuiltIn::Avg,
        BuiltIn::Max,
        BuiltIn::Min,
        BuiltIn::MaxAtN,
        BuiltIn::MinAtN,
        BuiltIn::IsA,
    ];

    /// COUNT, AVG, MAX and MIN: connect a variable to its aggregation result.
    pub fn is_aggregate(self) -> bool {
        matches!(self, BuiltIn::Count | BuiltIn::Avg | BuiltIn::Max | BuiltIn::Min)
    }

    /// MAXATN and MINATN: ORDER BY ... LIMIT 1 OFFSET N-1.
    pub fn is_ordering(self) -> bool {
        matches!(self, BuiltIn::MaxAtN | BuiltIn::MinAtN)
    }

    pub fn name(self) -> &'static str {
        match self {
            BuiltIn::Count => "COUNT",
            BuiltIn::Avg => "AVG",
            BuiltIn::Max => "MAX",
            BuiltIn::Min => "MIN",
            BuiltIn::MaxAtN => "MAXATN",
            BuiltIn::MinAtN => "MINATN",
            BuiltIn::IsA => "ISA",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for BuiltIn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeLabel {
    BuiltIn(BuiltIn),
    User(Term),
}

impl EdgeLabel {
    pub fn user(iri: impl Into<String>) -> Self {
        EdgeLabel::User(Term::Const(iri.into()))
    }

    pub fn builtin(&self) -> Option<BuiltIn> {
        match self {
            EdgeLabel::BuiltIn(b) => Some(*b),
            EdgeLabel::User(_) => None,
        }
    }

    pub fn is_user(&self) -> bool {
        matches!(self, EdgeLabel::User(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: VertexId,
    pub label: EdgeLabel,
    pub object: VertexId,
}

impl Triple {
    pub fn new(subject: VertexId, label: EdgeLabel, object: VertexId) -> Self {
        Triple { subject, label, object }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryForm {
    #[default]
    Select,
    Ask,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("query graph has no triples")]
    Empty,
    #[error("triple {0} references missing vertex {1}")]
    DanglingVertex(usize, VertexId),
    #[error("vertex {0} is not used by any triple")]
    IsolatedVertex(VertexId),
    #[error("vertex {0}: {1}")]
    BadSurface(VertexId, &'static str),
    #[error("vertex {0} is an aggregation result iff it is the object of COUNT/AVG/MAX/MIN")]
    AggregateKind(VertexId),
    #[error("target vertex {0} must be a variable")]
    BadTarget(VertexId),
    #[error("graph has {0} triples; at most {1} are supported here")]
    TooLarge(usize, usize),
}

/// A formal query Q = (V, T) with an optional answer vertex.
///
/// Vertex ids are indices into [`QueryGraph::vertices`]. Every vertex is
/// used by at least one triple and the triple set is duplicate-free.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGraph {
    vertices: Vec<Vertex>,
    triples: Vec<Triple>,
    target: Option<VertexId>,
    #[serde(default)]
    form: QueryForm,
}

impl QueryGraph {
    pub fn new(
        vertices: Vec<Vertex>,
        triples: Vec<Triple>,
        target: Option<VertexId>,
    ) -> Result<Self, GraphError> {
        Self::with_form(vertices, triples, target, QueryForm::Select)
    }

    pub fn with_form(
        vertices: Vec<Vertex>,
        triples: Vec<Triple>,
        target: Option<VertexId>,
        form: QueryForm,
    ) -> Result<Self, GraphError> {
        if triples.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut seen = BTreeSet::new();
        let mut deduped = Vec::with_capacity(triples.len());
        for t in triples {
            if seen.insert(t.clone()) {
                deduped.push(t);
            }
        }
        let n = vertices.len();
        let mut used = vec![false; n];
        let mut agg_object = vec![false; n];
        for (i, t) in deduped.iter().enumerate() {
            for v in [t.subject, t.object] {
                if v >= n {
                    return Err(GraphError::DanglingVertex(i, v));
                }
                used[v] = true;
            }
            if t.label.builtin().is_some_and(BuiltIn::is_aggregate) {
                agg_object[t.object] = true;
            }
        }
        for (id, v) in vertices.iter().enumerate() {
            if !used[id] {
                return Err(GraphError::IsolatedVertex(id));
            }
            match (v.kind.is_variable(), &v.surface) {
                (true, Some(_)) => {
                    return Err(GraphError::BadSurface(id, "variables carry no surface symbol"))
                }
                (false, None) => {
                    return Err(GraphError::BadSurface(id, "constants need a symbol or placeholder"))
                }
                (false, Some(Term::Const(s))) if s.is_empty() => {
                    return Err(GraphError::BadSurface(id, "empty surface symbol"))
                }
                _ => {}
            }
            if (v.kind == VertexKind::AggregateResult) != agg_object[id] {
                return Err(GraphError::AggregateKind(id));
            }
        }
        if let Some(t) = target {
            if t >= n || !vertices[t].kind.is_variable() {
                return Err(GraphError::BadTarget(t));
            }
        }
        Ok(QueryGraph { vertices, triples: deduped, target, form })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, id: VertexId) -> &Vertex {
        &self.vertices[id]
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn target(&self) -> Option<VertexId> {
        self.target
    }

    pub fn form(&self) -> QueryForm {
        self.form
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    /// Returns a copy with a different answer vertex.
    pub fn with_target(&self, target: Option<VertexId>) -> Result<Self, GraphError> {
        Self::with_form(self.vertices.clone(), self.triples.clone(), target, self.form)
    }

    /// Number of COUNT/AVG/MAX/MIN triples, plus MAXATN/MINATN when
    /// `include_ordering` is set.
    pub fn aggregation_count(&self, include_ordering: bool) -> usize {
        self.triples
            .iter()
            .filter_map(|t| t.label.builtin())
            .filter(|b| b.is_aggregate() || (include_ordering && b.is_ordering()))
            .count()
    }

    /// The N of a MAXATN/MINATN object vertex, if `v` is one.
    pub fn order_rank(&self, v: VertexId) -> Option<&str> {
        self.triples
            .iter()
            .find(|t| t.object == v && t.label.builtin().is_some_and(BuiltIn::is_ordering))
            .and_then(|_| self.vertices[v].surface.as_ref())
            .and_then(Term::as_const)
    }

    /// Kind plus the MAXATN/MINATN rank, which structural equivalence must preserve.
    pub(crate) fn vertex_colors(&self) -> Vec<(VertexKind, Option<String>)> {
        (0..self.vertices.len())
            .map(|v| (self.vertices[v].kind, self.order_rank(v).map(str::to_owned)))
            .collect()
    }

    /// Distinct user-defined labels in first-use order.
    pub fn user_labels(&self) -> Vec<&Term> {
        let mut out: Vec<&Term> = Vec::new();
        for t in &self.triples {
            if let EdgeLabel::User(term) = &t.label {
                if !out.contains(&term) {
                    out.push(term);
                }
            }
        }
        out
    }

    /// Connectivity of the triple set, two triples being adjacent when they
    /// share a vertex.
    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.triples.len()).collect();
        triples_connected(&self.triples, &all)
    }

    /// The subgraph induced by a subset of triple indices. Vertices are
    /// renumbered in order of first use; the target survives if its vertex does.
    pub fn subgraph(&self, triple_indices: &[usize]) -> Result<QueryGraph, GraphError> {
        let mut remap: HashMap<VertexId, VertexId> = HashMap::new();
        let mut vertices = Vec::new();
        let mut triples = Vec::with_capacity(triple_indices.len());
        for &i in triple_indices {
            let t = &self.triples[i];
            let mut map = |v: VertexId| {
                *remap.entry(v).or_insert_with(|| {
                    vertices.push(self.vertices[v].clone());
                    vertices.len() - 1
                })
            };
            let s = map(t.subject);
            let o = map(t.object);
            triples.push(Triple::new(s, t.label.clone(), o));
        }
        let target = self.target.and_then(|t| remap.get(&t).copied());
        QueryGraph::with_form(vertices, triples, target, self.form)
    }

    /// Placeholder slots still present: constant vertices and user labels
    /// whose surface is a [`Term::Slot`].
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for (id, v) in self.vertices.iter().enumerate() {
            if let Some(Term::Slot(i)) = v.surface {
                out.push(Slot::Vertex { vertex: id, kind: v.kind, index: i });
            }
        }
        let mut labels = BTreeSet::new();
        for t in &self.triples {
            if let EdgeLabel::User(Term::Slot(i)) = t.label {
                labels.insert(i);
            }
        }
        out.extend(labels.into_iter().map(|index| Slot::Property { index }));
        out
    }

    pub fn is_grounded(&self) -> bool {
        self.slots().is_empty()
    }

    /// Checks the triple patterns of the query grammar:
    ///
    /// * user triples link variables/entities to variables/entities/literals;
    /// * ISA links a variable or entity to a class, and classes occur only there;
    /// * COUNT/AVG/MAX/MIN link a variable to an aggregation result used nowhere else;
    /// * MAXATN/MINATN link a variable to a private positive-integer literal.
    pub fn check_grammar(&self) -> Result<(), String> {
        use VertexKind::*;
        let kind = |v: VertexId| self.vertices[v].kind;
        let mut uses = vec![0usize; self.vertices.len()];
        for t in &self.triples {
            uses[t.subject] += 1;
            uses[t.object] += 1;
        }
        for t in &self.triples {
            let (s, o) = (kind(t.subject), kind(t.object));
            let ok = match t.label.builtin() {
                None => matches!(s, Variable | Entity) && matches!(o, Variable | Entity | Literal),
                Some(BuiltIn::IsA) => matches!(s, Variable | Entity) && o == Class,
                Some(b) if b.is_aggregate() => s == Variable && o == AggregateResult,
                Some(_) => {
                    s == Variable
                        && o == Literal
                        && uses[t.object] == 1
                        && self.order_rank(t.object).is_some_and(|n| {
                            n.parse::<u64>().is_ok_and(|n| n >= 1)
                        })
                }
            };
            if !ok {
                let label = match &t.label {
                    EdgeLabel::BuiltIn(b) => b.name().to_owned(),
                    EdgeLabel::User(_) => "user label".to_owned(),
                };
                return Err(format!("{label} cannot link {s:?} to {o:?} here"));
            }
        }
        for (v, vx) in self.vertices.iter().enumerate() {
            if vx.kind == AggregateResult && uses[v] != 1 {
                return Err(format!("aggregation result {v} is used outside its aggregate"));
            }
            if vx.kind == Class
                && self.triples.iter().any(|t| t.subject == v || (t.object == v && t.label != EdgeLabel::BuiltIn(BuiltIn::IsA)))
            {
                return Err(format!("class vertex {v} appears outside an ISA object"));
            }
        }
        Ok(())
    }

    /// Replaces placeholders with concrete symbols. Missing entries are kept
    /// as placeholders.
    pub fn fill(
        &self,
        vertex_symbols: &BTreeMap<VertexId, String>,
        label_symbols: &BTreeMap<u32, String>,
    ) -> QueryGraph {
        let vertices = self
            .vertices
            .iter()
            .enumerate()
            .map(|(id, v)| match vertex_symbols.get(&id) {
                Some(sym) => Vertex { kind: v.kind, surface: Some(Term::Const(sym.clone())) },
                None => v.clone(),
            })
            .collect();
        let triples = self
            .triples
            .iter()
            .map(|t| {
                let label = match &t.label {
                    EdgeLabel::User(Term::Slot(i)) => match label_symbols.get(i) {
                        Some(sym) => EdgeLabel::User(Term::Const(sym.clone())),
                        None => t.label.clone(),
                    },
                    other => other.clone(),
                };
                Triple::new(t.subject, label, t.object)
            })
            .collect();
        // Filling can only collapse triples into duplicates, which the
        // constructor drops; every vertex stays in use.
        QueryGraph::with_form(vertices, triples, self.target, self.form)
            .expect("filling placeholders preserves graph validity")
    }
}

/// A placeholder position to be grounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Vertex { vertex: VertexId, kind: VertexKind, index: u32 },
    Property { index: u32 },
}

impl Slot {
    pub fn name(&self) -> String {
        match self {
            Slot::Vertex { kind, index, .. } => format!("{}{}", kind.slot_prefix(), index),
            Slot::Property { index } => format!("Prop{index}"),
        }
    }
}

pub(crate) fn triples_connected(triples: &[Triple], subset: &[usize]) -> bool {
    if subset.is_empty() {
        return false;
    }
    let mut reached = vec![false; subset.len()];
    reached[0] = true;
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        let a = &triples[subset[i]];
        for j in 0..subset.len() {
            if reached[j] {
                continue;
            }
            let b = &triples[subset[j]];
            if a.subject == b.subject
                || a.subject == b.object
                || a.object == b.subject
                || a.object == b.object
            {
                reached[j] = true;
                stack.push(j);
            }
        }
    }
    reached.into_iter().all(|r| r)
}

impl fmt::Display for QueryGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |v: VertexId| -> String {
            let vx = &self.vertices[v];
            match &vx.surface {
                None => format!("?v{v}"),
                Some(Term::Const(s)) => s.clone(),
                Some(Term::Slot(i)) => format!("{}{}", vx.kind.slot_prefix(), i),
            }
        };
        for (i, t) in self.triples.iter().enumerate() {
            if i > 0 {
                f.write_str(" . ")?;
            }
            let label = match &t.label {
                EdgeLabel::BuiltIn(b) => b.name().to_owned(),
                EdgeLabel::User(Term::Const(s)) => s.clone(),
                EdgeLabel::User(Term::Slot(i)) => format!("Prop{i}"),
            };
            write!(f, "<{}, {}, {}>", name(t.subject), label, name(t.object))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_isa() -> QueryGraph {
        QueryGraph::new(
            vec![Vertex::variable(), Vertex::aggregate_result(), Vertex::slot(VertexKind::Class, 1)],
            vec![
                Triple::new(0, EdgeLabel::BuiltIn(BuiltIn::Count), 1),
                Triple::new(0, EdgeLabel::BuiltIn(BuiltIn::IsA), 2),
            ],
            Some(1),
        )
        .unwrap()
    }

    #[test]
    fn rejects_empty_and_dangling() {
        assert_eq!(QueryGraph::new(vec![], vec![], None), Err(GraphError::Empty));
        let err = QueryGraph::new(
            vec![Vertex::variable()],
            vec![Triple::new(0, EdgeLabel::user("p"), 3)],
            None,
        );
        assert_eq!(err, Err(GraphError::DanglingVertex(0, 3)));
    }

    #[test]
    fn aggregate_kind_must_match_usage() {
        let err = QueryGraph::new(
            vec![Vertex::variable(), Vertex::variable()],
            vec![Triple::new(0, EdgeLabel::BuiltIn(BuiltIn::Count), 1)],
            None,
        );
        assert_eq!(err, Err(GraphError::AggregateKind(1)));
    }

    #[test]
    fn duplicate_triples_are_dropped() {
        let g = QueryGraph::new(
            vec![Vertex::variable(), Vertex::entity("E")],
            vec![Triple::new(0, EdgeLabel::user("p"), 1), Triple::new(0, EdgeLabel::user("p"), 1)],
            Some(0),
        )
        .unwrap();
        assert_eq!(g.triple_count(), 1);
    }

    #[test]
    fn target_must_be_variable() {
        let err = QueryGraph::new(
            vec![Vertex::variable(), Vertex::entity("E")],
            vec![Triple::new(0, EdgeLabel::user("p"), 1)],
            Some(1),
        );
        assert_eq!(err, Err(GraphError::BadTarget(1)));
    }

    #[test]
    fn subgraph_and_connectivity() {
        let g = count_isa();
        assert!(g.is_connected());
        let sub = g.subgraph(&[1]).unwrap();
        assert_eq!(sub.triple_count(), 1);
        assert_eq!(sub.vertex_count(), 2);
        assert_eq!(sub.target(), None);
        assert_eq!(g.aggregation_count(true), 1);
    }

    #[test]
    fn slots_and_fill() {
        let g = count_isa();
        let slots = g.slots();
        assert_eq!(slots.len(), 1);
        assert_eq!(slots[0].name(), "Class1");
        let filled = g.fill(&BTreeMap::from([(2, "dbo:Film".to_owned())]), &BTreeMap::new());
        assert!(filled.is_grounded());
    }
}
