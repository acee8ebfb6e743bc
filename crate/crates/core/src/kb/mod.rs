//! In-memory knowledge base: interned facts, direct types and schema.

mod exec;
mod schema;

pub use exec::{execute, parse_number, Answer, AnswerSet};
pub use schema::{check_domain_range, Schema};

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{read_file, Error, Result};
use crate::graph::{PrefixTable, RDF_TYPE};

pub type SymbolId = u32;

/// An interned KB node: an IRI or the lexical form of a literal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Iri(String),
    Literal(String),
}

impl Node {
    pub fn text(&self) -> &str {
        match self {
            Node::Iri(s) | Node::Literal(s) => s,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    nodes: Vec<Node>,
    index: HashMap<Node, SymbolId>,
    /// Sorted, duplicate-free (subject, property, object) facts.
    facts: Vec<(SymbolId, SymbolId, SymbolId)>,
    by_property: HashMap<SymbolId, Vec<(SymbolId, SymbolId)>>,
    by_subject: HashMap<(SymbolId, SymbolId), Vec<SymbolId>>,
    by_object: HashMap<(SymbolId, SymbolId), Vec<SymbolId>>,
    types: HashMap<SymbolId, BTreeSet<SymbolId>>,
    rdf_type: Option<SymbolId>,
    pub schema: Schema,
}

impl KnowledgeBase {
    /// Builds a KB from (subject, property, object) nodes. Duplicates are dropped.
    pub fn from_facts(facts: impl IntoIterator<Item = (Node, Node, Node)>) -> Self {
        let mut kb = KnowledgeBase::default();
        let mut raw = Vec::new();
        for (s, p, o) in facts {
            let t = (kb.intern(s), kb.intern(p), kb.intern(o));
            raw.push(t);
        }
        kb.rdf_type = kb.index.get(&Node::Iri(RDF_TYPE.to_owned())).copied();
        raw.sort_unstable();
        raw.dedup();
        for &(s, p, o) in &raw {
            kb.by_property.entry(p).or_default().push((s, o));
            kb.by_subject.entry((s, p)).or_default().push(o);
            kb.by_object.entry((o, p)).or_default().push(s);
            if Some(p) == kb.rdf_type {
                kb.types.entry(s).or_default().insert(o);
            }
        }
        kb.facts = raw;
        kb
    }

    /// Reads tab-separated `subject property object` lines. `a` abbreviates
    /// rdf:type; quoted or numeric objects are literals; other symbols are
    /// IRIs written as `<iri>` or `prefix:local`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn load(path: &Path, prefixes: &PrefixTable) -> Result<Self> {
        let text = read_file(path)?;
        Self::parse(&text, prefixes).map_err(|(line, msg)| Error::Format {
            path: path.to_owned(),
            line,
            msg,
        })
    }

    pub fn parse(text: &str, prefixes: &PrefixTable) -> std::result::Result<Self, (usize, String)> {
        let mut facts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [s, p, o] = cols[..] else {
                return Err((i + 1, format!("expected 3 tab-separated columns, found {}", cols.len())));
            };
            if s.is_empty() || p.is_empty() || o.is_empty() {
                return Err((i + 1, "empty column".to_owned()));
            }
            if s.starts_with('"') {
                return Err((i + 1, "literal in subject position".to_owned()));
            }
            let subject = Node::Iri(prefixes.expand_symbol(s));
            let property = Node::Iri(if p == "a" { RDF_TYPE.to_owned() } else { prefixes.expand_symbol(p) });
            let object = if let Some(lit) = o.strip_prefix('"') {
                let end = lit.rfind('"').ok_or((i + 1, "unterminated literal".to_owned()))?;
                Node::Literal(lit[..end].to_owned())
            } else if parse_number(o).is_some() {
                Node::Literal(o.to_owned())
            } else {
                Node::Iri(prefixes.expand_symbol(o))
            };
            facts.push((subject, property, object));
        }
        Ok(Self::from_facts(facts))
    }

    pub fn with_schema(mut self, schema: Schema) -> Self {
        self.schema = schema;
        self
    }

    fn intern(&mut self, node: Node) -> SymbolId {
        if let Some(&id) = self.index.get(&node) {
            return id;
        }
        let id = self.nodes.len() as SymbolId;
        self.nodes.push(node.clone());
        self.index.insert(node, id);
        id
    }

    pub fn fact_count(&self) -> usize {
        self.facts.len()
    }

    pub fn facts(&self) -> impl Iterator<Item = (&Node, &Node, &Node)> + '_ {
        self.facts.iter().map(|&(s, p, o)| (self.node(s), self.node(p), self.node(o)))
    }

    pub fn node(&self, id: SymbolId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn lookup_iri(&self, iri: &str) -> Option<SymbolId> {
        self.index.get(&Node::Iri(iri.to_owned())).copied()
    }

    pub fn lookup_literal(&self, lexical: &str) -> Option<SymbolId> {
        self.index.get(&Node::Literal(lexical.to_owned())).copied()
    }

    pub fn rdf_type(&self) -> Option<SymbolId> {
        self.rdf_type
    }

    pub(crate) fn pairs_of(&self, p: SymbolId) -> &[(SymbolId, SymbolId)] {
        self.by_property.get(&p).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn objects_of(&self, s: SymbolId, p: SymbolId) -> &[SymbolId] {
        self.by_subject.get(&(s, p)).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn subjects_of(&self, o: SymbolId, p: SymbolId) -> &[SymbolId] {
        self.by_object.get(&(o, p)).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn has_fact(&self, s: SymbolId, p: SymbolId, o: SymbolId) -> bool {
        self.facts.binary_search(&(s, p, o)).is_ok()
    }

    /// Direct classes of an IRI (from rdf:type facts).
    pub fn types_of(&self, iri: &str) -> BTreeSet<&str> {
        self.lookup_iri(iri)
            .and_then(|id| self.types.get(&id))
            .map(|set| set.iter().map(|&c| self.node(c).text()).collect())
            .unwrap_or_default()
    }

    /// IRIs used as properties, rdf:type excluded.
    pub fn properties(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .by_property
            .keys()
            .filter(|&&p| Some(p) != self.rdf_type)
            .map(|&p| self.node(p).text())
            .collect();
        out.sort_unstable();
        out
    }

    /// IRIs used as objects of rdf:type.
    pub fn classes(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self
            .types
            .values()
            .flat_map(|cs| cs.iter().map(|&c| self.node(c).text()))
            .collect();
        set.into_iter().collect()
    }

    /// IRIs in subject or object position that are neither classes nor properties.
    pub fn entities(&self) -> Vec<&str> {
        let classes: BTreeSet<&str> = self.classes().into_iter().collect();
        let mut set = BTreeSet::new();
        for &(s, p, o) in &self.facts {
            set.insert(s);
            if Some(p) != self.rdf_type {
                set.insert(o);
            }
        }
        set.into_iter()
            .filter_map(|id| match self.node(id) {
                Node::Iri(s) if !classes.contains(s.as_str()) => Some(s.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn literals(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Literal(l) => Some(l.as_str()),
                Node::Iri(_) => None,
            })
            .collect();
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_tsv_with_types_and_duplicates() {
        let text = "# films\n:Jaws\t:director\t:Spielberg\n:Jaws\ta\t:Film\n:Jaws\t:runtime\t124\n:Jaws\t:title\t\"Jaws\"\n:Jaws\t:director\t:Spielberg\n";
        let kb = KnowledgeBase::parse(text, &PrefixTable::default()).unwrap();
        assert_eq!(kb.fact_count(), 4);
        assert_eq!(kb.types_of("http://example.org/Jaws").into_iter().collect::<Vec<_>>(), ["http://example.org/Film"]);
        assert_eq!(kb.classes(), ["http://example.org/Film"]);
        assert!(kb.lookup_literal("124").is_some());
        assert!(kb.lookup_literal("Jaws").is_some());
        assert_eq!(kb.entities(), ["http://example.org/Jaws", "http://example.org/Spielberg"]);
    }

    #[test]
    fn reports_line_numbers() {
        let err = KnowledgeBase::parse(":a\t:b\t:c\n:a :b :c\n", &PrefixTable::default()).unwrap_err();
        assert_eq!(err.0, 2);
    }
}
