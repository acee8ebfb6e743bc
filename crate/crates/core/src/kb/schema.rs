use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use super::KnowledgeBase;
use crate::error::{read_file, Error, Result};
use crate::graph::{BuiltIn, EdgeLabel, PrefixTable, QueryGraph, Term, VertexId, VertexKind};

const XSD: &str = "http://www.w3.org/2001/XMLSchema#";
const RDFS_LITERAL: &str = "http://www.w3.org/2000/01/rdf-schema#Literal";

/// Declared property domains and ranges plus explicit class disjointness.
#[derive(Clone, Debug, Default)]
pub struct Schema {
    pub domain: HashMap<String, String>,
    pub range: HashMap<String, String>,
    pub disjoint: HashSet<(String, String)>,
}

impl Schema {
    /// Reads lines `domain <prop> <class>`, `range <prop> <class>` and
    /// `disjoint <class> <class>` (whitespace-separated; `#` comments).
    pub fn load(path: &Path, prefixes: &PrefixTable) -> Result<Self> {
        Self::parse(&read_file(path)?, prefixes).map_err(|(line, msg)| Error::Format {
            path: path.to_owned(),
            line,
            msg,
        })
    }

    pub fn parse(text: &str, prefixes: &PrefixTable) -> std::result::Result<Self, (usize, String)> {
        let mut schema = Schema::default();
        for (i, line) in text.lines().enumerate() {
            // `#` starts a comment only at a token boundary, so IRIs keep their fragments.
            let line = if line.trim_start().starts_with('#') {
                ""
            } else {
                line.find(" #").or_else(|| line.find("\t#")).map_or(line, |i| &line[..i]).trim()
            };
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let [kind, a, b] = cols[..] else {
                return Err((i + 1, format!("expected 3 fields, found {}", cols.len())));
            };
            let (a, b) = (prefixes.expand_symbol(a), prefixes.expand_symbol(b));
            match kind {
                "domain" => {
                    schema.domain.insert(a, b);
                }
                "range" => {
                    schema.range.insert(a, b);
                }
                "disjoint" => {
                    schema.disjoint.insert((a, b));
                }
                other => return Err((i + 1, format!("unknown declaration {other:?}"))),
            }
        }
        Ok(schema)
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty() && self.range.is_empty() && self.disjoint.is_empty()
    }

    fn disjoint(&self, a: &str, b: &str) -> bool {
        self.disjoint.contains(&(a.to_owned(), b.to_owned()))
            || self.disjoint.contains(&(b.to_owned(), a.to_owned()))
    }
}

fn is_datatype(class: &str) -> bool {
    class.starts_with(XSD) || class == RDFS_LITERAL
}

#[derive(Default)]
struct Constraint<'a> {
    classes: BTreeSet<&'a str>,
    literal: bool,
}

/// Checks each user-defined triple against the declared domain and range
/// of its property. Entities must carry the declared class among their
/// direct types (entities without types pass); literals satisfy only
/// datatype ranges. Variables collect class constraints, which must stay
/// pairwise non-disjoint and must not mix with a datatype range.
pub fn check_domain_range(q: &QueryGraph, kb: &KnowledgeBase) -> bool {
    let schema = &kb.schema;
    if schema.is_empty() {
        return true;
    }
    let mut vars: HashMap<VertexId, Constraint> = HashMap::new();
    for t in q.triples() {
        match &t.label {
            EdgeLabel::User(Term::Const(p)) => {
                if let Some(d) = schema.domain.get(p) {
                    if !admits(q, kb, t.subject, d, &mut vars) {
                        return false;
                    }
                }
                if let Some(r) = schema.range.get(p) {
                    if !admits(q, kb, t.object, r, &mut vars) {
                        return false;
                    }
                }
            }
            EdgeLabel::BuiltIn(BuiltIn::IsA) => {
                if let Some(c) = q.vertex(t.object).surface.as_ref().and_then(Term::as_const) {
                    if q.vertex(t.subject).kind == VertexKind::Variable && !admits(q, kb, t.subject, c, &mut vars) {
                        return false;
                    }
                }
            }
            _ => {}
        }
    }
    vars.values().all(|c| {
        if c.literal && !c.classes.is_empty() {
            return false;
        }
        let cs: Vec<&str> = c.classes.iter().copied().collect();
        cs.iter().enumerate().all(|(i, a)| cs[i + 1..].iter().all(|b| !schema.disjoint(a, b)))
    })
}

/// Whether vertex `v` may be an instance of `class`; variables record it.
fn admits<'a>(
    q: &'a QueryGraph,
    kb: &KnowledgeBase,
    v: VertexId,
    class: &'a str,
    vars: &mut HashMap<VertexId, Constraint<'a>>,
) -> bool {
    let vx = q.vertex(v);
    match (vx.kind, vx.surface.as_ref().and_then(Term::as_const)) {
        (VertexKind::Variable, _) => {
            let c = vars.entry(v).or_default();
            if is_datatype(class) {
                c.literal = true;
            } else {
                c.classes.insert(class);
            }
            true
        }
        (VertexKind::Literal, _) => is_datatype(class),
        (VertexKind::Entity, Some(iri)) => {
            if is_datatype(class) {
                return false;
            }
            let types = kb.types_of(iri);
            types.is_empty() || types.contains(class)
        }
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_query;

    fn kb() -> KnowledgeBase {
        let p = PrefixTable::default();
        let schema = Schema::parse(
            "domain :director :Film\nrange :director :Person\nrange :runtime xsd:integer\ndisjoint :Film :Person\n",
            &p,
        )
        .unwrap();
        KnowledgeBase::parse(":Jaws\ta\t:Film\n:Spielberg\ta\t:Person\n:Jaws\t:director\t:Spielberg\n", &p)
            .unwrap()
            .with_schema(schema)
    }

    #[test]
    fn entity_against_domain() {
        let q = parse_query("SELECT ?v WHERE { :Spielberg :director ?v }").unwrap();
        assert!(!check_domain_range(&q, &kb()));
        let q = parse_query("SELECT ?v WHERE { :Jaws :director ?v }").unwrap();
        assert!(check_domain_range(&q, &kb()));
    }

    #[test]
    fn undeclared_property_is_vacuous() {
        let q = parse_query("SELECT ?v WHERE { :Spielberg :likes ?v }").unwrap();
        assert!(check_domain_range(&q, &kb()));
        let q = parse_query("SELECT ?v WHERE { :Spielberg :director ?v }").unwrap();
        assert!(check_domain_range(&q, &KnowledgeBase::default()));
    }

    #[test]
    fn disjoint_variable_constraints() {
        // ?v is a Film (domain of director) and a Person (range of director).
        let q = parse_query("SELECT ?v WHERE { ?v :director ?w . ?x :director ?v }").unwrap();
        assert!(!check_domain_range(&q, &kb()));
        let q = parse_query("SELECT ?v WHERE { ?v :director ?w . ?v a :Person }").unwrap();
        assert!(!check_domain_range(&q, &kb()));
    }

    #[test]
    fn datatype_ranges() {
        let q = parse_query("SELECT ?v WHERE { ?v :runtime 124 }").unwrap();
        assert!(check_domain_range(&q, &kb()));
        let q = parse_query("SELECT ?v WHERE { ?v :runtime :Jaws }").unwrap();
        assert!(!check_domain_range(&q, &kb()));
        let q = parse_query("SELECT ?v WHERE { ?x :runtime ?v . ?v a :Film }").unwrap();
        assert!(!check_domain_range(&q, &kb()));
    }
}
