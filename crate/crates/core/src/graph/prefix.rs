use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Namespace of the pseudo-predicates used to write built-in triples that
/// have no SELECT/ORDER BY rendering (e.g. two MAXATN constraints).
pub const BUILTIN_NS: &str = "urn:qgen:builtin#";
pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";

/// Prefix name -> namespace IRI. Symbols are stored expanded; the table is
/// used to expand prefixed names on input and to compact IRIs on output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrefixTable {
    entries: BTreeMap<String, String>,
}

impl Default for PrefixTable {
    fn default() -> Self {
        let entries = [
            ("", "http://example.org/"),
            ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
            ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
            ("xsd", "http://www.w3.org/2001/XMLSchema#"),
            ("owl", "http://www.w3.org/2002/07/owl#"),
            ("foaf", "http://xmlns.com/foaf/0.1/"),
            ("dbo", "http://dbpedia.org/ontology/"),
            ("dbr", "http://dbpedia.org/resource/"),
            ("dbp", "http://dbpedia.org/property/"),
            ("qg", BUILTIN_NS),
        ]
        .into_iter()
        .map(|(p, ns)| (p.to_owned(), ns.to_owned()))
        .collect();
        PrefixTable { entries }
    }
}

impl PrefixTable {
    pub fn empty() -> Self {
        PrefixTable { entries: BTreeMap::new() }
    }

    /// Loads `{"prefix": "namespace", ...}` and layers it over the defaults.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let extra: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let mut table = PrefixTable::default();
        table.entries.extend(extra);
        Ok(table)
    }

    pub fn insert(&mut self, prefix: impl Into<String>, namespace: impl Into<String>) {
        self.entries.insert(prefix.into(), namespace.into());
    }

    pub fn namespace(&self, prefix: &str) -> Option<&str> {
        self.entries.get(prefix).map(String::as_str)
    }

    /// Expands `prefix:local`; `None` if the prefix is unknown.
    pub fn expand(&self, pname: &str) -> Option<String> {
        let (prefix, local) = pname.split_once(':')?;
        self.namespace(prefix).map(|ns| format!("{ns}{local}"))
    }

    /// Expands a symbol written in a data file: `<iri>`, `prefix:local`, or
    /// anything else verbatim.
    pub fn expand_symbol(&self, raw: &str) -> String {
        if let Some(inner) = raw.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
            return inner.to_owned();
        }
        if !raw.contains("://") {
            if let Some(full) = self.expand(raw) {
                return full;
            }
        }
        raw.to_owned()
    }

    /// Shortest prefixed form of `iri`, or `<iri>` when none applies.
    pub fn compact(&self, iri: &str) -> String {
        let mut best: Option<(usize, String)> = None;
        for (prefix, ns) in &self.entries {
            if let Some(local) = iri.strip_prefix(ns.as_str()) {
                if is_local_name(local) && best.as_ref().is_none_or(|(len, _)| ns.len() > *len) {
                    best = Some((ns.len(), format!("{prefix}:{local}")));
                }
            }
        }
        best.map(|(_, s)| s).unwrap_or_else(|| format!("<{iri}>"))
    }
}

fn is_local_name(s: &str) -> bool {
    !s.is_empty()
        && !s.ends_with('.')
        && s.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expand_and_compact() {
        let t = PrefixTable::default();
        assert_eq!(t.expand("dbo:Film").unwrap(), "http://dbpedia.org/ontology/Film");
        assert_eq!(t.compact("http://dbpedia.org/ontology/Film"), "dbo:Film");
        assert_eq!(t.compact("http://other.org/x(y)"), "<http://other.org/x(y)>");
        assert_eq!(t.expand_symbol(":T_Burton"), "http://example.org/T_Burton");
        assert_eq!(t.expand_symbol("<http://a/b>"), "http://a/b");
        assert!(t.expand("nope:x").is_none());
    }
}
