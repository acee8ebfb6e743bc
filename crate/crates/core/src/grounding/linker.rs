//! Linking candidates: the file format, gold and dictionary linkers, and
//! distractor injection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};
use crate::graph::{EdgeLabel, PrefixTable, QueryGraph, Term, VertexKind};
use crate::kb::KnowledgeBase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Entity,
    Property,
    Class,
    Literal,
}

impl LinkKind {
    pub fn of_vertex(kind: VertexKind) -> Option<LinkKind> {
        match kind {
            VertexKind::Entity => Some(LinkKind::Entity),
            VertexKind::Class => Some(LinkKind::Class),
            VertexKind::Literal => Some(LinkKind::Literal),
            VertexKind::Variable | VertexKind::AggregateResult => None,
        }
    }
}

impl std::str::FromStr for LinkKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "entity" | "ent" => Ok(LinkKind::Entity),
            "property" | "prop" | "relation" => Ok(LinkKind::Property),
            "class" => Ok(LinkKind::Class),
            "literal" | "lit" => Ok(LinkKind::Literal),
            other => Err(format!("unknown linking kind {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub symbol: String,
    pub score: f64,
}

/// One question mention with its candidates, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionCandidates {
    pub mention: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
    pub kind: LinkKind,
    pub candidates: Vec<Candidate>,
}

impl MentionCandidates {
    pub fn sort(&mut self) {
        self.candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.symbol.cmp(&b.symbol)));
    }
}

pub type Linking = Vec<MentionCandidates>;

/// Reads a candidates file: a JSON array of mentions.
pub fn load_linking(path: &Path) -> Result<Linking> {
    let mut linking: Linking = serde_json::from_str(&read_file(path)?)?;
    for m in &mut linking {
        if m.candidates.iter().any(|c| !(c.score > 0.0 && c.score <= 1.0)) {
            return Err(Error::Config(format!("{}: candidate scores must lie in (0, 1]", path.display())));
        }
        m.sort();
    }
    Ok(linking)
}

/// Spans of entity mentions, for question preprocessing.
pub fn entity_spans(linking: &Linking) -> Vec<(usize, usize)> {
    linking.iter().filter(|m| m.kind == LinkKind::Entity).filter_map(|m| m.span).collect()
}

/// One mention per distinct symbol of `gold`, with that symbol as its only
/// candidate (score 1). MAXATN/MINATN ranks are part of the structure and
/// are not linked.
pub fn gold_linking(gold: &QueryGraph) -> Linking {
    let mut symbols: BTreeSet<(LinkKind, String)> = BTreeSet::new();
    for (id, v) in gold.vertices().iter().enumerate() {
        if gold.order_rank(id).is_some() {
            continue;
        }
        if let (Some(kind), Some(Term::Const(s))) = (LinkKind::of_vertex(v.kind), &v.surface) {
            symbols.insert((kind, s.clone()));
        }
    }
    for t in gold.triples() {
        if let EdgeLabel::User(Term::Const(s)) = &t.label {
            symbols.insert((LinkKind::Property, s.clone()));
        }
    }
    symbols
        .into_iter()
        .map(|(kind, symbol)| MentionCandidates {
            mention: symbol.clone(),
            span: None,
            kind,
            candidates: vec![Candidate { symbol, score: 1.0 }],
        })
        .collect()
}

/// Adds the `n` KB symbols of the same kind whose local names are most
/// similar to the mention's best candidate, as a linker's near misses
/// would be. Each is scored `factor` times the best score; `rng` breaks
/// similarity ties.
pub fn add_distractors(linking: &Linking, kb: &KnowledgeBase, n: usize, factor: f64, rng: &mut impl Rng) -> Linking {
    let pools: BTreeMap<LinkKind, Vec<&str>> = [
        (LinkKind::Entity, kb.entities()),
        (LinkKind::Property, kb.properties()),
        (LinkKind::Class, kb.classes()),
        (LinkKind::Literal, kb.literals()),
    ]
    .into_iter()
    .collect();
    linking
        .iter()
        .map(|m| {
            let mut out = m.clone();
            let Some(best) = m.candidates.first() else { return out };
            let taken: BTreeSet<&str> = m.candidates.iter().map(|c| c.symbol.as_str()).collect();
            let target = local_name(&best.symbol).to_lowercase();
            let mut pool: Vec<(f64, &str)> = pools[&m.kind]
                .iter()
                .filter(|s| !taken.contains(*s))
                .map(|s| (strsim::jaro_winkler(&target, &local_name(s).to_lowercase()), *s))
                .collect();
            pool.shuffle(rng);
            pool.sort_by(|a, b| b.0.total_cmp(&a.0));
            for (_, s) in pool.into_iter().take(n) {
                out.candidates.push(Candidate { symbol: s.to_owned(), score: best.score * factor });
            }
            out.sort();
            out
        })
        .collect()
}

fn local_name(symbol: &str) -> &str {
    symbol.rsplit(['/', '#', ':']).next().unwrap_or(symbol)
}

/// Exact-match dictionary linker over a gazetteer of
/// `surface<TAB>kind<TAB>symbol[<TAB>score]` lines. Numbers and quoted
/// strings in the question become literal mentions.
#[derive(Clone, Debug)]
pub struct Gazetteer {
    entries: BTreeMap<String, Vec<(LinkKind, Candidate)>>,
    number: Regex,
    quoted: Regex,
}

impl Gazetteer {
    pub fn load(path: &Path, prefixes: &PrefixTable) -> Result<Gazetteer> {
        Self::parse(&read_file(path)?, prefixes).map_err(|(line, msg)| Error::Format { path: path.to_owned(), line, msg })
    }

    pub fn parse(text: &str, prefixes: &PrefixTable) -> std::result::Result<Gazetteer, (usize, String)> {
        let mut entries: BTreeMap<String, Vec<(LinkKind, Candidate)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() < 3 || cols.len() > 4 {
                return Err((i + 1, "expected surface, kind, symbol and an optional score".into()));
            }
            let kind: LinkKind = cols[1].parse().map_err(|e| (i + 1, e))?;
            let score = match cols.get(3) {
                Some(s) => s.parse::<f64>().ok().filter(|x| *x > 0.0 && *x <= 1.0).ok_or((i + 1, format!("bad score {s:?}")))?,
                None => 1.0,
            };
            let symbol = match kind {
                LinkKind::Literal => cols[2].trim_matches('"').to_owned(),
                _ => prefixes.expand_symbol(cols[2]),
            };
            entries.entry(cols[0].to_lowercase()).or_default().push((kind, Candidate { symbol, score }));
        }
        Ok(Gazetteer {
            entries,
            number: Regex::new(r"\b\d+(?:\.\d+)?\b").unwrap(),
            quoted: Regex::new(r#""([^"]+)""#).unwrap(),
        })
    }

    /// Longest surfaces match first; matches must sit on word boundaries and
    /// may not overlap.
    pub fn link(&self, question: &str) -> Linking {
        let lower = question.to_lowercase();
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let overlaps = |taken: &[(usize, usize)], s: usize, e: usize| taken.iter().any(|&(a, b)| s < b && a < e);
        let mut surfaces: Vec<&String> = self.entries.keys().collect();
        surfaces.sort_by_key(|s| std::cmp::Reverse(s.len()));
        let mut out: Linking = Vec::new();
        // Lowercasing can change byte offsets; only match when it does not.
        let aligned = lower.len() == question.len();
        for surface in surfaces {
            if !aligned || surface.is_empty() {
                break;
            }
            for (s, _) in lower.match_indices(surface.as_str()) {
                let e = s + surface.len();
                let before = lower[..s].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
                let after = lower[e..].chars().next().is_none_or(|c| !c.is_alphanumeric());
                if !(before && after) || overlaps(&taken, s, e) {
                    continue;
                }
                taken.push((s, e));
                let mut by_kind: BTreeMap<LinkKind, Vec<Candidate>> = BTreeMap::new();
                for (kind, c) in &self.entries[surface] {
                    by_kind.entry(*kind).or_default().push(c.clone());
                }
                for (kind, candidates) in by_kind {
                    let mut m = MentionCandidates {
                        mention: question[s..e].to_owned(),
                        span: Some((s, e)),
                        kind,
                        candidates,
                    };
                    m.sort();
                    out.push(m);
                }
            }
        }
        let literal = |text: &str, s: usize, e: usize| MentionCandidates {
            mention: question[s..e].to_owned(),
            span: Some((s, e)),
            kind: LinkKind::Literal,
            candidates: vec![Candidate { symbol: text.to_owned(), score: 1.0 }],
        };
        for c in self.quoted.captures_iter(question) {
            let (whole, inner) = (c.get(0).unwrap(), c.get(1).unwrap());
            if !overlaps(&taken, whole.start(), whole.end()) {
                taken.push((whole.start(), whole.end()));
                out.push(literal(inner.as_str(), whole.start(), whole.end()));
            }
        }
        for m in self.number.find_iter(question) {
            if !overlaps(&taken, m.start(), m.end()) {
                taken.push((m.start(), m.end()));
                out.push(literal(m.as_str(), m.start(), m.end()));
            }
        }
        out.sort_by_key(|m| (m.span, m.kind));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_query;
    use rand::SeedableRng;

    #[test]
    fn gold_linking_skips_ranks() {
        let q = parse_query(
            "SELECT ?x WHERE { ?x a <C> . ?x <p> <E> . ?x <h> ?h } ORDER BY DESC(?h) LIMIT 1 OFFSET 1",
        )
        .unwrap();
        let kinds: Vec<LinkKind> = gold_linking(&q).iter().map(|m| m.kind).collect();
        assert_eq!(kinds, [LinkKind::Entity, LinkKind::Property, LinkKind::Property, LinkKind::Class]);
    }

    #[test]
    fn dictionary_matches_words_and_literals() {
        let g = Gazetteer::parse("stanley kubrick\tentity\t:Kubrick\nfilm\tclass\t:Film\nfilms\tclass\t:Film\n", &PrefixTable::default()).unwrap();
        let q = "Which films did Stanley Kubrick make after 1960?";
        let l = g.link(q);
        let mentions: Vec<&str> = l.iter().map(|m| m.mention.as_str()).collect();
        assert_eq!(mentions, ["films", "Stanley Kubrick", "1960"]);
        assert_eq!(l[1].candidates[0].symbol, "http://example.org/Kubrick");
        assert_eq!(entity_spans(&l), vec![(16, 31)]);
    }

    #[test]
    fn distractors_rank_below_gold() {
        let kb = KnowledgeBase::parse(":a\t:p\t:b\n:c\t:p\t:d\n:e\t:q\t:f\n", &PrefixTable::default()).unwrap();
        let gold = gold_linking(&parse_query("SELECT ?x WHERE { ?x :p :b }").unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noisy = add_distractors(&gold, &kb, 4, 0.9, &mut rng);
        let ent = noisy.iter().find(|m| m.kind == LinkKind::Entity).unwrap();
        assert_eq!(ent.candidates.len(), 5);
        assert_eq!(ent.candidates[0].symbol, "http://example.org/b");
        assert!(ent.candidates[1..].iter().all(|c| (c.score - 0.9).abs() < 1e-12));
        let prop = noisy.iter().find(|m| m.kind == LinkKind::Property).unwrap();
        assert_eq!(prop.candidates.len(), 2);
    }
}
