//! Scoring query structures by the joint probability of their
//! substructure containments.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{QueryGraph, StructureKey};
use crate::mining::SubstructureCatalog;

/// Default probability clamp: factors lie in `[CLAMP, 1 - CLAMP]`.
pub const DEFAULT_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Existing,
    Merged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredStructure {
    pub key: StructureKey,
    pub representative: QueryGraph,
    pub score: f64,
    pub provenance: Provenance,
    /// Training queries with this structure (0 for merged structures).
    pub count: usize,
}

/// Per-question scorer holding log Pr and log(1 - Pr) for every member of FS*.
#[derive(Clone, Debug)]
pub struct Scorer<'c> {
    catalog: &'c SubstructureCatalog,
    probs: Vec<f64>,
    log_in: Vec<f64>,
    log_out: Vec<f64>,
}

impl<'c> Scorer<'c> {
    /// `clamp = None` uses the probabilities as given, so exact 0/1 inputs
    /// give exact 0/1 scores.
    pub fn new(
        probs: &BTreeMap<StructureKey, f64>,
        catalog: &'c SubstructureCatalog,
        clamp: Option<f64>,
    ) -> Result<Self> {
        let probs: Vec<f64> = catalog
            .frequent_entries()
            .map(|e| probs.get(&e.key).copied().ok_or_else(|| Error::MissingProbability(e.key.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self::from_vec(probs, catalog, clamp))
    }

    /// Probabilities aligned with FS* in catalog order.
    pub fn from_vec(probs: Vec<f64>, catalog: &'c SubstructureCatalog, clamp: Option<f64>) -> Self {
        assert_eq!(probs.len(), catalog.frequent.len(), "one probability per frequent substructure");
        let clamped: Vec<f64> = probs
            .iter()
            .map(|&p| match clamp {
                Some(eps) => p.clamp(eps, 1.0 - eps),
                None => p.clamp(0.0, 1.0),
            })
            .collect();
        let log_in = clamped.iter().map(|p| p.ln()).collect();
        let log_out = clamped.iter().map(|p| (-p).ln_1p()).collect();
        Scorer { catalog, probs, log_in, log_out }
    }

    pub fn catalog(&self) -> &'c SubstructureCatalog {
        self.catalog
    }

    /// The unclamped probabilities, aligned with FS*.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Score of a containment bit vector over FS*.
    pub fn score_pattern(&self, pattern: &[bool]) -> f64 {
        let log: f64 = pattern
            .iter()
            .enumerate()
            .map(|(j, &c)| if c { self.log_in[j] } else { self.log_out[j] })
            .sum();
        log.exp()
    }

    pub fn score(&self, s: &QueryGraph) -> f64 {
        self.score_pattern(&self.catalog.containment_of(s))
    }
}

/// Joint-probability score of one structure with the default clamp.
pub fn score_structure(
    s: &QueryGraph,
    probs: &BTreeMap<StructureKey, f64>,
    catalog: &SubstructureCatalog,
) -> Result<f64> {
    Ok(Scorer::new(probs, catalog, Some(DEFAULT_CLAMP))?.score(s))
}

/// Total order of ranked lists: score descending, then training count
/// descending, fewer triples, and key.
pub fn rank_order(a: &ScoredStructure, b: &ScoredStructure) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.count.cmp(&a.count))
        .then(a.key.triple_count.cmp(&b.key.triple_count))
        .then_with(|| a.key.cmp(&b.key))
}

/// Scores every structure of TS and sorts by [`rank_order`].
pub fn rank_existing(scorer: &Scorer<'_>) -> Vec<ScoredStructure> {
    let catalog = scorer.catalog;
    let mut out: Vec<ScoredStructure> = catalog
        .structures
        .iter()
        .enumerate()
        .map(|(i, e)| ScoredStructure {
            key: e.key.clone(),
            representative: e.representative.clone(),
            score: scorer.score_pattern(&catalog.containment_row(i)),
            provenance: Provenance::Existing,
            count: e.count,
        })
        .collect();
    out.sort_by(rank_order);
    out
}

/// Union of ranked lists, keeping the first occurrence of each key, sorted
/// by [`rank_order`].
pub fn combine(lists: impl IntoIterator<Item = Vec<ScoredStructure>>) -> Vec<ScoredStructure> {
    let mut seen = std::collections::HashSet::new();
    let mut out: Vec<ScoredStructure> =
        lists.into_iter().flatten().filter(|s| seen.insert(s.key.clone())).collect();
    out.sort_by(rank_order);
    out
}

#[derive(Serialize)]
struct RankLine<'a> {
    rank: usize,
    key: &'a str,
    score: f64,
    provenance: Provenance,
    representative: String,
}

/// One JSON object per line: rank (1-based), key, score, provenance and
/// the representative in text form.
pub fn to_json_lines(ranked: &[ScoredStructure]) -> String {
    let mut out = String::new();
    for (i, s) in ranked.iter().enumerate() {
        let line = RankLine {
            rank: i + 1,
            key: &s.key.canonical,
            score: s.score,
            provenance: s.provenance,
            representative: s.representative.to_string(),
        };
        out.push_str(&serde_json::to_string(&line).expect("rank lines serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_query, structure_of};
    use crate::mining::{mine, TrainingPair};

    fn pair(id: usize, sparql: &str) -> TrainingPair {
        TrainingPair { id: id.to_string(), question: String::new(), query: parse_query(sparql).unwrap(), mentions: vec![] }
    }

    fn catalog() -> SubstructureCatalog {
        let mut pairs = Vec::new();
        for i in 0..3 {
            pairs.push(pair(i, "SELECT ?x WHERE { ?x <p> <e> }"));
            pairs.push(pair(10 + i, "SELECT ?x WHERE { ?x a <C> . ?x <p> <e> }"));
        }
        mine(&pairs, 1).unwrap()
    }

    #[test]
    fn direct_arithmetic() {
        let c = catalog();
        // FS*: the ISA edge, the user edge, and their union.
        assert_eq!(c.frequent.len(), 3);
        let s = structure_of(&parse_query("SELECT ?x WHERE { ?x <p> <e> }").unwrap());
        let pattern = c.containment_of(&s);
        let probs: Vec<f64> = pattern.iter().map(|&b| if b { 0.9 } else { 0.2 }).collect();
        let scorer = Scorer::from_vec(probs, &c, None);
        assert!((scorer.score(&s) - 0.9 * 0.8 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn missing_probability() {
        let c = catalog();
        let err = Scorer::new(&BTreeMap::new(), &c, None).unwrap_err();
        assert!(matches!(err, Error::MissingProbability(_)));
    }

    #[test]
    fn ties_prefer_frequent_structures() {
        let c = catalog();
        let scorer = Scorer::from_vec(vec![0.5; 3], &c, None);
        let ranked = rank_existing(&scorer);
        assert_eq!(ranked.len(), 2);
        assert_eq!(ranked[0].score, ranked[1].score);
        assert!(ranked[0].key.triple_count < ranked[1].key.triple_count);
        assert_eq!(to_json_lines(&ranked).lines().count(), 2);
    }
}
