//! Turning ranked structures into executable queries.
//!
//! Slot assignments are enumerated best-first by the product of candidate
//! scores. Each filled query must pass the grammar check, the domain/range
//! check and return a non-empty answer on the KB.

pub mod linker;

pub use linker::{
    add_distractors, entity_spans, gold_linking, load_linking, Candidate, Gazetteer, LinkKind, Linking,
    MentionCandidates,
};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BuiltIn, QueryForm, QueryGraph, Slot, StructureKey, VertexId, VertexKind};
use crate::kb::{check_domain_range, execute, AnswerSet, KnowledgeBase};
use crate::ranker::ScoredStructure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundConfig {
    /// Results to return.
    pub top_k: usize,
    /// Assignments tried per structure.
    pub budget: usize,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig { top_k: 5, budget: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundingResult {
    pub query: QueryGraph,
    pub structure_key: StructureKey,
    /// 0-based position of the structure in the ranked list.
    pub structure_rank: usize,
    pub structure_score: f64,
    /// Placeholder name (`Ent1`, `Prop2`, ...) to symbol.
    pub assignment: BTreeMap<String, String>,
    pub linking_score: f64,
    pub answers: AnswerSet,
}

/// Grammar check of a grounded query: no placeholders, built-in argument
/// kinds, and a connected graph with a target for SELECT queries.
pub fn validate_grammar(q: &QueryGraph) -> bool {
    q.is_grounded()
        && q.check_grammar().is_ok()
        && q.is_connected()
        && (q.form() == QueryForm::Ask || q.target().is_some())
}

/// One assignment of candidates to the slots of a structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `(mention, candidate)` per slot, in `QueryGraph::slots` order.
    pub choices: Vec<(usize, usize)>,
    pub score: f64,
}

/// Best-first enumeration of slot assignments in non-increasing score
/// order. Assignments that use one mention twice are skipped but count
/// towards `budget`.
pub struct Assignments {
    options: Vec<Vec<(usize, usize, f64)>>,
    heap: BinaryHeap<Node>,
    remaining: usize,
}

struct Node {
    score: f64,
    index: Vec<usize>,
    last: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on score; equal scores pop in lexicographic index order.
        self.score.total_cmp(&other.score).then_with(|| other.index.cmp(&self.index))
    }
}

impl Assignments {
    pub fn new(slots: &[Slot], linking: &Linking, budget: usize) -> Self {
        let options: Vec<Vec<(usize, usize, f64)>> = slots
            .iter()
            .map(|slot| {
                let kind = match slot {
                    Slot::Vertex { kind, .. } => LinkKind::of_vertex(*kind),
                    Slot::Property { .. } => Some(LinkKind::Property),
                };
                let mut opts: Vec<(usize, usize, f64)> = linking
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| Some(m.kind) == kind)
                    .flat_map(|(i, m)| m.candidates.iter().enumerate().map(move |(j, c)| (i, j, c.score)))
                    .collect();
                opts.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
                opts
            })
            .collect();
        let mut heap = BinaryHeap::new();
        if options.iter().all(|o| !o.is_empty()) {
            let index = vec![0; options.len()];
            let score = options.iter().map(|o| o[0].2).product();
            heap.push(Node { score, index, last: 0 });
        }
        Assignments { options, heap, remaining: budget }
    }

    fn score_of(&self, index: &[usize]) -> f64 {
        index.iter().zip(&self.options).map(|(&i, o)| o[i].2).product()
    }
}

impl Iterator for Assignments {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        while self.remaining > 0 {
            let node = self.heap.pop()?;
            self.remaining -= 1;
            for j in node.last..node.index.len() {
                if node.index[j] + 1 < self.options[j].len() {
                    let mut index = node.index.clone();
                    index[j] += 1;
                    let score = self.score_of(&index);
                    self.heap.push(Node { score, index, last: j });
                }
            }
            let choices: Vec<(usize, usize)> =
                node.index.iter().zip(&self.options).map(|(&i, o)| (o[i].0, o[i].1)).collect();
            let mentions: HashSet<usize> = choices.iter().map(|c| c.0).collect();
            if mentions.len() == choices.len() {
                return Some(Assignment { choices, score: node.score });
            }
        }
        None
    }
}

/// Target vertices to try for a structure without one: aggregation
/// results, then variables typed by ISA, then other variables that are not
/// aggregated or ordered, then the rest.
pub fn target_candidates(s: &QueryGraph) -> Vec<Option<VertexId>> {
    if s.target().is_some() {
        return vec![s.target()];
    }
    if s.form() == QueryForm::Ask {
        return vec![None];
    }
    let subject_of = |v: VertexId, pred: &dyn Fn(BuiltIn) -> bool| {
        s.triples().iter().any(|t| t.subject == v && t.label.builtin().is_some_and(pred))
    };
    let mut ranked: Vec<(u8, VertexId)> = (0..s.vertex_count())
        .filter_map(|v| {
            let tier = match s.vertex(v).kind {
                VertexKind::AggregateResult => 0,
                VertexKind::Variable if subject_of(v, &|b| b.is_aggregate() || b.is_ordering()) => 3,
                VertexKind::Variable if subject_of(v, &|b| b == BuiltIn::IsA) => 1,
                VertexKind::Variable => 2,
                _ => return None,
            };
            Some((tier, v))
        })
        .collect();
    ranked.sort_unstable();
    ranked.into_iter().map(|(_, v)| Some(v)).collect()
}

/// Valid groundings of one structure, at most `cfg.top_k`, in enumeration order.
pub fn ground_structure(
    s: &ScoredStructure,
    rank: usize,
    linking: &Linking,
    kb: &KnowledgeBase,
    cfg: &GroundConfig,
) -> Vec<GroundingResult> {
    let structure = &s.representative;
    let slots = structure.slots();
    let targets = target_candidates(structure);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for a in Assignments::new(&slots, linking, cfg.budget) {
        let mut vertex_symbols = BTreeMap::new();
        let mut label_symbols = BTreeMap::new();
        let mut assignment = BTreeMap::new();
        for (slot, &(m, c)) in slots.iter().zip(&a.choices) {
            let symbol = linking[m].candidates[c].symbol.clone();
            match *slot {
                Slot::Vertex { vertex, .. } => vertex_symbols.insert(vertex, symbol.clone()),
                Slot::Property { index } => label_symbols.insert(index, symbol.clone()),
            };
            assignment.insert(slot.name(), symbol);
        }
        let filled = structure.fill(&vertex_symbols, &label_symbols);
        if !seen.insert(filled.to_string()) {
            continue;
        }
        if !check_domain_range(&filled, kb) {
            continue;
        }
        for &t in &targets {
            let Ok(q) = filled.with_target(t) else { continue };
            if !validate_grammar(&q) {
                continue;
            }
            match execute(&q, kb) {
                Ok(answers) if !answers.is_empty() => {
                    out.push(GroundingResult {
                        query: q,
                        structure_key: s.key.clone(),
                        structure_rank: rank,
                        structure_score: s.score,
                        assignment: assignment.clone(),
                        linking_score: a.score,
                        answers,
                    });
                    break;
                }
                Ok(_) => {}
                Err(e) => log::debug!("grounding {filled} failed: {e}"),
            }
        }
        if out.len() >= cfg.top_k {
            break;
        }
    }
    out
}

/// Grounds structures in rank order and returns the first `cfg.top_k`
/// valid queries, ordered by structure rank, then linking score.
/// Structures are evaluated speculatively in parallel chunks and committed
/// in rank order.
pub fn ground(
    ranked: &[ScoredStructure],
    linking: &Linking,
    kb: &KnowledgeBase,
    cfg: &GroundConfig,
) -> Result<Vec<GroundingResult>> {
    let chunk = rayon::current_num_threads().max(1);
    let mut out = Vec::new();
    for (c, structures) in ranked.chunks(chunk).enumerate() {
        let found: Vec<Vec<GroundingResult>> = structures
            .par_iter()
            .enumerate()
            .map(|(i, s)| ground_structure(s, c * chunk + i, linking, kb, cfg))
            .collect();
        for results in found {
            for r in results {
                if out.len() == cfg.top_k {
                    return Ok(out);
                }
                out.push(r);
            }
        }
        if out.len() >= cfg.top_k {
            break;
        }
    }
    if out.is_empty() {
        return Err(Error::NoValidGrounding);
    }
    Ok(out)
}

/// [`validate_grammar`] with the reason for rejection.
pub fn explain_grammar(q: &QueryGraph) -> std::result::Result<(), String> {
    if let Some(slot) = q.slots().first() {
        return Err(format!("placeholder {} is unfilled", slot.name()));
    }
    q.check_grammar()?;
    if !q.is_connected() {
        return Err("query graph is disconnected".into());
    }
    if q.form() == QueryForm::Select && q.target().is_none() {
        return Err("SELECT query without a target".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{canonical_key, parse_query, structure_of, PrefixTable};
    use crate::ranker::Provenance;

    fn kb() -> KnowledgeBase {
        let text = ":a\t:director\t:k\n:b\t:director\t:k\n:a\ta\t:Film\n:b\ta\t:Film\n:k\ta\t:Person\n";
        KnowledgeBase::parse(text, &PrefixTable::default()).unwrap()
    }

    fn scored(q: &str) -> ScoredStructure {
        let g = parse_query(q).unwrap();
        ScoredStructure {
            key: canonical_key(&g),
            representative: structure_of(&g),
            score: 1.0,
            provenance: Provenance::Existing,
            count: 1,
        }
    }

    #[test]
    fn grounds_count_query() {
        let gold = parse_query("SELECT (COUNT(?x) AS ?c) WHERE { ?x a :Film . ?x :director :k }").unwrap();
        let s = scored("SELECT (COUNT(?x) AS ?c) WHERE { ?x a :Film . ?x :director :k }");
        let results = ground(&[s], &gold_linking(&gold), &kb(), &GroundConfig::default()).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].answers.len(), 1);
        assert!(crate::graph::is_equivalent(&results[0].query, &gold));
    }

    #[test]
    fn one_candidate_one_attempt() {
        let gold = parse_query("SELECT ?x WHERE { ?x :director :k }").unwrap();
        let s = scored("SELECT ?x WHERE { ?x :director :k }");
        let linking = gold_linking(&gold);
        assert_eq!(Assignments::new(&s.representative.slots(), &linking, 100).count(), 1);
    }

    #[test]
    fn grammar_rejections() {
        let isa_entity = parse_query("SELECT ?x WHERE { ?x a :Film }").unwrap();
        assert!(validate_grammar(&isa_entity));
        let untargeted = isa_entity.with_target(None).unwrap();
        assert!(!validate_grammar(&untargeted));
        assert!(explain_grammar(&untargeted).is_err());
    }

    #[test]
    fn no_valid_grounding() {
        let gold = parse_query("SELECT ?x WHERE { :k :director ?x }").unwrap();
        let s = scored("SELECT ?x WHERE { :k :director ?x }");
        let err = ground(&[s], &gold_linking(&gold), &kb(), &GroundConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoValidGrounding));
    }
}
