//! Building unseen query structures by merging frequent substructures.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    canonical_key, structure_of, EdgeLabel, QueryForm, QueryGraph, StructureKey, Term, Triple, Vertex,
    VertexId, VertexKind,
};
use crate::ranker::{rank_order, Provenance, ScoredStructure, Scorer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Merge rounds.
    pub k: usize,
    /// Score threshold for keeping a structure.
    pub theta: f64,
    /// Maximum triples.
    pub tau: usize,
    /// Maximum aggregation built-ins.
    pub delta: usize,
    /// Count MAXATN/MINATN towards `delta`.
    pub delta_counts_ordering: bool,
    /// Vertex pairs unified in one merge.
    pub max_vertex_unifications: usize,
    /// User-label pairs unified in one merge.
    pub max_label_unifications: usize,
    /// Members kept per round, best first.
    pub max_members: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            k: 2,
            theta: 0.3,
            tau: 5,
            delta: 2,
            delta_counts_ordering: true,
            max_vertex_unifications: 2,
            max_label_unifications: 1,
            max_members: 200,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.tau == 0 || !(0.0..=1.0).contains(&self.theta) || self.max_members == 0 {
            return Err(Error::Config(format!(
                "merge config needs K >= 1, 0 <= theta <= 1, tau >= 1 and a positive member cap (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Connected, at most `tau` triples, at most `delta` aggregations.
    pub fn admits(&self, g: &QueryGraph) -> bool {
        g.triple_count() <= self.tau && g.aggregation_count(self.delta_counts_ordering) <= self.delta && g.is_connected()
    }
}

/// All merges of `a` and `b` with up to two vertex unifications and one
/// label unification, the disjoint union included. Results are canonical
/// representatives without a target, one per structure.
pub fn merge_pair(a: &QueryGraph, b: &QueryGraph) -> Vec<QueryGraph> {
    merge_pair_with(a, b, 2, 1, |_| true)
}

/// [`merge_pair`] with explicit caps and a filter applied before
/// canonicalization.
pub fn merge_pair_with(
    a: &QueryGraph,
    b: &QueryGraph,
    max_vertex: usize,
    max_label: usize,
    keep: impl Fn(&QueryGraph) -> bool,
) -> Vec<QueryGraph> {
    let na = a.vertex_count();
    let (b_vertices, b_triples) = shift_slots(a, b);

    let unifiable = |v: &Vertex, g: &QueryGraph, id: VertexId| {
        v.kind != VertexKind::AggregateResult && g.order_rank(id).is_none()
    };
    let mut vertex_pairs = Vec::new();
    for va in 0..na {
        for vb in 0..b.vertex_count() {
            let (x, y) = (a.vertex(va), b.vertex(vb));
            if x.kind == y.kind && unifiable(x, a, va) && unifiable(y, b, vb) {
                vertex_pairs.push((va, vb));
            }
        }
    }
    let labels_a = user_labels(&a.triples().iter().collect::<Vec<_>>());
    let labels_b = user_labels(&b_triples.iter().collect::<Vec<_>>());
    let mut label_pairs = Vec::new();
    for la in &labels_a {
        for lb in &labels_b {
            label_pairs.push((la.clone(), lb.clone()));
        }
    }

    let mut out: BTreeMap<StructureKey, QueryGraph> = BTreeMap::new();
    for vsel in injective_subsets(&vertex_pairs, max_vertex) {
        for lsel in injective_subsets(&label_pairs, max_label) {
            let mut vmap: Vec<VertexId> = Vec::with_capacity(b.vertex_count());
            let mut vertices = a.vertices().to_vec();
            for (vb, vx) in b_vertices.iter().enumerate() {
                match vsel.iter().find(|&&(_, y)| y == vb) {
                    Some(&(va, _)) => vmap.push(va),
                    None => {
                        vmap.push(vertices.len());
                        vertices.push(vx.clone());
                    }
                }
            }
            let mut triples = a.triples().to_vec();
            for t in &b_triples {
                let label = match &t.label {
                    EdgeLabel::User(term) => match lsel.iter().find(|(_, lb)| lb == term) {
                        Some((la, _)) => EdgeLabel::User(la.clone()),
                        None => t.label.clone(),
                    },
                    other => other.clone(),
                };
                triples.push(Triple::new(vmap[t.subject], label, vmap[t.object]));
            }
            let Ok(g) = QueryGraph::with_form(vertices, triples, None, QueryForm::Select) else {
                continue;
            };
            if !keep(&g) {
                continue;
            }
            let key = canonical_key(&g);
            out.entry(key).or_insert_with(|| structure_of(&g));
        }
    }
    out.into_values().collect()
}

/// Renumbers the placeholders of `b` past those of `a` so that only
/// explicit unification makes them coincide.
fn shift_slots(a: &QueryGraph, b: &QueryGraph) -> (Vec<Vertex>, Vec<Triple>) {
    let mut max_slot: HashMap<VertexKind, u32> = HashMap::new();
    for v in a.vertices() {
        if let Some(Term::Slot(i)) = v.surface {
            let m = max_slot.entry(v.kind).or_insert(0);
            *m = (*m).max(i);
        }
    }
    let max_label = a
        .triples()
        .iter()
        .filter_map(|t| match t.label {
            EdgeLabel::User(Term::Slot(i)) => Some(i),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let vertices = b
        .vertices()
        .iter()
        .map(|v| match v.surface {
            Some(Term::Slot(i)) => Vertex::slot(v.kind, i + max_slot.get(&v.kind).copied().unwrap_or(0)),
            _ => v.clone(),
        })
        .collect();
    let triples = b
        .triples()
        .iter()
        .map(|t| match t.label {
            EdgeLabel::User(Term::Slot(i)) => {
                Triple::new(t.subject, EdgeLabel::User(Term::Slot(i + max_label)), t.object)
            }
            _ => t.clone(),
        })
        .collect();
    (vertices, triples)
}

fn user_labels(triples: &[&Triple]) -> Vec<Term> {
    let set: BTreeSet<&Term> = triples
        .iter()
        .filter_map(|t| match &t.label {
            EdgeLabel::User(term) => Some(term),
            _ => None,
        })
        .collect();
    set.into_iter().cloned().collect()
}

/// Subsets of at most `max` pairs whose left and right members are all distinct.
fn injective_subsets<A: PartialEq + Clone, B: PartialEq + Clone>(pairs: &[(A, B)], max: usize) -> Vec<Vec<(A, B)>> {
    let mut out = vec![Vec::new()];
    let mut current = Vec::new();
    fn rec<A: PartialEq + Clone, B: PartialEq + Clone>(
        pairs: &[(A, B)],
        start: usize,
        max: usize,
        current: &mut Vec<(A, B)>,
        out: &mut Vec<Vec<(A, B)>>,
    ) {
        if current.len() == max {
            return;
        }
        for i in start..pairs.len() {
            let (x, y) = &pairs[i];
            if current.iter().any(|(a, b)| a == x || b == y) {
                continue;
            }
            current.push(pairs[i].clone());
            out.push(current.clone());
            rec(pairs, i + 1, max, current, out);
            current.pop();
        }
    }
    rec(pairs, 0, max, &mut current, &mut out);
    out
}

/// The merge rounds M(0)..M(K) for one question.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MergeTrace {
    pub rounds: Vec<Vec<ScoredStructure>>,
}

impl MergeTrace {
    /// Union of all rounds, deduplicated and ranked.
    pub fn union(&self) -> Vec<ScoredStructure> {
        crate::ranker::combine(self.rounds.iter().cloned())
    }
}

/// Pair keys plus the config fields that shape a merge.
type CacheKey = (String, String, [usize; 4], bool);

/// Memoizes merges of structure pairs across questions.
#[derive(Debug, Default)]
pub struct MergeCache {
    pairs: Mutex<HashMap<CacheKey, std::sync::Arc<Vec<QueryGraph>>>>,
}

impl MergeCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn merge(
        &self,
        a: &ScoredStructure,
        b: &ScoredStructure,
        cfg: &MergeConfig,
    ) -> std::sync::Arc<Vec<QueryGraph>> {
        let id = (
            a.key.canonical.clone(),
            b.key.canonical.clone(),
            [cfg.max_vertex_unifications, cfg.max_label_unifications, cfg.tau, cfg.delta],
            cfg.delta_counts_ordering,
        );
        if let Some(hit) = self.pairs.lock().unwrap().get(&id) {
            return hit.clone();
        }
        let merged = std::sync::Arc::new(merge_pair_with(
            &a.representative,
            &b.representative,
            cfg.max_vertex_unifications,
            cfg.max_label_unifications,
            |g| cfg.admits(g),
        ));
        self.pairs.lock().unwrap().insert(id, merged.clone());
        merged
    }
}

/// Iterative merging: M(0) holds the admissible frequent substructures
/// scoring above theta; round i merges every substructure with probability
/// above 0.5 into every member of M(i-1) and keeps admissible results
/// scoring above theta.
pub fn merge_substructures(scorer: &Scorer<'_>, cfg: &MergeConfig, cache: &MergeCache) -> Result<MergeTrace> {
    cfg.validate()?;
    let catalog = scorer.catalog();
    let as_scored = |key: StructureKey, representative: QueryGraph, score: f64| ScoredStructure {
        key,
        representative,
        score,
        provenance: Provenance::Merged,
        count: 0,
    };
    let frequent: Vec<ScoredStructure> = catalog
        .frequent_entries()
        .map(|e| {
            let rep = e.representative.with_target(None).expect("dropping the target keeps validity");
            as_scored(e.key.clone(), rep.clone(), scorer.score(&rep))
        })
        .collect();
    let plus: Vec<&ScoredStructure> =
        frequent.iter().zip(scorer.probabilities()).filter(|(_, &p)| p > 0.5).map(|(s, _)| s).collect();
    let mut m0: Vec<ScoredStructure> =
        frequent.iter().filter(|s| s.score > cfg.theta && cfg.admits(&s.representative)).cloned().collect();
    m0.sort_by(rank_order);
    m0.truncate(cfg.max_members);

    let mut trace = MergeTrace { rounds: vec![m0] };
    for _ in 0..cfg.k {
        let prev = trace.rounds.last().unwrap();
        if prev.is_empty() || plus.is_empty() {
            break;
        }
        let tasks: Vec<(&ScoredStructure, &ScoredStructure)> =
            plus.iter().flat_map(|s| prev.iter().map(move |m| (*s, m))).collect();
        let found: Vec<Vec<ScoredStructure>> = tasks
            .par_iter()
            .map(|(s, m)| {
                cache
                    .merge(s, m, cfg)
                    .iter()
                    .filter_map(|g| {
                        let score = scorer.score(g);
                        (score > cfg.theta).then(|| as_scored(canonical_key(g), g.clone(), score))
                    })
                    .collect()
            })
            .collect();
        let mut round = crate::ranker::combine(found);
        round.truncate(cfg.max_members);
        trace.rounds.push(round);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{is_substructure, parse_query};

    fn s(q: &str) -> QueryGraph {
        structure_of(&parse_query(q).unwrap()).with_target(None).unwrap()
    }

    #[test]
    fn count_isa_with_user_triple() {
        let a = s("SELECT (COUNT(?x) AS ?c) WHERE { ?x a %Class1 }");
        let b = s("SELECT ?x WHERE { ?x %Prop1 %Ent1 }");
        let merged = merge_pair(&a, &b);
        let want = s("SELECT (COUNT(?x) AS ?c) WHERE { ?x a %Class1 . ?x %Prop1 %Ent1 }");
        assert!(merged.iter().any(|g| canonical_key(g) == canonical_key(&want)));
        for g in &merged {
            assert!(is_substructure(&a, g) && is_substructure(&b, g));
        }
    }

    #[test]
    fn nothing_to_unify() {
        let a = s("SELECT ?c WHERE { ?x <urn:qgen:builtin#count> ?c }");
        let b = s("ASK WHERE { %Ent1 a %Class1 }");
        let merged = merge_pair(&a, &b);
        assert_eq!(merged.len(), 1);
        assert!(!merged[0].is_connected());
    }

    #[test]
    fn subsets_are_injective() {
        let pairs = [(0, 0), (0, 1), (1, 0), (1, 1)];
        let subs = injective_subsets(&pairs, 2);
        // Empty, four singletons, two perfect matchings.
        assert_eq!(subs.len(), 7);
    }
}
