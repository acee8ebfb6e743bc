//! Structural equivalence and the substructure relation by backtracking.
//!
//! Both relations are decided by one embedding search: an injective vertex
//! map preserving kind (and MAXATN/MINATN rank), under which every triple of
//! the pattern lands on a triple of the host, together with an injective map
//! on user-defined labels. Equivalence additionally requires equal vertex,
//! triple and label counts, which forces both maps to be bijections.

use std::collections::{BTreeMap, BTreeSet};

use super::{BuiltIn, EdgeLabel, QueryGraph, Term, VertexId, VertexKind};

/// A pair of maps witnessing `a ≅ b` (or `a ⪯ b`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    /// `vertex_map[v]` is the image of vertex `v` of the pattern graph.
    pub vertex_map: Vec<VertexId>,
    /// Image of every label used by the pattern; built-ins map to themselves.
    pub label_map: Vec<(EdgeLabel, EdgeLabel)>,
}

type Color = (VertexKind, Option<String>);

struct Side<'g> {
    g: &'g QueryGraph,
    colors: Vec<Color>,
    out_deg: Vec<usize>,
    in_deg: Vec<usize>,
    builtin_deg: Vec<[usize; 14]>,
    /// (subject, object) -> number of user-labelled triples on that pair.
    user_pairs: BTreeMap<(VertexId, VertexId), usize>,
    builtin_set: BTreeSet<(VertexId, BuiltIn, VertexId)>,
}

impl<'g> Side<'g> {
    fn new(g: &'g QueryGraph) -> Self {
        let n = g.vertex_count();
        let mut out_deg = vec![0; n];
        let mut in_deg = vec![0; n];
        let mut builtin_deg = vec![[0usize; 14]; n];
        let mut user_pairs = BTreeMap::new();
        let mut builtin_set = BTreeSet::new();
        for t in g.triples() {
            out_deg[t.subject] += 1;
            in_deg[t.object] += 1;
            match &t.label {
                EdgeLabel::BuiltIn(b) => {
                    builtin_deg[t.subject][b.code() as usize] += 1;
                    builtin_deg[t.object][7 + b.code() as usize] += 1;
                    builtin_set.insert((t.subject, *b, t.object));
                }
                EdgeLabel::User(_) => *user_pairs.entry((t.subject, t.object)).or_insert(0) += 1,
            }
        }
        Side { g, colors: g.vertex_colors(), out_deg, in_deg, builtin_deg, user_pairs, builtin_set }
    }

    fn label_pairs(&self) -> BTreeMap<&'g Term, BTreeSet<(VertexId, VertexId)>> {
        let mut m: BTreeMap<&Term, BTreeSet<(VertexId, VertexId)>> = BTreeMap::new();
        for t in self.g.triples() {
            if let EdgeLabel::User(term) = &t.label {
                m.entry(term).or_default().insert((t.subject, t.object));
            }
        }
        m
    }
}

struct Search<'a, 'g> {
    pat: &'a Side<'g>,
    host: &'a Side<'g>,
    exact: bool,
    order: Vec<VertexId>,
    map: Vec<Option<VertexId>>,
    used: Vec<bool>,
}

impl Search<'_, '_> {
    fn compatible(&self, v: VertexId, w: VertexId) -> bool {
        let (p, h) = (self.pat, self.host);
        if p.colors[v] != h.colors[w] || self.used[w] {
            return false;
        }
        if self.exact {
            p.out_deg[v] == h.out_deg[w]
                && p.in_deg[v] == h.in_deg[w]
                && p.builtin_deg[v] == h.builtin_deg[w]
        } else {
            p.out_deg[v] <= h.out_deg[w]
                && p.in_deg[v] <= h.in_deg[w]
                && p.builtin_deg[v].iter().zip(&h.builtin_deg[w]).all(|(x, y)| x <= y)
        }
    }

    /// Checks every pattern triple whose endpoints are both mapped and touch `v`.
    fn consistent(&self, v: VertexId) -> bool {
        for t in self.pat.g.triples() {
            if t.subject != v && t.object != v {
                continue;
            }
            let (Some(s), Some(o)) = (self.map[t.subject], self.map[t.object]) else {
                continue;
            };
            match &t.label {
                EdgeLabel::BuiltIn(b) => {
                    if !self.host.builtin_set.contains(&(s, *b, o)) {
                        return false;
                    }
                }
                EdgeLabel::User(_) => {
                    let need = self.pat.user_pairs[&(t.subject, t.object)];
                    let have = self.host.user_pairs.get(&(s, o)).copied().unwrap_or(0);
                    if (self.exact && need != have) || need > have {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn run(&mut self, depth: usize) -> Option<Witness> {
        if depth == self.order.len() {
            return self.labels();
        }
        let v = self.order[depth];
        for w in 0..self.host.g.vertex_count() {
            if !self.compatible(v, w) {
                continue;
            }
            self.map[v] = Some(w);
            self.used[w] = true;
            if self.consistent(v) {
                if let Some(found) = self.run(depth + 1) {
                    return Some(found);
                }
            }
            self.map[v] = None;
            self.used[w] = false;
        }
        None
    }

    /// With the vertex map fixed, find an injective label map such that
    /// every user triple of the pattern has an image in the host.
    fn labels(&self) -> Option<Witness> {
        let vmap: Vec<VertexId> = self.map.iter().map(|m| m.unwrap()).collect();
        let pat_labels: Vec<(&Term, BTreeSet<(VertexId, VertexId)>)> = self
            .pat
            .label_pairs()
            .into_iter()
            .map(|(l, pairs)| (l, pairs.into_iter().map(|(s, o)| (vmap[s], vmap[o])).collect()))
            .collect();
        let host_labels: Vec<(&Term, BTreeSet<(VertexId, VertexId)>)> =
            self.host.label_pairs().into_iter().collect();
        let candidates: Vec<Vec<usize>> = pat_labels
            .iter()
            .map(|(_, need)| {
                (0..host_labels.len())
                    .filter(|&m| {
                        let have = &host_labels[m].1;
                        if self.exact {
                            need == have
                        } else {
                            need.is_subset(have)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut chosen = vec![usize::MAX; pat_labels.len()];
        let mut taken = vec![false; host_labels.len()];
        if !assign_labels(&candidates, 0, &mut chosen, &mut taken) {
            return None;
        }
        let mut label_map: Vec<(EdgeLabel, EdgeLabel)> = pat_labels
            .iter()
            .zip(&chosen)
            .map(|((l, _), &m)| {
                (EdgeLabel::User((*l).clone()), EdgeLabel::User(host_labels[m].0.clone()))
            })
            .collect();
        let builtins: BTreeSet<BuiltIn> =
            self.pat.g.triples().iter().filter_map(|t| t.label.builtin()).collect();
        label_map.extend(builtins.into_iter().map(|b| (EdgeLabel::BuiltIn(b), EdgeLabel::BuiltIn(b))));
        Some(Witness { vertex_map: vmap, label_map })
    }
}

fn assign_labels(
    candidates: &[Vec<usize>],
    i: usize,
    chosen: &mut [usize],
    taken: &mut [bool],
) -> bool {
    if i == candidates.len() {
        return true;
    }
    for &m in &candidates[i] {
        if taken[m] {
            continue;
        }
        taken[m] = true;
        chosen[i] = m;
        if assign_labels(candidates, i + 1, chosen, taken) {
            return true;
        }
        taken[m] = false;
    }
    false
}

/// Vertex visiting order: most constrained first, then grow along triples so
/// each new vertex is adjacent to an already-mapped one whenever possible.
fn search_order(g: &QueryGraph) -> Vec<VertexId> {
    let n = g.vertex_count();
    let mut degree = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    for t in g.triples() {
        degree[t.subject] += 1;
        degree[t.object] += 1;
        adj[t.subject].push(t.object);
        adj[t.object].push(t.subject);
    }
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    while order.len() < n {
        let start = (0..n)
            .filter(|&v| !placed[v])
            .max_by_key(|&v| (!g.vertex(v).kind.is_variable(), degree[v], std::cmp::Reverse(v)))
            .unwrap();
        placed[start] = true;
        order.push(start);
        let mut frontier = order.len() - 1;
        while frontier < order.len() {
            let u = order[frontier];
            frontier += 1;
            let mut next: Vec<VertexId> = adj[u].iter().copied().filter(|&w| !placed[w]).collect();
            next.sort_by_key(|&w| (std::cmp::Reverse(degree[w]), w));
            next.dedup();
            for w in next {
                if !placed[w] {
                    placed[w] = true;
                    order.push(w);
                }
            }
        }
    }
    order
}

fn embed(pattern: &QueryGraph, host: &QueryGraph, exact: bool) -> Option<Witness> {
    let pat = Side::new(pattern);
    let hst = Side::new(host);
    if pattern.triple_count() > host.triple_count() || pattern.vertex_count() > host.vertex_count() {
        return None;
    }
    if exact {
        if pattern.triple_count() != host.triple_count()
            || pattern.vertex_count() != host.vertex_count()
            || pattern.user_labels().len() != host.user_labels().len()
        {
            return None;
        }
        let mut ca = pat.colors.clone();
        let mut cb = hst.colors.clone();
        ca.sort();
        cb.sort();
        if ca != cb {
            return None;
        }
    }
    let mut search = Search {
        pat: &pat,
        host: &hst,
        exact,
        order: search_order(pattern),
        map: vec![None; pattern.vertex_count()],
        used: vec![false; host.vertex_count()],
    };
    search.run(0)
}

/// Finds bijections witnessing structural equivalence, if any.
pub fn find_equivalence(a: &QueryGraph, b: &QueryGraph) -> Option<Witness> {
    embed(a, b, true)
}

pub fn is_equivalent(a: &QueryGraph, b: &QueryGraph) -> bool {
    find_equivalence(a, b).is_some()
}

/// True iff some subgraph of `b` (a triple subset with its vertices) is
/// structurally equivalent to `a`.
pub fn is_substructure(a: &QueryGraph, b: &QueryGraph) -> bool {
    embed(a, b, false).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Triple, Vertex};

    fn g(vertices: Vec<Vertex>, triples: Vec<(usize, EdgeLabel, usize)>) -> QueryGraph {
        QueryGraph::new(
            vertices,
            triples.into_iter().map(|(s, l, o)| Triple::new(s, l, o)).collect(),
            None,
        )
        .unwrap()
    }

    fn b(x: BuiltIn) -> EdgeLabel {
        EdgeLabel::BuiltIn(x)
    }

    #[test]
    fn direction_matters() {
        let a = g(vec![Vertex::variable(), Vertex::entity("E1")], vec![(0, EdgeLabel::user("p1"), 1)]);
        let r = g(vec![Vertex::variable(), Vertex::entity("E1")], vec![(1, EdgeLabel::user("p1"), 0)]);
        assert!(!is_equivalent(&a, &r));
        assert!(is_equivalent(&a, &a));
    }

    #[test]
    fn builtins_are_fixed() {
        let c = g(vec![Vertex::variable(), Vertex::aggregate_result()], vec![(0, b(BuiltIn::Count), 1)]);
        let m = g(vec![Vertex::variable(), Vertex::aggregate_result()], vec![(0, b(BuiltIn::Max), 1)]);
        assert!(!is_equivalent(&c, &m));
        let w = find_equivalence(&c, &c).unwrap();
        assert_eq!(w.label_map, vec![(b(BuiltIn::Count), b(BuiltIn::Count))]);
    }

    #[test]
    fn count_isa_is_substructure_of_figure_query() {
        // ?u ISA Film . ?u director T_Burton . ?u COUNT ?c
        let full = g(
            vec![Vertex::variable(), Vertex::class("Film"), Vertex::entity("T_Burton"), Vertex::aggregate_result()],
            vec![(0, b(BuiltIn::IsA), 1), (0, EdgeLabel::user("director"), 2), (0, b(BuiltIn::Count), 3)],
        );
        let sub = g(
            vec![Vertex::variable(), Vertex::aggregate_result(), Vertex::slot(VertexKind::Class, 1)],
            vec![(0, b(BuiltIn::Count), 1), (0, b(BuiltIn::IsA), 2)],
        );
        assert!(is_substructure(&sub, &full));
        assert!(!is_substructure(&full, &sub));
        assert!(is_substructure(&full, &full));
    }

    #[test]
    fn disjoint_pattern_is_not_contained() {
        let two = g(
            vec![Vertex::variable(), Vertex::entity("A"), Vertex::class("C")],
            vec![(0, EdgeLabel::user("p"), 1), (0, b(BuiltIn::IsA), 2)],
        );
        let one = g(vec![Vertex::entity("A"), Vertex::variable()], vec![(0, EdgeLabel::user("p"), 1)]);
        assert!(!is_substructure(&two, &one));
        assert!(!is_substructure(&one, &two));
    }

    #[test]
    fn label_sharing_is_respected() {
        let shared = g(
            vec![Vertex::variable(), Vertex::entity("A"), Vertex::entity("B")],
            vec![(0, EdgeLabel::user("p"), 1), (0, EdgeLabel::user("p"), 2)],
        );
        let distinct = g(
            vec![Vertex::variable(), Vertex::entity("A"), Vertex::entity("B")],
            vec![(0, EdgeLabel::user("p"), 1), (0, EdgeLabel::user("q"), 2)],
        );
        assert!(!is_equivalent(&shared, &distinct));
        // Two distinct labels cannot inject into a single host label.
        assert!(!is_substructure(&distinct, &shared));
        assert!(!is_substructure(&shared, &distinct));
    }
}
