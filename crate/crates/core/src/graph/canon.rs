//! Canonical forms for query structures.
//!
//! A query graph is encoded as a vertex-colored digraph with one node per
//! query vertex, one per triple and one per distinct user-defined label.
//! Isomorphisms of that encoding are exactly the structural equivalences
//! (vertex bijection preserving kinds, label bijection fixing built-ins,
//! triple preservation). The canonical labeling is found by color refinement
//! plus individualization, keeping the lexicographically least certificate.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EdgeLabel, QueryGraph, Term, Triple, Vertex, VertexId, VertexKind};

/// Identifies a query structure: equal keys iff structurally equivalent.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructureKey {
    pub canonical: String,
    pub triple_count: usize,
    pub agg_count: usize,
}

impl Ord for StructureKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical.cmp(&other.canonical)
    }
}

impl PartialOrd for StructureKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for StructureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

/// Result of canonical labeling.
#[derive(Clone, Debug)]
pub struct Canonical {
    pub key: StructureKey,
    /// Canonical position -> original vertex id.
    pub vertex_order: Vec<VertexId>,
    /// User-defined labels in canonical order.
    pub label_order: Vec<Term>,
}

const SUBJECT: u8 = 0;
const OBJECT: u8 = 1;
const LABEL: u8 = 2;

struct Encoded {
    n_vertices: usize,
    n_triples: usize,
    labels: Vec<Term>,
    out: Vec<Vec<(u8, usize)>>,
    inc: Vec<Vec<(u8, usize)>>,
    initial: Vec<u32>,
}

impl Encoded {
    fn new(g: &QueryGraph) -> Self {
        let n_vertices = g.vertex_count();
        let n_triples = g.triple_count();
        let labels: Vec<Term> = g.user_labels().into_iter().cloned().collect();
        let n = n_vertices + n_triples + labels.len();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        let mut keys: Vec<(u8, u8, String)> = Vec::with_capacity(n);
        for (kind, rank) in g.vertex_colors() {
            keys.push((0, kind.code() as u8, rank.unwrap_or_default()));
        }
        for (i, t) in g.triples().iter().enumerate() {
            let node = n_vertices + i;
            out[t.subject].push((SUBJECT, node));
            inc[node].push((SUBJECT, t.subject));
            out[node].push((OBJECT, t.object));
            inc[t.object].push((OBJECT, node));
            match &t.label {
                EdgeLabel::BuiltIn(b) => keys.push((1, b.code(), String::new())),
                EdgeLabel::User(term) => {
                    let l = n_vertices + n_triples + labels.iter().position(|x| x == term).unwrap();
                    out[node].push((LABEL, l));
                    inc[l].push((LABEL, node));
                    keys.push((1, u8::MAX, String::new()));
                }
            }
        }
        keys.extend(labels.iter().map(|_| (2, 0, String::new())));
        let initial = rank(&keys);
        Encoded { n_vertices, n_triples, labels, out, inc, initial }
    }

    fn refine(&self, colors: &mut Vec<u32>) {
        let mut distinct = count_distinct(colors);
        loop {
            let sigs: Vec<(u32, Vec<(u8, u32)>, Vec<(u8, u32)>)> = (0..colors.len())
                .map(|u| {
                    let mut o: Vec<(u8, u32)> =
                        self.out[u].iter().map(|&(e, w)| (e, colors[w])).collect();
                    let mut i: Vec<(u8, u32)> =
                        self.inc[u].iter().map(|&(e, w)| (e, colors[w])).collect();
                    o.sort_unstable();
                    i.sort_unstable();
                    (colors[u], o, i)
                })
                .collect();
            *colors = rank(&sigs);
            let now = count_distinct(colors);
            if now == distinct {
                break;
            }
            distinct = now;
        }
    }

    fn certificate(&self, colors: &[u32]) -> Vec<(u8, u32, u32)> {
        let mut cert = Vec::new();
        for (u, edges) in self.out.iter().enumerate() {
            for &(e, w) in edges {
                cert.push((e, colors[u], colors[w]));
            }
        }
        cert.sort_unstable();
        cert
    }

    fn search(&self, mut colors: Vec<u32>, best: &mut Option<(Vec<(u8, u32, u32)>, Vec<u32>)>) {
        self.refine(&mut colors);
        let n = colors.len();
        if count_distinct(&colors) == n {
            let cert = self.certificate(&colors);
            match best {
                Some((b, _)) if *b <= cert => {}
                _ => *best = Some((cert, colors)),
            }
            return;
        }
        // First non-singleton cell in color order.
        let mut sizes = vec![0usize; n];
        for &c in &colors {
            sizes[c as usize] += 1;
        }
        let cell = sizes.iter().position(|&s| s > 1).unwrap() as u32;
        for v in 0..n {
            if colors[v] != cell {
                continue;
            }
            let keys: Vec<u32> = colors
                .iter()
                .enumerate()
                .map(|(u, &c)| 2 * c + u32::from(c == cell && u != v))
                .collect();
            self.search(rank(&keys), best);
        }
    }
}

fn rank<T: Ord + Clone>(keys: &[T]) -> Vec<u32> {
    let mut sorted: Vec<T> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter().map(|k| sorted.binary_search(k).unwrap() as u32).collect()
}

fn count_distinct(colors: &[u32]) -> usize {
    let mut seen = vec![false; colors.len()];
    let mut n = 0;
    for &c in colors {
        if !seen[c as usize] {
            seen[c as usize] = true;
            n += 1;
        }
    }
    n
}

/// Computes the canonical labeling of `g`.
pub fn canonicalize(g: &QueryGraph) -> Canonical {
    let enc = Encoded::new(g);
    let mut best = None;
    enc.search(enc.initial.clone(), &mut best);
    let (_, colors) = best.expect("search visits at least one leaf");

    let mut vertex_order: Vec<VertexId> = (0..enc.n_vertices).collect();
    vertex_order.sort_by_key(|&v| colors[v]);
    let label_base = enc.n_vertices + enc.n_triples;
    let mut label_idx: Vec<usize> = (0..enc.labels.len()).collect();
    label_idx.sort_by_key(|&l| colors[label_base + l]);
    let label_order: Vec<Term> = label_idx.iter().map(|&l| enc.labels[l].clone()).collect();

    let mut pos = vec![0usize; enc.n_vertices];
    for (p, &v) in vertex_order.iter().enumerate() {
        pos[v] = p;
    }
    let ranks = g.vertex_colors();
    let vertex_part: Vec<String> = vertex_order
        .iter()
        .map(|&v| match &ranks[v].1 {
            Some(n) => format!("{}:{}", ranks[v].0.code(), n),
            None => ranks[v].0.code().to_string(),
        })
        .collect();
    let mut triple_part: Vec<(usize, String, usize)> = g
        .triples()
        .iter()
        .map(|t| {
            let label = match &t.label {
                EdgeLabel::BuiltIn(b) => b.name().to_owned(),
                EdgeLabel::User(term) => {
                    format!("p{}", label_order.iter().position(|x| x == term).unwrap())
                }
            };
            (pos[t.subject], label, pos[t.object])
        })
        .collect();
    triple_part.sort();
    let triples: Vec<String> =
        triple_part.iter().map(|(s, l, o)| format!("{s} {l} {o}")).collect();
    let canonical = format!("{}|{}", vertex_part.join(","), triples.join(";"));

    Canonical {
        key: StructureKey {
            canonical,
            triple_count: g.triple_count(),
            agg_count: g.aggregation_count(true),
        },
        vertex_order,
        label_order,
    }
}

pub fn canonical_key(g: &QueryGraph) -> StructureKey {
    canonicalize(g).key
}

/// The canonical representative of `[g]`: vertices renumbered canonically,
/// entity/class/literal symbols and user labels replaced by numbered
/// placeholders. MAXATN/MINATN ranks stay concrete; the target and query
/// form are carried over.
pub fn structure_of(g: &QueryGraph) -> QueryGraph {
    let canon = canonicalize(g);
    let mut pos = vec![0usize; g.vertex_count()];
    for (p, &v) in canon.vertex_order.iter().enumerate() {
        pos[v] = p;
    }
    let mut counters = [0u32; 5];
    let vertices: Vec<Vertex> = canon
        .vertex_order
        .iter()
        .map(|&v| {
            let kind = g.vertex(v).kind;
            if kind.is_variable() {
                return Vertex { kind, surface: None };
            }
            if let Some(n) = g.order_rank(v) {
                return Vertex { kind, surface: Some(Term::Const(n.to_owned())) };
            }
            let c = &mut counters[slot_counter(kind)];
            *c += 1;
            Vertex::slot(kind, *c)
        })
        .collect();
    let mut triples: Vec<Triple> = g
        .triples()
        .iter()
        .map(|t| {
            let label = match &t.label {
                EdgeLabel::User(term) => {
                    let i = canon.label_order.iter().position(|x| x == term).unwrap();
                    EdgeLabel::User(Term::Slot(i as u32 + 1))
                }
                b => b.clone(),
            };
            Triple::new(pos[t.subject], label, pos[t.object])
        })
        .collect();
    triples.sort();
    QueryGraph::with_form(vertices, triples, g.target().map(|t| pos[t]), g.form())
        .expect("relabeling preserves validity")
}

fn slot_counter(kind: VertexKind) -> usize {
    match kind {
        VertexKind::Entity => 0,
        VertexKind::Class => 1,
        VertexKind::Literal => 2,
        VertexKind::Variable => 3,
        VertexKind::AggregateResult => 4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BuiltIn, Vertex};

    fn simple(forward: bool) -> QueryGraph {
        let t = if forward { Triple::new(0, EdgeLabel::user("p"), 1) } else { Triple::new(1, EdgeLabel::user("p"), 0) };
        QueryGraph::new(vec![Vertex::variable(), Vertex::entity("E")], vec![t], Some(0)).unwrap()
    }

    #[test]
    fn two_simple_structures_differ() {
        assert_ne!(canonical_key(&simple(true)), canonical_key(&simple(false)));
    }

    #[test]
    fn renaming_surfaces_keeps_key() {
        let a = simple(true);
        let b = QueryGraph::new(
            vec![Vertex::entity("Other"), Vertex::variable()],
            vec![Triple::new(1, EdgeLabel::user("q"), 0)],
            Some(1),
        )
        .unwrap();
        assert_eq!(canonical_key(&a), canonical_key(&b));
    }

    #[test]
    fn chain_relabelings_share_one_key() {
        // ?a p ?b . ?b q ?c . ?c r E, under all orderings of the three variables.
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut keys = std::collections::BTreeSet::new();
        for p in perms {
            let mut vertices = vec![Vertex::variable(); 3];
            vertices.push(Vertex::entity("E"));
            let g = QueryGraph::new(
                vertices,
                vec![
                    Triple::new(p[0], EdgeLabel::user("p"), p[1]),
                    Triple::new(p[1], EdgeLabel::user("q"), p[2]),
                    Triple::new(p[2], EdgeLabel::user("r"), 3),
                ],
                None,
            )
            .unwrap();
            keys.insert(canonical_key(&g));
        }
        assert_eq!(keys.len(), 1);
    }

    #[test]
    fn order_rank_is_part_of_the_key() {
        let mk = |n: &str| {
            QueryGraph::new(
                vec![Vertex::variable(), Vertex::literal(n)],
                vec![Triple::new(0, EdgeLabel::BuiltIn(BuiltIn::MaxAtN), 1)],
                None,
            )
            .unwrap()
        };
        assert_ne!(canonical_key(&mk("2")), canonical_key(&mk("3")));
        let s = structure_of(&mk("2"));
        let lit = s.vertices().iter().find(|v| v.kind == VertexKind::Literal).unwrap();
        assert_eq!(lit.surface, Some(Term::Const("2".into())));
    }

    #[test]
    fn shared_label_differs_from_distinct_labels() {
        let mk = |l2: &str| {
            QueryGraph::new(
                vec![Vertex::variable(), Vertex::entity("A"), Vertex::entity("B")],
                vec![Triple::new(0, EdgeLabel::user("p"), 1), Triple::new(0, EdgeLabel::user(l2), 2)],
                None,
            )
            .unwrap()
        };
        assert_ne!(canonical_key(&mk("p")), canonical_key(&mk("q")));
    }

    #[test]
    fn structure_of_is_idempotent() {
        let g = simple(false);
        let s = structure_of(&g);
        assert_eq!(structure_of(&s), s);
        assert_eq!(canonical_key(&s), canonical_key(&g));
        assert_eq!(s.slots().len(), 2);
    }
}
