//! Seeded generators for test fixtures: random query graphs, a keyword
//! corpus whose structures are decided by single words, and a training set
//! whose unseen gold structure is reachable only by merging.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::{BuiltIn, EdgeLabel, QueryGraph, Triple, Vertex, VertexId, VertexKind};
use crate::mining::{Mention, TrainingPair};

/// A random connected query graph with `1..=max_triples` triples that
/// satisfies the query grammar and binds every variable in a user-defined
/// or ISA triple. User labels come from a pool of `labels`
/// names so that repeated labels are common.
pub fn random_query(rng: &mut impl Rng, max_triples: usize, labels: usize) -> QueryGraph {
    loop {
        if let Some(g) = try_random_query(rng, max_triples.max(1), labels.max(1)) {
            return g;
        }
    }
}

fn try_random_query(rng: &mut impl Rng, max_triples: usize, labels: usize) -> Option<QueryGraph> {
    let n = rng.gen_range(1..=max_triples);
    let mut vertices = vec![Vertex::variable()];
    let mut triples: Vec<Triple> = Vec::new();
    let fresh = |vertices: &mut Vec<Vertex>, kind: VertexKind| -> VertexId {
        let id = vertices.len();
        vertices.push(match kind {
            VertexKind::Variable => Vertex::variable(),
            VertexKind::AggregateResult => Vertex::aggregate_result(),
            VertexKind::Entity => Vertex::entity(format!("e{id}")),
            VertexKind::Class => Vertex::class(format!("C{id}")),
            VertexKind::Literal => Vertex::literal(format!("{}", 100 + id)),
        });
        id
    };
    let pick = |vertices: &[Vertex], rng: &mut dyn rand::RngCore, ok: &dyn Fn(VertexKind) -> bool| -> Option<VertexId> {
        let ids: Vec<VertexId> = (0..vertices.len()).filter(|&v| ok(vertices[v].kind)).collect();
        ids.choose(rng).copied()
    };
    let mut aggregates = 0;
    for _ in 0..n {
        let roll = rng.gen_range(0..10);
        let var = |k: VertexKind| k == VertexKind::Variable;
        let node = |k: VertexKind| matches!(k, VertexKind::Variable | VertexKind::Entity);
        match roll {
            0..=5 => {
                let label = EdgeLabel::user(format!("p{}", rng.gen_range(0..labels)));
                let s = if rng.gen_bool(0.8) { pick(&vertices, rng, &node)? } else { fresh(&mut vertices, VertexKind::Entity) };
                let o = match rng.gen_range(0..5) {
                    0 => fresh(&mut vertices, VertexKind::Literal),
                    1 => fresh(&mut vertices, VertexKind::Entity),
                    2 => fresh(&mut vertices, VertexKind::Variable),
                    _ => pick(&vertices, rng, &node)?,
                };
                triples.push(Triple::new(s, label, o));
            }
            6 | 7 => {
                let s = pick(&vertices, rng, &node)?;
                let o = fresh(&mut vertices, VertexKind::Class);
                triples.push(Triple::new(s, EdgeLabel::BuiltIn(BuiltIn::IsA), o));
            }
            8 if aggregates < 2 => {
                let s = pick(&vertices, rng, &var)?;
                let o = fresh(&mut vertices, VertexKind::AggregateResult);
                let b = *[BuiltIn::Count, BuiltIn::Avg, BuiltIn::Max, BuiltIn::Min].choose(rng).unwrap();
                triples.push(Triple::new(s, EdgeLabel::BuiltIn(b), o));
                aggregates += 1;
            }
            _ => {
                let s = pick(&vertices, rng, &var)?;
                let o = vertices.len();
                vertices.push(Vertex::literal(rng.gen_range(1..=2).to_string()));
                let b = if rng.gen_bool(0.5) { BuiltIn::MaxAtN } else { BuiltIn::MinAtN };
                triples.push(Triple::new(s, EdgeLabel::BuiltIn(b), o));
            }
        }
    }
    let bound = |v: VertexId| {
        triples.iter().any(|t| matches!(t.label, EdgeLabel::User(_) | EdgeLabel::BuiltIn(BuiltIn::IsA)) && (t.subject == v || t.object == v))
    };
    if (0..vertices.len()).any(|v| vertices[v].kind == VertexKind::Variable && !bound(v)) {
        return None;
    }
    let g = QueryGraph::new(vertices, triples, None).ok()?;
    (g.is_connected() && g.check_grammar().is_ok()).then_some(g)
}

/// The same graph with vertex ids, triple order and user label names
/// shuffled: structurally equivalent to `g`.
pub fn relabel(g: &QueryGraph, rng: &mut impl Rng) -> QueryGraph {
    let n = g.vertex_count();
    let mut perm: Vec<VertexId> = (0..n).collect();
    perm.shuffle(rng);
    let mut vertices = vec![Vertex::variable(); n];
    for (v, &p) in perm.iter().enumerate() {
        vertices[p] = g.vertex(v).clone();
    }
    let labels = g.user_labels();
    let mut names: Vec<usize> = (0..labels.len()).collect();
    names.shuffle(rng);
    let mut triples: Vec<Triple> = g
        .triples()
        .iter()
        .map(|t| {
            let label = match &t.label {
                EdgeLabel::User(term) => {
                    let i = labels.iter().position(|l| *l == term).unwrap();
                    EdgeLabel::user(format!("q{}", names[i]))
                }
                b => b.clone(),
            };
            Triple::new(perm[t.subject], label, perm[t.object])
        })
        .collect();
    triples.shuffle(rng);
    QueryGraph::with_form(vertices, triples, g.target().map(|t| perm[t]), g.form()).expect("relabeling preserves validity")
}

/// A small random edit of `g` (one triple reversed, relabelled or
/// rewired); the result is often, but not always, inequivalent.
pub fn mutate(g: &QueryGraph, rng: &mut impl Rng) -> QueryGraph {
    for _ in 0..20 {
        let mut triples = g.triples().to_vec();
        let i = rng.gen_range(0..triples.len());
        let t = triples[i].clone();
        match rng.gen_range(0..3) {
            0 => triples[i] = Triple::new(t.object, t.label, t.subject),
            1 => {
                if t.label.is_user() {
                    triples[i].label = EdgeLabel::user(format!("p{}", rng.gen_range(0..3)));
                }
            }
            _ => triples[i].object = rng.gen_range(0..g.vertex_count()),
        }
        if let Ok(m) = QueryGraph::new(g.vertices().to_vec(), triples, None) {
            if m.is_connected() && m.check_grammar().is_ok() {
                return m;
            }
        }
    }
    g.clone()
}

/// Words carrying no structural signal.
const FILLER: [&str; 50] = [
    "the", "a", "an", "is", "was", "were", "did", "does", "do", "what", "who", "where", "when", "in", "on", "at",
    "to", "for", "with", "from", "and", "or", "that", "this", "it", "its", "their", "his", "her", "one", "first",
    "known", "famous", "called", "named", "about", "some", "all", "any", "there", "here", "then", "also", "still",
    "ever", "recent", "old", "new", "big", "small",
];

/// A corpus of `n` questions whose query structure is fixed by keywords:
/// `by` puts the entity in object position and `of` in subject position,
/// `which` adds a class constraint on the answer, `many` counts it.
pub fn keyword_corpus(n: usize, rng: &mut impl Rng) -> Vec<TrainingPair> {
    (0..n)
        .map(|i| {
            let by = rng.gen_bool(0.5);
            let which = rng.gen_bool(0.5);
            let many = rng.gen_bool(0.5);
            let mut words: Vec<&str> = (0..rng.gen_range(2..=5)).map(|_| *FILLER.choose(rng).unwrap()).collect();
            for kw in [Some(if by { "by" } else { "of" }), which.then_some("which"), many.then_some("many")].into_iter().flatten() {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, kw);
            }
            let at = rng.gen_range(0..=words.len());
            let entity = format!("Entity{}", rng.gen_range(0..500));
            let mut question = String::new();
            let mut mention = None;
            for (j, w) in words.iter().enumerate() {
                if j == at {
                    mention = Some(question.len());
                    question.push_str(&entity);
                    question.push(' ');
                }
                question.push_str(w);
                question.push(' ');
            }
            if mention.is_none() {
                mention = Some(question.len());
                question.push_str(&entity);
            }
            let question = question.trim_end().to_owned();
            let start = mention.unwrap();

            let mut vertices = vec![Vertex::variable(), Vertex::entity(format!("ex:{entity}"))];
            let label = EdgeLabel::user(format!("ex:p{}", rng.gen_range(0..5)));
            let mut triples = vec![if by { Triple::new(0, label, 1) } else { Triple::new(1, label, 0) }];
            if which {
                vertices.push(Vertex::class(format!("ex:C{}", rng.gen_range(0..3))));
                triples.push(Triple::new(0, EdgeLabel::BuiltIn(BuiltIn::IsA), vertices.len() - 1));
            }
            let mut target = 0;
            if many {
                vertices.push(Vertex::aggregate_result());
                target = vertices.len() - 1;
                triples.push(Triple::new(0, EdgeLabel::BuiltIn(BuiltIn::Count), target));
            }
            let query = QueryGraph::new(vertices, triples, Some(target)).expect("fixture queries are valid");
            TrainingPair {
                id: format!("kw{i}"),
                mentions: vec![Mention { start, end: start + entity.len(), surface: entity }],
                question,
                query,
            }
        })
        .collect()
}

/// Training pairs whose structures are `<?x ISA C> <?x p E>` and `<?x p E>`,
/// `copies` of each, plus the gold query `<?x ISA C> <?x p1 E1> <?x p2 E2>`
/// whose structure never occurs in training.
pub fn planted_merge_fixture(copies: usize) -> (Vec<TrainingPair>, QueryGraph) {
    let mut pairs = Vec::new();
    for i in 0..copies {
        let a = QueryGraph::new(
            vec![Vertex::variable(), Vertex::class(format!("ex:C{}", i % 3)), Vertex::entity(format!("ex:E{i}"))],
            vec![
                Triple::new(0, EdgeLabel::BuiltIn(BuiltIn::IsA), 1),
                Triple::new(0, EdgeLabel::user(format!("ex:p{}", i % 4)), 2),
            ],
            Some(0),
        )
        .unwrap();
        let b = QueryGraph::new(
            vec![Vertex::variable(), Vertex::entity(format!("ex:F{i}"))],
            vec![Triple::new(0, EdgeLabel::user(format!("ex:q{}", i % 4)), 1)],
            Some(0),
        )
        .unwrap();
        pairs.push(TrainingPair { id: format!("a{i}"), question: format!("which class has {i}"), query: a, mentions: vec![] });
        pairs.push(TrainingPair { id: format!("b{i}"), question: format!("what has {i}"), query: b, mentions: vec![] });
    }
    let gold = QueryGraph::new(
        vec![Vertex::variable(), Vertex::class("ex:C0"), Vertex::entity("ex:E1"), Vertex::entity("ex:E2")],
        vec![
            Triple::new(0, EdgeLabel::BuiltIn(BuiltIn::IsA), 1),
            Triple::new(0, EdgeLabel::user("ex:p1"), 2),
            Triple::new(0, EdgeLabel::user("ex:p2"), 3),
        ],
        Some(0),
    )
    .unwrap();
    (pairs, gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{canonical_key, is_equivalent};
    use rand::SeedableRng;

    #[test]
    fn random_queries_are_valid_and_relabelings_equivalent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let g = random_query(&mut rng, 5, 3);
            assert!(g.triple_count() <= 5 && g.is_connected());
            let h = relabel(&g, &mut rng);
            assert!(is_equivalent(&g, &h));
            assert_eq!(canonical_key(&g), canonical_key(&h));
        }
    }

    #[test]
    fn keyword_questions_carry_their_mention() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for p in keyword_corpus(50, &mut rng) {
            let m = &p.mentions[0];
            assert_eq!(&p.question[m.start..m.end], m.surface);
        }
    }
}
