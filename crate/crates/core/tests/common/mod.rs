//! Brute-force oracles shared by the integration tests. Each one is written
//! from the definitions and avoids the library code it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;

use qgen::graph::{BuiltIn, EdgeLabel, QueryGraph, Term, Triple, Vertex, VertexKind, RDF_TYPE};
use qgen::kb::{Answer, AnswerSet, KnowledgeBase, Node};
use qgen::predictor::network::Example;
use qgen::predictor::{Layout, Network, Tensor};

fn color(g: &QueryGraph, v: usize) -> (VertexKind, Option<String>) {
    let rank = g
        .triples()
        .iter()
        .any(|t| t.object == v && matches!(t.label, EdgeLabel::BuiltIn(BuiltIn::MaxAtN | BuiltIn::MinAtN)));
    let surface = match &g.vertex(v).surface {
        Some(Term::Const(s)) if rank => Some(s.clone()),
        _ => None,
    };
    (g.vertex(v).kind, surface)
}

/// Structural equivalence by trying every vertex bijection and every
/// bijection between user-defined labels.
pub fn brute_equivalent(a: &QueryGraph, b: &QueryGraph) -> bool {
    let n = a.vertex_count();
    if n != b.vertex_count() || a.triple_count() != b.triple_count() {
        return false;
    }
    let la: Vec<&Term> = a.user_labels();
    let lb: Vec<&Term> = b.user_labels();
    if la.len() != lb.len() {
        return false;
    }
    let ca: Vec<_> = (0..n).map(|v| color(a, v)).collect();
    let cb: Vec<_> = (0..n).map(|v| color(b, v)).collect();
    let target: HashSet<(usize, EdgeLabel, usize)> =
        b.triples().iter().map(|t| (t.subject, t.label.clone(), t.object)).collect();
    for perm in (0..n).permutations(n) {
        if (0..n).any(|v| ca[v] != cb[perm[v]]) {
            continue;
        }
        for lperm in (0..lb.len()).permutations(lb.len()) {
            let mapped: HashSet<(usize, EdgeLabel, usize)> = a
                .triples()
                .iter()
                .map(|t| {
                    let label = match &t.label {
                        EdgeLabel::User(term) => {
                            let i = la.iter().position(|x| *x == term).unwrap();
                            EdgeLabel::User(lb[lperm[i]].clone())
                        }
                        other => other.clone(),
                    };
                    (perm[t.subject], label, perm[t.object])
                })
                .collect();
            if mapped == target {
                return true;
            }
        }
    }
    false
}

/// The subgraph on a subset of triples, built from scratch.
pub fn induced(g: &QueryGraph, subset: &[usize]) -> QueryGraph {
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut triples = Vec::new();
    for &i in subset {
        let t = &g.triples()[i];
        let mut id = |v: usize| {
            *ids.entry(v).or_insert_with(|| {
                vertices.push(g.vertex(v).clone());
                vertices.len() - 1
            })
        };
        let (s, o) = (id(t.subject), id(t.object));
        triples.push(Triple::new(s, t.label.clone(), o));
    }
    QueryGraph::new(vertices, triples, None).expect("subsets of a valid graph are valid")
}

/// Connectivity of a triple subset by union-find over its vertices.
pub fn subset_connected(g: &QueryGraph, subset: &[usize]) -> bool {
    let mut parent: Vec<usize> = (0..g.vertex_count()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &i in subset {
        let t = &g.triples()[i];
        let (a, b) = (find(&mut parent, t.subject), find(&mut parent, t.object));
        parent[a] = b;
    }
    let roots: BTreeSet<usize> = subset
        .iter()
        .map(|&i| g.triples()[i].subject)
        .collect::<Vec<_>>()
        .into_iter()
        .map(|v| find(&mut parent, v))
        .collect();
    roots.len() <= 1
}

/// Connected non-empty triple subsets of `g`, one per equivalence class.
pub fn brute_substructures(g: &QueryGraph) -> Vec<QueryGraph> {
    let n = g.triple_count();
    let mut classes: Vec<QueryGraph> = Vec::new();
    for mask in 1u32..(1 << n) {
        let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if !subset_connected(g, &subset) {
            continue;
        }
        let sub = induced(g, &subset);
        if !classes.iter().any(|c| brute_equivalent(c, &sub)) {
            classes.push(sub);
        }
    }
    classes
}

/// Some subset of `b`'s triples is equivalent to `a`.
pub fn brute_contains(b: &QueryGraph, a: &QueryGraph) -> bool {
    let n = b.triple_count();
    (1u32..(1 << n)).any(|mask| {
        let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        subset.len() == a.triple_count() && subset_connected(b, &subset) && brute_equivalent(a, &induced(b, &subset))
    })
}

/// A random KB over a handful of entities, properties, classes and numbers.
pub fn random_kb(rng: &mut impl Rng, facts: usize) -> KnowledgeBase {
    let iri = |s: String| Node::Iri(s);
    let mut out = Vec::new();
    for _ in 0..facts {
        let s = iri(format!("e{}", rng.gen_range(0..25)));
        if rng.gen_bool(0.15) {
            out.push((s, iri(RDF_TYPE.to_owned()), iri(format!("C{}", rng.gen_range(0..3)))));
            continue;
        }
        let p = iri(format!("p{}", rng.gen_range(0..4)));
        let o = if rng.gen_bool(0.2) {
            Node::Literal(rng.gen_range(0..10).to_string())
        } else {
            iri(format!("e{}", rng.gen_range(0..25)))
        };
        out.push((s, p, o));
    }
    KnowledgeBase::from_facts(out)
}

/// A random aggregate-free query over the symbols of [`random_kb`]:
/// 1 to 3 triples, connected, with a variable target.
pub fn random_bgp(rng: &mut impl Rng) -> QueryGraph {
    loop {
        let mut vertices = vec![Vertex::variable()];
        let mut triples = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            let anchor = rng.gen_range(0..vertices.len());
            let other = match rng.gen_range(0..6) {
                0 | 1 => {
                    vertices.push(Vertex::variable());
                    vertices.len() - 1
                }
                2 => {
                    vertices.push(Vertex::entity(format!("e{}", rng.gen_range(0..25))));
                    vertices.len() - 1
                }
                3 => {
                    vertices.push(Vertex::literal(rng.gen_range(0..10).to_string()));
                    vertices.len() - 1
                }
                4 => {
                    vertices.push(Vertex::class(format!("C{}", rng.gen_range(0..3))));
                    vertices.len() - 1
                }
                _ => rng.gen_range(0..vertices.len()),
            };
            let label = if vertices[other].kind == VertexKind::Class {
                EdgeLabel::BuiltIn(BuiltIn::IsA)
            } else {
                EdgeLabel::user(format!("p{}", rng.gen_range(0..4)))
            };
            let (s, o) = if vertices[other].kind == VertexKind::Class
                || vertices[other].kind == VertexKind::Literal
                || rng.gen_bool(0.5)
            {
                (anchor, other)
            } else {
                (other, anchor)
            };
            if vertices[s].kind == VertexKind::Literal || vertices[s].kind == VertexKind::Class {
                continue;
            }
            triples.push(Triple::new(s, label, o));
        }
        let used: BTreeSet<usize> = triples.iter().flat_map(|t| [t.subject, t.object]).collect();
        if triples.is_empty() || used.len() != vertices.len() {
            continue;
        }
        let vars: Vec<usize> = (0..vertices.len()).filter(|&v| vertices[v].kind == VertexKind::Variable).collect();
        let target = *vars.choose(rng).unwrap();
        if let Ok(g) = QueryGraph::new(vertices, triples, Some(target)) {
            if g.is_connected() {
                return g;
            }
        }
    }
}

/// Nested-loop join: every triple pattern scans the whole fact list.
pub fn nested_loop_answers(q: &QueryGraph, facts: &[(Node, Node, Node)]) -> AnswerSet {
    let patterns: Vec<(usize, Node, usize)> = q
        .triples()
        .iter()
        .map(|t| {
            let p = match &t.label {
                EdgeLabel::BuiltIn(BuiltIn::IsA) => Node::Iri(RDF_TYPE.to_owned()),
                EdgeLabel::User(Term::Const(p)) => Node::Iri(p.clone()),
                other => panic!("unsupported label {other:?}"),
            };
            (t.subject, p, t.object)
        })
        .collect();
    let constant = |v: usize| -> Option<Node> {
        let vx = q.vertex(v);
        let s = vx.surface.as_ref()?.as_const()?.to_owned();
        Some(if vx.kind == VertexKind::Literal { Node::Literal(s) } else { Node::Iri(s) })
    };
    let mut results = BTreeSet::new();
    let mut binding: Vec<Option<Node>> = vec![None; q.vertex_count()];
    fn go(
        i: usize,
        patterns: &[(usize, Node, usize)],
        facts: &[(Node, Node, Node)],
        binding: &mut Vec<Option<Node>>,
        constant: &dyn Fn(usize) -> Option<Node>,
        target: usize,
        out: &mut BTreeSet<Answer>,
    ) {
        if i == patterns.len() {
            out.insert(match binding[target].clone().unwrap() {
                Node::Iri(s) => Answer::Iri(s),
                Node::Literal(s) => Answer::Literal(s),
            });
            return;
        }
        let (s, p, o) = &patterns[i];
        for (fs, fp, fo) in facts {
            if fp != p {
                continue;
            }
            let saved = binding.clone();
            let mut ok = true;
            for (v, node) in [(*s, fs), (*o, fo)] {
                if let Some(c) = constant(v) {
                    ok &= &c == node;
                } else {
                    match &binding[v] {
                        Some(b) => ok &= b == node,
                        None => binding[v] = Some(node.clone()),
                    }
                }
            }
            if ok {
                go(i + 1, patterns, facts, binding, constant, target, out);
            }
            *binding = saved;
        }
    }
    go(0, &patterns, facts, &mut binding, &constant, q.target().unwrap(), &mut results);
    AnswerSet::Bindings(results)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(m: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    m.chunks(cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn lstm(net: &Network, seq: &[Vec<f64>], w: Tensor, u: Tensor, b: Tensor) -> Vec<Vec<f64>> {
    let (d_e, d_h) = (net.layout.d_e, net.layout.d_h);
    let param = |t: Tensor| net.theta[net.layout.range(t)].to_vec();
    let (w, u, b) = (param(w), param(u), param(b));
    let mut h = vec![0.0; d_h];
    let mut c = vec![0.0; d_h];
    let mut out = Vec::new();
    for x in seq {
        let wx = matvec(&w, d_e, x);
        let uh = matvec(&u, d_h, &h);
        let z: Vec<f64> = (0..4 * d_h).map(|k| wx[k] + uh[k] + b[k]).collect();
        for k in 0..d_h {
            let (i, f, g, o) = (sigmoid(z[k]), sigmoid(z[d_h + k]), z[2 * d_h + k].tanh(), sigmoid(z[3 * d_h + k]));
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        out.push(h.clone());
    }
    out
}

/// Logits and attention weights of one sequence, computed one scalar at a
/// time from the network definition.
pub fn reference_forward(net: &Network, tokens: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let l = net.layout;
    let emb = &net.theta[l.range(Tensor::Embedding)];
    let xs: Vec<Vec<f64>> = tokens.iter().map(|&t| emb[t * l.d_e..(t + 1) * l.d_e].to_vec()).collect();
    let fwd = lstm(net, &xs, Tensor::WFwd, Tensor::UFwd, Tensor::BFwd);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut bwd = lstm(net, &rev, Tensor::WBwd, Tensor::UBwd, Tensor::BBwd);
    bwd.reverse();
    let hs: Vec<Vec<f64>> = fwd.iter().zip(&bwd).map(|(f, b)| f.iter().chain(b).copied().collect()).collect();
    let w_att = &net.theta[l.range(Tensor::WAtt)];
    let b_att = &net.theta[l.range(Tensor::BAtt)];
    let v_att = &net.theta[l.range(Tensor::VAtt)];
    let scores: Vec<f64> = hs
        .iter()
        .map(|h| {
            let u = matvec(w_att, 2 * l.d_h, h);
            u.iter().zip(b_att).zip(v_att).map(|((x, b), v)| (x + b).tanh() * v).sum()
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let alpha: Vec<f64> = scores.iter().map(|s| (s - m).exp() / z).collect();
    let mut q = vec![0.0; 2 * l.d_h];
    for (a, h) in alpha.iter().zip(&hs) {
        for (qk, hk) in q.iter_mut().zip(h) {
            *qk += a * hk;
        }
    }
    let w_out = &net.theta[l.range(Tensor::WOut)];
    let b_out = &net.theta[l.range(Tensor::BOut)];
    let logits = matvec(w_out, 2 * l.d_h, &q).iter().zip(b_out).map(|(x, b)| x + b).collect();
    (logits, alpha)
}

/// The film KB with its schema and the 40-question dataset.
pub fn mini() -> (KnowledgeBase, qgen::eval::Dataset) {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini");
    let px = qgen::graph::PrefixTable::default();
    let schema = qgen::kb::Schema::load(&dir.join("schema.txt"), &px).unwrap();
    let kb = KnowledgeBase::load(&dir.join("kb.tsv"), &px).unwrap().with_schema(schema);
    let ds = qgen::eval::load_dataset(&dir.join("dataset.json"), &px).unwrap();
    (kb, ds)
}

pub fn random_net(layout: Layout, rng: &mut impl Rng) -> Network {
    let mut net = Network::zeros(layout);
    for x in &mut net.theta {
        *x = rng.gen_range(-0.5..0.5);
    }
    net
}

pub fn random_seqs(rng: &mut impl Rng, vocab: usize, n: usize, max_len: usize) -> Vec<Vec<usize>> {
    (0..n).map(|_| (0..rng.gen_range(1..=max_len)).map(|_| rng.gen_range(0..vocab)).collect()).collect()
}

/// Largest per-tensor relative error ||analytic - numeric|| / (||analytic|| + ||numeric||).
pub fn gradient_error(net: &Network, batch: &[Example]) -> Vec<(&'static str, f64)> {
    let (_, grad) = net.loss_and_grad(batch);
    let eps = 1e-4;
    Tensor::ALL
        .iter()
        .map(|&t| {
            let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
            for i in net.layout.range(t) {
                let mut plus = net.clone();
                plus.theta[i] += eps;
                let mut minus = net.clone();
                minus.theta[i] -= eps;
                let numeric = (plus.loss(batch) - minus.loss(batch)) / (2.0 * eps);
                diff += (grad[i] - numeric).powi(2);
                norm_a += grad[i].powi(2);
                norm_n += numeric.powi(2);
            }
            let denom = norm_a.sqrt() + norm_n.sqrt();
            (t.name(), if denom == 0.0 { 0.0 } else { diff.sqrt() / denom })
        })
        .collect()
}
