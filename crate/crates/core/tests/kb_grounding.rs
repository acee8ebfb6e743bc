mod common;

use num_bigint::BigInt;
use num_rational::BigRational;
use qgen::graph::{canonical_key, is_equivalent, parse_query, structure_of, PrefixTable, Slot};
use qgen::grounding::{
    add_distractors, gold_linking, ground_structure, validate_grammar, Assignments, Candidate, GroundConfig,
    LinkKind, MentionCandidates,
};
use qgen::kb::{execute, Answer, AnswerSet, KnowledgeBase, Node};
use qgen::ranker::{Provenance, ScoredStructure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{nested_loop_answers, random_bgp, random_kb};

fn facts_of(kb: &KnowledgeBase) -> Vec<(Node, Node, Node)> {
    kb.facts().map(|(s, p, o)| (s.clone(), p.clone(), o.clone())).collect()
}

#[test]
fn execution_matches_nested_loop_join() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut non_empty = 0;
    for _ in 0..200 {
        let size = rng.gen_range(20..=1000);
        let kb = random_kb(&mut rng, size);
        let facts = facts_of(&kb);
        let q = random_bgp(&mut rng);
        let got = execute(&q, &kb).unwrap();
        assert_eq!(got, nested_loop_answers(&q, &facts), "{q}");
        non_empty += !got.is_empty() as usize;
    }
    assert!(non_empty >= 50, "too few non-empty instances: {non_empty}");
}

fn films() -> KnowledgeBase {
    let text = "\
:a\ta\t:Film\n:a\t:director\t:k\n:a\t:runtime\t90\n\
:b\ta\t:Film\n:b\t:director\t:k\n:b\t:runtime\t120\n\
:c\ta\t:Film\n:c\t:director\t:k\n:c\t:runtime\t105\n\
:d\ta\t:Film\n:d\t:director\t:s\n:d\t:runtime\t150\n";
    KnowledgeBase::parse(text, &PrefixTable::default()).unwrap()
}

fn run(q: &str) -> AnswerSet {
    execute(&parse_query(q).unwrap(), &films()).unwrap()
}

fn iri(local: &str) -> AnswerSet {
    AnswerSet::Bindings([Answer::Iri(format!("http://example.org/{local}"))].into())
}

fn number(n: i64, d: i64) -> AnswerSet {
    AnswerSet::Bindings([Answer::Number(BigRational::new(BigInt::from(n), BigInt::from(d)))].into())
}

#[test]
fn aggregate_and_ordering_fixtures() {
    assert_eq!(run("SELECT (COUNT(?f) AS ?n) WHERE { ?f a :Film . ?f :director :k }"), number(3, 1));
    assert_eq!(run("SELECT (AVG(?r) AS ?n) WHERE { ?f :director :k . ?f :runtime ?r }"), number(315, 3));
    assert_eq!(run("SELECT (MAX(?r) AS ?n) WHERE { ?f :runtime ?r }"), number(150, 1));
    assert_eq!(run("SELECT ?f WHERE { ?f :director :k . ?f :runtime ?r } ORDER BY DESC(?r) LIMIT 1"), iri("b"));
    assert_eq!(
        run("SELECT ?f WHERE { ?f :director :k . ?f :runtime ?r } ORDER BY DESC(?r) LIMIT 1 OFFSET 1"),
        iri("c")
    );
    assert_eq!(run("SELECT ?f WHERE { ?f :runtime ?r } ORDER BY ASC(?r) LIMIT 1"), iri("a"));
    assert_eq!(
        run("SELECT ?f WHERE { ?f :director :s . ?f :runtime ?r } ORDER BY DESC(?r) LIMIT 1 OFFSET 3"),
        AnswerSet::empty()
    );
    assert_eq!(run("ASK WHERE { :d :director :s }"), AnswerSet::Boolean(true));
    assert_eq!(run("ASK WHERE { :d :director :k }"), AnswerSet::Boolean(false));
    assert!(run("SELECT (COUNT(?f) AS ?n) WHERE { ?f :director :nobody }").is_empty());
}

fn random_linking(rng: &mut ChaCha8Rng) -> Vec<MentionCandidates> {
    let kinds = [LinkKind::Entity, LinkKind::Property, LinkKind::Class, LinkKind::Literal];
    (0..rng.gen_range(2..7))
        .map(|m| MentionCandidates {
            mention: format!("m{m}"),
            span: None,
            kind: kinds[rng.gen_range(0..kinds.len())],
            candidates: (0..rng.gen_range(1..4))
                .map(|c| Candidate { symbol: format!("s{m}_{c}"), score: rng.gen_range(0.05..1.0) })
                .collect(),
        })
        .collect()
}

fn slot_kind(slot: &Slot) -> Option<LinkKind> {
    match slot {
        Slot::Vertex { kind, .. } => LinkKind::of_vertex(*kind),
        Slot::Property { .. } => Some(LinkKind::Property),
    }
}

#[test]
fn assignments_come_out_best_first_and_complete() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut checked = 0;
    for _ in 0..300 {
        let slots = structure_of(&random_bgp(&mut rng)).slots();
        let linking = random_linking(&mut rng);
        let mut expected: Vec<(Vec<(usize, usize)>, f64)> = vec![(vec![], 1.0)];
        for slot in &slots {
            let kind = slot_kind(slot);
            let mut next = Vec::new();
            for (choices, score) in &expected {
                for (m, mc) in linking.iter().enumerate().filter(|(_, mc)| Some(mc.kind) == kind) {
                    if choices.iter().any(|&(used, _)| used == m) {
                        continue;
                    }
                    for (c, cand) in mc.candidates.iter().enumerate() {
                        let mut ch = choices.clone();
                        ch.push((m, c));
                        next.push((ch, score * cand.score));
                    }
                }
            }
            expected = next;
        }
        let got: Vec<_> = Assignments::new(&slots, &linking, usize::MAX).collect();
        for w in got.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        let mut got_choices: Vec<_> = got.iter().map(|a| a.choices.clone()).collect();
        let mut want: Vec<_> = expected.iter().map(|e| e.0.clone()).collect();
        got_choices.sort();
        want.sort();
        assert_eq!(got_choices, want);
        let mut scores: Vec<f64> = expected.iter().map(|e| e.1).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        for (a, s) in got.iter().zip(&scores) {
            assert!((a.score - s).abs() <= 1e-12);
        }
        checked += !want.is_empty() as usize;
    }
    assert!(checked > 50);
}

#[test]
fn grounding_is_sound_and_finds_the_gold_query() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut found = 0;
    let mut tried = 0;
    while tried < 100 {
        let kb = random_kb(&mut rng, 600);
        let gold = random_bgp(&mut rng);
        let linking = gold_linking(&gold);
        let structure = structure_of(&gold);
        // One mention per slot; repeated symbols share a mention and cannot fill two slots.
        if execute(&gold, &kb).unwrap().is_empty() || linking.len() != structure.slots().len() {
            continue;
        }
        tried += 1;
        let noisy = add_distractors(&linking, &kb, 3, 0.9, &mut rng);
        let scored = ScoredStructure {
            key: canonical_key(&structure),
            representative: structure,
            score: 1.0,
            provenance: Provenance::Existing,
            count: 1,
        };
        let cfg = GroundConfig { top_k: usize::MAX, budget: 100_000 };
        let results = ground_structure(&scored, 0, &noisy, &kb, &cfg);
        for r in &results {
            assert!(validate_grammar(&r.query));
            let again = execute(&r.query, &kb).unwrap();
            assert!(!again.is_empty());
            assert_eq!(again, r.answers);
        }
        for w in results.windows(2) {
            assert!(w[0].linking_score >= w[1].linking_score);
        }
        let gold_pattern = gold.with_target(None).unwrap();
        let hit = results.iter().any(|r| is_equivalent(&r.query.with_target(None).unwrap(), &gold_pattern));
        assert!(hit, "gold {gold} not among {} groundings", results.len());
        found += 1;
    }
    assert_eq!(found, 100);
}

#[test]
fn grammar_check_examples() {
    let ok = parse_query("SELECT ?f WHERE { ?f a :Film . ?f :director :k }").unwrap();
    assert!(validate_grammar(&ok));
    assert!(!validate_grammar(&structure_of(&ok)));
    assert!(!validate_grammar(&ok.with_target(None).unwrap()));
    if let Ok(split) = parse_query("SELECT ?f WHERE { ?f :director :k . ?g :director :s }") {
        assert!(!validate_grammar(&split));
    }
    let count = parse_query("SELECT (COUNT(?f) AS ?n) WHERE { ?f :director :k }").unwrap();
    assert!(validate_grammar(&count));
    let ask = parse_query("ASK WHERE { :d :director :k }").unwrap();
    assert!(validate_grammar(&ask));
}
