mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use qgen::eval::{
    answer_f1, make_folds, EvalReport, FoldReport, LinkingMode, Pipeline, PipelineConfig, ProbabilitySource,
    QuestionRecord, Setting,
};
use qgen::kb::{Answer, AnswerSet};

use common::mini;

proptest! {
    #[test]
    fn folds_partition_the_items(n in 1usize..200, k in 1usize..8, seed in any::<u64>()) {
        let folds = make_folds(n, k, seed);
        prop_assert_eq!(&folds, &make_folds(n, k, seed));
        let mut tested = Vec::new();
        for f in &folds {
            let (tr, dv, te): (BTreeSet<_>, BTreeSet<_>, BTreeSet<_>) =
                (f.train.iter().collect(), f.dev.iter().collect(), f.test.iter().collect());
            prop_assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
            prop_assert_eq!(tr.len() + dv.len() + te.len(), n);
            tested.extend(f.test.iter().copied());
        }
        tested.sort_unstable();
        prop_assert_eq!(tested, (0..n).collect::<Vec<_>>());
    }
}

fn iris(xs: &[&str]) -> AnswerSet {
    AnswerSet::Bindings(xs.iter().map(|x| Answer::Iri(x.to_string())).collect())
}

#[test]
fn answer_f1_cases() {
    assert_eq!(answer_f1(&iris(&["a", "b"]), &iris(&["a", "b"])), 1.0);
    // precision 1/2, recall 1/3
    assert!((answer_f1(&iris(&["a", "x"]), &iris(&["a", "b", "c"])) - 0.4).abs() < 1e-15);
    assert_eq!(answer_f1(&iris(&["x"]), &iris(&["a"])), 0.0);
    assert_eq!(answer_f1(&iris(&[]), &iris(&[])), 1.0);
    assert_eq!(answer_f1(&iris(&[]), &iris(&["a"])), 0.0);
    assert_eq!(answer_f1(&AnswerSet::Boolean(true), &AnswerSet::Boolean(true)), 1.0);
    assert_eq!(answer_f1(&AnswerSet::Boolean(false), &AnswerSet::Boolean(true)), 0.0);
    assert_eq!(answer_f1(&iris(&["a"]), &AnswerSet::Boolean(true)), 0.0);
}

fn record(f1: f64, first_correct: Option<usize>, complex: bool) -> QuestionRecord {
    QuestionRecord {
        id: String::new(),
        question: String::new(),
        gold_query: String::new(),
        gold: AnswerSet::empty(),
        predicted_query: None,
        predicted: None,
        f1,
        first_correct,
        outputs: 5,
        complex,
        gold_structure_seen: true,
    }
}

#[test]
fn report_aggregates_match_hand_computation() {
    let a = FoldReport::new(0, vec![record(1.0, Some(1), false), record(0.5, Some(3), true), record(0.0, None, true)]);
    let b = FoldReport::new(1, vec![record(1.0, Some(1), true), record(1.0, Some(6), false)]);
    assert!((a.summary.macro_f1 - 0.5).abs() < 1e-15);
    assert!((a.summary.p_at_1 - 1.0 / 3.0).abs() < 1e-15);
    assert!((a.summary.p_at_5 - 2.0 / 3.0).abs() < 1e-15);
    assert!((a.complex.macro_f1 - 0.25).abs() < 1e-15);
    assert!((b.summary.p_at_5 - 0.5).abs() < 1e-15);
    let r = EvalReport::new(Setting::Full, "full", vec![a, b]);
    assert!((r.mean.macro_f1 - 0.75).abs() < 1e-15);
    // sample stdev of {0.5, 1.0}
    assert!((r.stdev.macro_f1 - 0.125f64.sqrt()).abs() < 1e-15);
    assert!((r.mean.p_at_1 - (1.0 / 3.0 + 0.5) / 2.0).abs() < 1e-15);
    assert_eq!(r.mean.questions, 5);
    assert!(r.check_arithmetic());
    let mut broken = r.clone();
    broken.folds[0].records[0].f1 = 0.0;
    assert!(!broken.check_arithmetic());
}

fn oracle_config() -> PipelineConfig {
    PipelineConfig { gamma: 1, clamp: None, source: ProbabilitySource::Oracle, ..PipelineConfig::default() }
}

#[test]
fn oracle_runs_are_deterministic_and_consistent() {
    let (kb, ds) = mini();
    let pipeline = Pipeline::new(&kb, oracle_config()).unwrap();
    let modes = [("gold".to_owned(), LinkingMode::Gold)];
    let settings = [Setting::Full, Setting::MergeOnly, Setting::RankWSub];
    let first = pipeline.run(&ds, &settings, &modes).unwrap();
    let second = pipeline.run(&ds, &settings, &modes).unwrap();
    assert_eq!(first, second);
    for r in &first {
        assert!(r.check_arithmetic(), "{}", r.label);
        assert_eq!(r.mean.questions, ds.pairs.len());
    }
    let (full, merge_only) = (&first[0], &first[1]);
    assert_eq!(full.setting, Setting::Full);
    assert_eq!(merge_only.setting, Setting::MergeOnly);
    assert!(full.mean.macro_f1 >= merge_only.mean.macro_f1);
    assert_eq!(full.mean.macro_f1, 1.0);
}

#[test]
fn more_training_data_does_not_hurt_the_oracle() {
    let (kb, ds) = mini();
    let pipeline = Pipeline::new(&kb, oracle_config()).unwrap();
    let sweep = pipeline.sweep(&ds, &[0.2, 0.6, 1.0], &LinkingMode::Gold).unwrap();
    let f1: Vec<f64> = sweep.iter().map(|(_, r)| r.mean.macro_f1).collect();
    assert!(f1[0] <= f1[2], "{f1:?}");
    assert!(pipeline.sweep(&ds, &[0.0], &LinkingMode::Gold).is_err());
}
