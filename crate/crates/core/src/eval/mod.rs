//! Datasets, cross-validation and end-to-end metrics.

mod dataset;
mod pipeline;

pub use dataset::{load_dataset, make_folds, parse_dataset, Dataset, Fold};
pub use pipeline::{
    oracle_probabilities, question_linking, FoldModels, LinkingMode, Pipeline, PipelineConfig, ProbabilitySource,
    QuestionTrace,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::QueryGraph;
use crate::kb::AnswerSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    /// Existing structures ranked by substructure probabilities, plus merging.
    #[default]
    Full,
    /// One classifier over training structures; no substructures.
    RankWoSub,
    /// Existing structures ranked by substructure probabilities.
    RankWSub,
    /// Merged structures only.
    MergeOnly,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::Full, Setting::RankWoSub, Setting::RankWSub, Setting::MergeOnly];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Full => "full",
            Setting::RankWoSub => "rank-wo-sub",
            Setting::RankWSub => "rank-w-sub",
            Setting::MergeOnly => "merge-only",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Setting::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown setting {s:?} (expected full, rank-wo-sub, rank-w-sub or merge-only)"))
    }
}

/// Set-based F1 between answer sets. Two empty binding sets agree (F1 1);
/// boolean answers score 1 when equal; a boolean never matches bindings.
pub fn answer_f1(predicted: &AnswerSet, gold: &AnswerSet) -> f64 {
    match (predicted, gold) {
        (AnswerSet::Boolean(a), AnswerSet::Boolean(b)) => (a == b) as u8 as f64,
        (AnswerSet::Bindings(p), AnswerSet::Bindings(g)) => {
            if p.is_empty() && g.is_empty() {
                return 1.0;
            }
            let hit = p.intersection(g).count() as f64;
            if hit == 0.0 {
                return 0.0;
            }
            let (precision, recall) = (hit / p.len() as f64, hit / g.len() as f64);
            2.0 * precision * recall / (precision + recall)
        }
        _ => 0.0,
    }
}

/// Questions with at least two triples or an aggregate.
pub fn is_complex(q: &QueryGraph) -> bool {
    q.triple_count() >= 2 || q.aggregation_count(false) > 0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub gold_query: String,
    pub gold: AnswerSet,
    /// Top-1 output, if any query was produced.
    pub predicted_query: Option<String>,
    pub predicted: Option<AnswerSet>,
    pub f1: f64,
    /// 1-based rank of the first output with F1 = 1 among the top-k.
    pub first_correct: Option<usize>,
    pub outputs: usize,
    pub complex: bool,
    pub gold_structure_seen: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub questions: usize,
    pub macro_f1: f64,
    pub p_at_1: f64,
    pub p_at_5: f64,
}

impl Summary {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a QuestionRecord>) -> Summary {
        let mut s = Summary::default();
        for r in records {
            s.questions += 1;
            s.macro_f1 += r.f1;
            s.p_at_1 += r.first_correct.is_some_and(|k| k <= 1) as u8 as f64;
            s.p_at_5 += r.first_correct.is_some_and(|k| k <= 5) as u8 as f64;
        }
        if s.questions > 0 {
            let n = s.questions as f64;
            s.macro_f1 /= n;
            s.p_at_1 /= n;
            s.p_at_5 /= n;
        }
        s
    }

    fn values(&self) -> [f64; 3] {
        [self.macro_f1, self.p_at_1, self.p_at_5]
    }

    fn from_values(questions: usize, v: [f64; 3]) -> Summary {
        Summary { questions, macro_f1: v[0], p_at_1: v[1], p_at_5: v[2] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub summary: Summary,
    pub complex: Summary,
    pub records: Vec<QuestionRecord>,
}

impl FoldReport {
    pub fn new(fold: usize, records: Vec<QuestionRecord>) -> FoldReport {
        FoldReport {
            fold,
            summary: Summary::of(&records),
            complex: Summary::of(records.iter().filter(|r| r.complex)),
            records,
        }
    }
}

/// Per-fold results with the mean and standard deviation across folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    pub label: String,
    pub folds: Vec<FoldReport>,
    pub mean: Summary,
    pub stdev: Summary,
    pub complex_mean: Summary,
}

impl EvalReport {
    pub fn new(setting: Setting, label: impl Into<String>, folds: Vec<FoldReport>) -> EvalReport {
        let (mean, stdev) = mean_stdev(folds.iter().map(|f| &f.summary));
        let (complex_mean, _) = mean_stdev(folds.iter().map(|f| &f.complex).filter(|s| s.questions > 0));
        EvalReport { setting, label: label.into(), folds, mean, stdev, complex_mean }
    }

    /// Recomputes every aggregate from the per-question records.
    pub fn check_arithmetic(&self) -> bool {
        let close = |a: &Summary, b: &Summary| a.questions == b.questions && a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() < 1e-12);
        self.folds.iter().all(|f| {
            close(&f.summary, &Summary::of(&f.records)) && close(&f.complex, &Summary::of(f.records.iter().filter(|r| r.complex)))
        }) && {
            let again = EvalReport::new(self.setting, self.label.clone(), self.folds.clone());
            close(&again.mean, &self.mean) && close(&again.stdev, &self.stdev)
        }
    }

    /// All question records across folds.
    pub fn records(&self) -> impl Iterator<Item = &QuestionRecord> + '_ {
        self.folds.iter().flat_map(|f| f.records.iter())
    }
}

fn mean_stdev<'a>(summaries: impl Iterator<Item = &'a Summary>) -> (Summary, Summary) {
    let list: Vec<&Summary> = summaries.collect();
    if list.is_empty() {
        return (Summary::default(), Summary::default());
    }
    let n = list.len() as f64;
    let questions: usize = list.iter().map(|s| s.questions).sum();
    let mut mean = [0.0; 3];
    for s in &list {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v / n;
        }
    }
    let mut var = [0.0; 3];
    if list.len() > 1 {
        for s in &list {
            for ((acc, v), m) in var.iter_mut().zip(s.values()).zip(mean) {
                *acc += (v - m).powi(2) / (n - 1.0);
            }
        }
    }
    (Summary::from_values(questions, mean), Summary::from_values(questions, var.map(f64::sqrt)))
}

/// Human-readable table: one row per report.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<24} {:>6} {:>16} {:>16} {:>16} {:>10}\n",
        "setting", "n", "F1", "P@1", "P@5", "complex F1"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<24} {:>6} {:>7.3} ± {:<6.3} {:>7.3} ± {:<6.3} {:>7.3} ± {:<6.3} {:>10.3}\n",
            r.label,
            r.mean.questions,
            r.mean.macro_f1,
            r.stdev.macro_f1,
            r.mean.p_at_1,
            r.stdev.p_at_1,
            r.mean.p_at_5,
            r.stdev.p_at_5,
            r.complex_mean.macro_f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Answer;

    fn set(xs: &[&str]) -> AnswerSet {
        AnswerSet::Bindings(xs.iter().map(|x| Answer::Iri((*x).to_owned())).collect())
    }

    #[test]
    fn f1_cases() {
        assert_eq!(answer_f1(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(answer_f1(&set(&["a"]), &set(&["b"])), 0.0);
        assert!((answer_f1(&set(&["a", "b"]), &set(&["b", "c"])) - 0.5).abs() < 1e-12);
        assert_eq!(answer_f1(&set(&[]), &set(&[])), 1.0);
        assert_eq!(answer_f1(&AnswerSet::Boolean(true), &set(&["a"])), 0.0);
    }

    #[test]
    fn report_arithmetic() {
        let rec = |f1: f64, k: Option<usize>| QuestionRecord {
            id: String::new(),
            question: String::new(),
            gold_query: String::new(),
            gold: set(&["a"]),
            predicted_query: None,
            predicted: None,
            f1,
            first_correct: k,
            outputs: 0,
            complex: k.is_some(),
            gold_structure_seen: true,
        };
        let folds = vec![
            FoldReport::new(0, vec![rec(1.0, Some(1)), rec(0.0, None)]),
            FoldReport::new(1, vec![rec(0.5, Some(3)), rec(1.0, Some(1))]),
        ];
        let r = EvalReport::new(Setting::Full, "full", folds);
        assert!((r.mean.macro_f1 - 0.625).abs() < 1e-12);
        assert!((r.mean.p_at_1 - 0.5).abs() < 1e-12);
        assert!((r.mean.p_at_5 - 0.75).abs() < 1e-12);
        assert!(r.check_arithmetic());
        assert!(summary_table(&[r]).contains("full"));
    }

    #[test]
    fn settings_parse() {
        for s in Setting::ALL {
            assert_eq!(s.name().parse::<Setting>().unwrap(), s);
        }
    }
}
