use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, Result};
use crate::graph::{parse_query_with, PrefixTable};
use crate::mining::{Mention, TrainingPair};

#[derive(Clone, Debug, Serialize)]
pub struct Dataset {
    pub name: String,
    pub pairs: Vec<TrainingPair>,
    /// `(record id, reason)` for records that could not be used.
    pub skipped: Vec<(String, String)>,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default, alias = "_id")]
    id: Option<serde_json::Value>,
    #[serde(alias = "corrected_question")]
    question: String,
    #[serde(alias = "sparql_query")]
    sparql: String,
    #[serde(default)]
    mentions: Vec<RawMention>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawMention {
    Span { start: usize, end: usize },
    Surface(String),
    Full { surface: String },
}

/// Reads a JSON array of `{question, sparql, mentions?}` records (LC-QuAD
/// field names are accepted too). Records that fail to parse are skipped
/// and listed in [`Dataset::skipped`].
pub fn load_dataset(path: &Path, prefixes: &PrefixTable) -> Result<Dataset> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_dataset(&read_file(path)?, &name, prefixes)
}

pub fn parse_dataset(text: &str, name: &str, prefixes: &PrefixTable) -> Result<Dataset> {
    let records: Vec<RawRecord> = serde_json::from_str(text)?;
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (i, r) in records.into_iter().enumerate() {
        let id = match r.id {
            Some(serde_json::Value::String(s)) => s,
            Some(v) => v.to_string(),
            None => i.to_string(),
        };
        let query = match parse_query_with(&r.sparql, prefixes) {
            Ok(q) => q,
            Err(e) => {
                log::info!("skipping record {id}: {e}");
                skipped.push((id, e.to_string()));
                continue;
            }
        };
        let mut mentions = Vec::new();
        for m in r.mentions {
            let resolved = match m {
                RawMention::Span { start, end } => r
                    .question
                    .get(start..end)
                    .map(|s| Mention { start, end, surface: s.to_owned() }),
                RawMention::Surface(surface) | RawMention::Full { surface } => r
                    .question
                    .find(&surface)
                    .map(|start| Mention { start, end: start + surface.len(), surface }),
            };
            match resolved {
                Some(m) => mentions.push(m),
                None => log::warn!("record {id}: mention does not match the question text"),
            }
        }
        pairs.push(TrainingPair { id, question: r.question, query, mentions });
    }
    if !skipped.is_empty() {
        log::warn!("{name}: skipped {} of {} records", skipped.len(), skipped.len() + pairs.len());
    }
    Ok(Dataset { name: name.to_owned(), pairs, skipped })
}

/// Index sets of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` folds over `n` items: the test sets partition a seeded shuffle, a
/// tenth of the items (taken from the following folds) is held out as dev,
/// and the rest trains. With `k = 5` this is a 70/10/20 split.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Vec<Fold> {
    let k = k.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let bounds: Vec<usize> = (0..=k).map(|i| i * n / k).collect();
    let dev_size = (n as f64 * 0.1).round() as usize;
    (0..k)
        .map(|i| {
            let test: Vec<usize> = order[bounds[i]..bounds[i + 1]].to_vec();
            let rest: Vec<usize> = order[bounds[i + 1]..].iter().chain(&order[..bounds[i]]).copied().collect();
            let dev_size = if k == 1 { 0 } else { dev_size.min(rest.len().saturating_sub(1)) };
            let mut dev = rest[..dev_size].to_vec();
            let mut train = rest[dev_size..].to_vec();
            let mut test = test;
            dev.sort_unstable();
            train.sort_unstable();
            test.sort_unstable();
            Fold { train, dev, test }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_skips() {
        let text = r#"[
            {"question": "Who directed Jaws?", "sparql": "SELECT ?x WHERE { :Jaws :director ?x }", "mentions": ["Jaws"]},
            {"_id": 7, "corrected_question": "Union?", "sparql_query": "SELECT ?x WHERE { { ?x :p :a } UNION { ?x :p :b } }"}
        ]"#;
        let d = parse_dataset(text, "t", &PrefixTable::default()).unwrap();
        assert_eq!(d.pairs.len(), 1);
        assert_eq!(d.pairs[0].mentions[0].start, 13);
        assert_eq!(d.skipped[0].0, "7");
    }

    #[test]
    fn folds_partition() {
        let folds = make_folds(40, 5, 1);
        let mut tests: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        tests.sort_unstable();
        assert_eq!(tests, (0..40).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!((f.train.len(), f.dev.len(), f.test.len()), (28, 4, 8));
        }
        assert_eq!(folds, make_folds(40, 5, 1));
    }
}
