//! Per-substructure probability predictors.
//!
//! Each frequent substructure S* gets an independent binary classifier for
//! "the question's query contains S*". The main model is an attention BiLSTM
//! ([`network`]); a bag-of-words logistic regression is available behind
//! the same interface.

mod baseline;
pub mod network;
mod train;

pub use baseline::BagOfWords;
pub use network::{Head, Layout, Network, Tensor};
pub use train::{fit, Adam, TrainConfig, TrainStats};

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};
use crate::graph::StructureKey;
use crate::mining::{Mention, SubstructureCatalog, TrainingPair};

pub const UNK_TOKEN: &str = "<unk>";
pub const ENTITY_TOKEN: &str = "<entity>";
pub(crate) const UNK_ID: usize = 0;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

/// Lowercases and whitespace-tokenizes `question`, strips punctuation, and
/// collapses every mention span (byte range) into one entity token.
pub fn preprocess(question: &str, spans: &[(usize, usize)]) -> TokenSequence {
    let mut spans: Vec<(usize, usize)> = spans
        .iter()
        .copied()
        .filter(|&(s, e)| {
            let ok = s < e && e <= question.len() && question.is_char_boundary(s) && question.is_char_boundary(e);
            if !ok {
                log::warn!("ignoring invalid mention span {s}..{e}");
            }
            ok
        })
        .collect();
    spans.sort_unstable();
    let mut tokens = Vec::new();
    let words = |text: &str, tokens: &mut Vec<String>| {
        for w in text.split_whitespace() {
            let w: String = w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect();
            if !w.is_empty() {
                tokens.push(w);
            }
        }
    };
    let mut pos = 0;
    for (s, e) in spans {
        if s < pos {
            log::warn!("ignoring overlapping mention span {s}..{e}");
            continue;
        }
        words(&question[pos..s], &mut tokens);
        tokens.push(ENTITY_TOKEN.to_owned());
        pos = e;
    }
    words(&question[pos..], &mut tokens);
    if tokens.is_empty() {
        tokens.push(UNK_TOKEN.to_owned());
    }
    TokenSequence { tokens }
}

pub fn mention_spans(mentions: &[Mention]) -> Vec<(usize, usize)> {
    mentions.iter().map(|m| (m.start, m.end)).collect()
}

/// Token symbol table; ids 0 and 1 are the unknown and entity tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn build<'a>(seqs: impl IntoIterator<Item = &'a TokenSequence>) -> Self {
        let mut words: Vec<&str> = seqs.into_iter().flat_map(|s| s.tokens.iter().map(String::as_str)).collect();
        words.sort_unstable();
        words.dedup();
        let mut tokens = vec![UNK_TOKEN.to_owned(), ENTITY_TOKEN.to_owned()];
        tokens.extend(words.into_iter().filter(|w| *w != UNK_TOKEN && *w != ENTITY_TOKEN).map(str::to_owned));
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn encode(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.tokens.iter().map(|t| self.index.get(t).copied().unwrap_or(UNK_ID)).collect()
    }

    /// Token ids seen exactly once across `encoded`.
    pub fn singletons(&self, encoded: &[Vec<usize>]) -> Vec<bool> {
        let mut counts = vec![0usize; self.len()];
        for seq in encoded {
            for &t in seq {
                counts[t] += 1;
            }
        }
        counts.iter().enumerate().map(|(i, &c)| c == 1 && i > 1).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictorKind {
    #[default]
    BiLstm,
    BagOfWords,
}

impl FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bilstm" => Ok(PredictorKind::BiLstm),
            "bow" | "bag-of-words" => Ok(PredictorKind::BagOfWords),
            other => Err(format!("unknown predictor {other:?} (expected bilstm or bow)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    BiLstm(Network),
    BagOfWords(BagOfWords),
    /// Fallback when training labels are all equal.
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub key: StructureKey,
    pub vocab: Vocab,
    pub model: ModelKind,
    pub train_config: TrainConfig,
    pub dev_accuracy: Option<f64>,
    pub stats: TrainStats,
}

impl PredictorModel {
    /// Probability that the question's query contains this substructure,
    /// with the attention weights when the model has them.
    pub fn forward(&self, seq: &TokenSequence) -> (f64, Vec<f64>) {
        let ids = self.vocab.encode(seq);
        match &self.model {
            ModelKind::BiLstm(net) => {
                let fw = net.forward(&[&ids]);
                let p = net.probabilities(&fw)[[0, 0]];
                (p, fw.alpha.column(0).to_vec())
            }
            ModelKind::BagOfWords(m) => (m.probability(&ids), Vec::new()),
            ModelKind::Constant(p) => (*p, Vec::new()),
        }
    }

    pub fn probability(&self, seq: &TokenSequence) -> f64 {
        self.forward(seq).0
    }
}

/// One predictor per member of FS*, in catalog order.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorSet {
    pub kind: PredictorKind,
    pub models: Vec<PredictorModel>,
}

/// Text of a pair as the predictors see it.
pub fn pair_tokens(pair: &TrainingPair) -> TokenSequence {
    preprocess(&pair.question, &mention_spans(&pair.mentions))
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed of the model for `key`: independent of training order.
pub fn model_seed(seed: u64, key: &StructureKey) -> u64 {
    seed ^ fnv1a(&key.canonical)
}

/// Containment labels of `pairs` over FS*, one row per pair.
pub fn containment_labels(pairs: &[TrainingPair], catalog: &SubstructureCatalog) -> Vec<Vec<bool>> {
    pairs
        .par_iter()
        .map(|p| {
            let key = crate::graph::canonical_key(&p.query);
            match catalog.structure_index(&key) {
                Some(i) => catalog.containment_row(i),
                None => catalog.containment_of(&crate::graph::structure_of(&p.query)),
            }
        })
        .collect()
}

impl PredictorSet {
    /// Trains one predictor per frequent substructure, labeling each pair by
    /// whether its query contains the substructure.
    pub fn train(
        train: &[TrainingPair],
        dev: &[TrainingPair],
        catalog: &SubstructureCatalog,
        cfg: &TrainConfig,
        kind: PredictorKind,
    ) -> Result<PredictorSet> {
        cfg.validate().map_err(Error::Config)?;
        if train.is_empty() {
            return Err(Error::EmptyTrainingData);
        }
        let train_seqs: Vec<TokenSequence> = train.iter().map(pair_tokens).collect();
        let dev_seqs: Vec<TokenSequence> = dev.iter().map(pair_tokens).collect();
        let vocab = Vocab::build(&train_seqs);
        let train_ids: Vec<Vec<usize>> = train_seqs.iter().map(|s| vocab.encode(s)).collect();
        let dev_ids: Vec<Vec<usize>> = dev_seqs.iter().map(|s| vocab.encode(s)).collect();
        let singletons = vocab.singletons(&train_ids);
        let train_labels = containment_labels(train, catalog);
        let dev_labels = containment_labels(dev, catalog);

        let keys = catalog.frequent_keys();
        let models: Vec<PredictorModel> = keys
            .par_iter()
            .enumerate()
            .map(|(j, key)| {
                let labeled = |ids: &[Vec<usize>], labels: &[Vec<bool>]| -> Vec<(Vec<usize>, usize)> {
                    ids.iter().zip(labels).map(|(s, l)| (s.clone(), l[j] as usize)).collect()
                };
                let tr = labeled(&train_ids, &train_labels);
                let dv = labeled(&dev_ids, &dev_labels);
                train_one(key.clone(), &vocab, &tr, &dv, &singletons, cfg, kind)
            })
            .collect();
        Ok(PredictorSet { kind, models })
    }

    /// Probability of every frequent substructure for one question.
    pub fn predict_all(&self, seq: &TokenSequence) -> BTreeMap<StructureKey, f64> {
        self.models.iter().map(|m| (m.key.clone(), m.probability(seq))).collect()
    }

    /// Writes `manifest.json` plus one metadata file and one little-endian
    /// f64 parameter file per model.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_owned(), source })?;
        let mut files = Vec::new();
        for (i, m) in self.models.iter().enumerate() {
            let name = format!("model_{i:04}");
            let mut meta = m.clone();
            if let ModelKind::BiLstm(net) = &m.model {
                let bytes: Vec<u8> = net.theta.iter().flat_map(|x| x.to_le_bytes()).collect();
                let path = dir.join(format!("{name}.bin"));
                std::fs::write(&path, bytes).map_err(|source| Error::Io { path, source })?;
                meta.model = ModelKind::BiLstm(Network { layout: net.layout, theta: Vec::new() });
            }
            write_file(&dir.join(format!("{name}.json")), &serde_json::to_string(&meta)?)?;
            files.push(name);
        }
        let manifest = Manifest { version: MODEL_VERSION, kind: self.kind, models: files };
        write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
    }

    pub fn load(dir: &Path) -> Result<PredictorSet> {
        let manifest: Manifest = serde_json::from_str(&read_file(&dir.join("manifest.json"))?)?;
        if manifest.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported model version {}", manifest.version)));
        }
        let mut models = Vec::new();
        for name in &manifest.models {
            let mut m: PredictorModel = serde_json::from_str(&read_file(&dir.join(format!("{name}.json")))?)?;
            if let ModelKind::BiLstm(net) = &mut m.model {
                let path = dir.join(format!("{name}.bin"));
                let bytes = std::fs::read(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
                if bytes.len() != net.layout.size() * 8 {
                    return Err(Error::Model(format!("{}: expected {} parameters", path.display(), net.layout.size())));
                }
                net.theta = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            }
            models.push(m);
        }
        Ok(PredictorSet { kind: manifest.kind, models })
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    kind: PredictorKind,
    models: Vec<String>,
}

fn train_one(
    key: StructureKey,
    vocab: &Vocab,
    train: &[(Vec<usize>, usize)],
    dev: &[(Vec<usize>, usize)],
    singletons: &[bool],
    cfg: &TrainConfig,
    kind: PredictorKind,
) -> PredictorModel {
    let positives = train.iter().filter(|(_, y)| *y == 1).count();
    let mut stats = TrainStats::default();
    let model = if positives == 0 || positives == train.len() {
        let prevalence = (positives as f64 / train.len() as f64).clamp(0.05, 0.95);
        log::warn!("degenerate label set for {key}: constant probability {prevalence}");
        ModelKind::Constant(prevalence)
    } else {
        match kind {
            PredictorKind::BiLstm => {
                let layout = Layout { vocab: vocab.len(), d_e: cfg.d_e, d_h: cfg.d_h, head: Head::Sigmoid };
                let (net, s) = fit(layout, train, dev, singletons, cfg, model_seed(cfg.seed, &key));
                stats = s;
                ModelKind::BiLstm(net)
            }
            PredictorKind::BagOfWords => ModelKind::BagOfWords(BagOfWords::fit(vocab.len(), train)),
        }
    };
    let mut out = PredictorModel {
        key,
        vocab: vocab.clone(),
        model,
        train_config: cfg.clone(),
        dev_accuracy: None,
        stats,
    };
    if !dev.is_empty() {
        let correct = dev
            .iter()
            .filter(|(ids, y)| {
                let seq = TokenSequence { tokens: ids.iter().map(|&i| out.vocab.tokens[i].clone()).collect() };
                (out.probability(&seq) > 0.5) == (*y == 1)
            })
            .count();
        out.dev_accuracy = Some(correct as f64 / dev.len() as f64);
    }
    log::debug!("trained predictor for {}: dev accuracy {:?}", out.key, out.dev_accuracy);
    out
}

/// A single softmax classifier over TS, used when substructures are not
/// modeled at all.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureClassifier {
    pub keys: Vec<StructureKey>,
    pub vocab: Vocab,
    pub network: Option<Network>,
}

impl StructureClassifier {
    pub fn train(
        train: &[TrainingPair],
        dev: &[TrainingPair],
        catalog: &SubstructureCatalog,
        cfg: &TrainConfig,
    ) -> Result<StructureClassifier> {
        cfg.validate().map_err(Error::Config)?;
        let keys: Vec<StructureKey> = catalog.structures.iter().map(|e| e.key.clone()).collect();
        let train_seqs: Vec<TokenSequence> = train.iter().map(pair_tokens).collect();
        let vocab = Vocab::build(&train_seqs);
        if keys.len() < 2 {
            return Ok(StructureClassifier { keys, vocab, network: None });
        }
        let label = |p: &TrainingPair| catalog.structure_index(&crate::graph::canonical_key(&p.query));
        let tr: Vec<(Vec<usize>, usize)> = train
            .iter()
            .zip(&train_seqs)
            .filter_map(|(p, s)| label(p).map(|y| (vocab.encode(s), y)))
            .collect();
        // Dev questions whose structure is unseen have no class.
        let dv: Vec<(Vec<usize>, usize)> =
            dev.iter().filter_map(|p| label(p).map(|y| (vocab.encode(&pair_tokens(p)), y))).collect();
        let train_ids: Vec<Vec<usize>> = tr.iter().map(|(s, _)| s.clone()).collect();
        let layout = Layout { vocab: vocab.len(), d_e: cfg.d_e, d_h: cfg.d_h, head: Head::Softmax(keys.len()) };
        let (net, _) = fit(layout, &tr, &dv, &vocab.singletons(&train_ids), cfg, cfg.seed);
        Ok(StructureClassifier { keys, vocab, network: Some(net) })
    }

    /// Class distribution over TS, aligned with `keys`.
    pub fn predict(&self, seq: &TokenSequence) -> Vec<f64> {
        match &self.network {
            None => vec![1.0; self.keys.len()],
            Some(net) => {
                let ids = self.vocab.encode(seq);
                net.probabilities(&net.forward(&[&ids])).row(0).to_vec()
            }
        }
    }
}
