use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{answer_f1, is_complex, make_folds, Dataset, EvalReport, FoldReport, QuestionRecord, Setting};
use crate::error::{Error, Result};
use crate::graph::{canonical_key, serialize_query, structure_of, QueryGraph};
use crate::grounding::{add_distractors, entity_spans, gold_linking, ground, Gazetteer, GroundConfig, GroundingResult, Linking};
use crate::kb::{execute, AnswerSet, KnowledgeBase};
use crate::merger::{merge_substructures, MergeCache, MergeConfig, MergeTrace};
use crate::mining::{mine, SubstructureCatalog, TrainingPair};
use crate::predictor::{mention_spans, preprocess, PredictorKind, PredictorSet, StructureClassifier, TrainConfig};
use crate::ranker::{combine, rank_existing, rank_order, Provenance, ScoredStructure, Scorer, DEFAULT_CLAMP};

/// Where substructure probabilities come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbabilitySource {
    Trained(PredictorKind),
    /// Exact containment indicators of the gold structure.
    Oracle,
}

/// How linking candidates are produced for a question.
#[derive(Clone, Debug)]
pub enum LinkingMode {
    /// The symbols of the gold query, score 1.
    Gold,
    /// Gold plus `distractors` same-kind KB symbols per mention at
    /// `factor` times the gold score.
    Noisy { distractors: usize, factor: f64 },
    Gazetteer(Arc<Gazetteer>),
    /// Candidates per question id.
    Provided(Arc<HashMap<String, Linking>>),
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub gamma: usize,
    pub merge: MergeConfig,
    pub ground: GroundConfig,
    pub train: TrainConfig,
    pub folds: usize,
    pub seed: u64,
    /// Probability clamp for scoring; `None` scores with exact probabilities.
    pub clamp: Option<f64>,
    pub source: ProbabilitySource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            gamma: 30,
            merge: MergeConfig::default(),
            ground: GroundConfig::default(),
            train: TrainConfig::default(),
            folds: 5,
            seed: 42,
            clamp: Some(DEFAULT_CLAMP),
            source: ProbabilitySource::Trained(PredictorKind::BiLstm),
        }
    }
}

/// Everything learned from one training split.
#[derive(Clone, Debug)]
pub struct FoldModels {
    pub catalog: SubstructureCatalog,
    pub predictors: Option<PredictorSet>,
    pub classifier: Option<StructureClassifier>,
}

/// Intermediate results for one question.
#[derive(Clone, Debug, Default, Serialize)]
pub struct QuestionTrace {
    pub tokens: Vec<String>,
    /// Frequent substructure probabilities, highest first.
    pub probabilities: Vec<(String, f64)>,
    pub merge: Option<MergeTrace>,
    pub ranked: Vec<ScoredStructure>,
    pub results: Vec<GroundingResult>,
}

/// Exact containment indicators of `gold`'s structure over FS*.
pub fn oracle_probabilities(gold: &QueryGraph, catalog: &SubstructureCatalog) -> Vec<f64> {
    let s = structure_of(gold);
    catalog.containment_of(&s).into_iter().map(|b| b as u8 as f64).collect()
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Linking candidates of one question under `mode`.
pub fn question_linking(mode: &LinkingMode, pair: &TrainingPair, kb: &KnowledgeBase, seed: u64) -> Linking {
    match mode {
        LinkingMode::Gold => gold_linking(&pair.query),
        LinkingMode::Noisy { distractors, factor } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(&pair.id));
            add_distractors(&gold_linking(&pair.query), kb, *distractors, *factor, &mut rng)
        }
        LinkingMode::Gazetteer(g) => g.link(&pair.question),
        LinkingMode::Provided(map) => map.get(&pair.id).cloned().unwrap_or_default(),
    }
}

pub struct Pipeline<'k> {
    pub kb: &'k KnowledgeBase,
    pub cfg: PipelineConfig,
    cache: MergeCache,
}

impl<'k> Pipeline<'k> {
    pub fn new(kb: &'k KnowledgeBase, cfg: PipelineConfig) -> Result<Self> {
        cfg.merge.validate()?;
        cfg.train.validate().map_err(Error::Config)?;
        if cfg.ground.top_k == 0 || cfg.folds == 0 {
            return Err(Error::Config("top-k and fold count must be positive".into()));
        }
        Ok(Pipeline { kb, cfg, cache: MergeCache::new() })
    }

    /// Mines the catalog and trains the models `settings` need.
    pub fn train_fold(&self, train: &[TrainingPair], dev: &[TrainingPair], settings: &[Setting]) -> Result<FoldModels> {
        let catalog = mine(train, self.cfg.gamma)?;
        let ProbabilitySource::Trained(kind) = self.cfg.source else {
            return Ok(FoldModels { catalog, predictors: None, classifier: None });
        };
        let predictors = if settings.iter().any(|s| *s != Setting::RankWoSub) {
            Some(PredictorSet::train(train, dev, &catalog, &self.cfg.train, kind)?)
        } else {
            None
        };
        let classifier = if settings.contains(&Setting::RankWoSub) {
            Some(StructureClassifier::train(train, dev, &catalog, &self.cfg.train)?)
        } else {
            None
        };
        Ok(FoldModels { catalog, predictors, classifier })
    }

    /// Runs one question through ranking, merging and grounding. `gold` is
    /// needed only by the oracle probability source.
    pub fn answer(
        &self,
        models: &FoldModels,
        setting: Setting,
        question: &str,
        spans: &[(usize, usize)],
        linking: &Linking,
        gold: Option<&QueryGraph>,
    ) -> Result<QuestionTrace> {
        let catalog = &models.catalog;
        let seq = preprocess(question, spans);
        let mut trace = QuestionTrace { tokens: seq.tokens.clone(), ..Default::default() };
        let oracle_gold = || gold.ok_or_else(|| Error::Config("the oracle source needs the gold query".into()));

        trace.ranked = if setting == Setting::RankWoSub {
            let scores: Vec<f64> = match (&self.cfg.source, &models.classifier) {
                (ProbabilitySource::Oracle, _) => {
                    let key = canonical_key(oracle_gold()?);
                    catalog.structures.iter().map(|e| (e.key == key) as u8 as f64).collect()
                }
                (_, Some(c)) => c.predict(&seq),
                (_, None) => return Err(Error::Config("rank-wo-sub needs a trained structure classifier".into())),
            };
            let mut ranked: Vec<ScoredStructure> = catalog
                .structures
                .iter()
                .zip(scores)
                .map(|(e, score)| ScoredStructure {
                    key: e.key.clone(),
                    representative: e.representative.clone(),
                    score,
                    provenance: Provenance::Existing,
                    count: e.count,
                })
                .collect();
            ranked.sort_by(rank_order);
            ranked
        } else {
            let probs: Vec<f64> = match (&self.cfg.source, &models.predictors) {
                (ProbabilitySource::Oracle, _) => oracle_probabilities(oracle_gold()?, catalog),
                (_, Some(p)) => {
                    let by_key = p.predict_all(&seq);
                    catalog
                        .frequent_entries()
                        .map(|e| by_key.get(&e.key).copied().ok_or_else(|| Error::MissingProbability(e.key.to_string())))
                        .collect::<Result<_>>()?
                }
                (_, None) => return Err(Error::Config("this setting needs trained predictors".into())),
            };
            let mut listed: Vec<(String, f64)> =
                catalog.frequent_entries().zip(&probs).map(|(e, &p)| (e.representative.to_string(), p)).collect();
            listed.sort_by(|a, b| b.1.total_cmp(&a.1));
            trace.probabilities = listed;
            let scorer = Scorer::from_vec(probs, catalog, self.cfg.clamp);
            match setting {
                Setting::RankWSub => rank_existing(&scorer),
                Setting::MergeOnly | Setting::Full => {
                    let m = merge_substructures(&scorer, &self.cfg.merge, &self.cache)?;
                    let union = m.union();
                    trace.merge = Some(m);
                    if setting == Setting::Full {
                        combine([rank_existing(&scorer), union])
                    } else {
                        union
                    }
                }
                Setting::RankWoSub => unreachable!("handled above"),
            }
        };
        trace.results = match ground(&trace.ranked, linking, self.kb, &self.cfg.ground) {
            Ok(r) => r,
            Err(Error::NoValidGrounding) => Vec::new(),
            Err(e) => return Err(e),
        };
        Ok(trace)
    }

    /// Scores one test question.
    pub fn evaluate_question(
        &self,
        models: &FoldModels,
        setting: Setting,
        pair: &TrainingPair,
        mode: &LinkingMode,
    ) -> Result<QuestionRecord> {
        let linking = question_linking(mode, pair, self.kb, self.cfg.seed);
        let spans = if pair.mentions.is_empty() { entity_spans(&linking) } else { mention_spans(&pair.mentions) };
        let gold = execute(&pair.query, self.kb).unwrap_or_else(|e| {
            log::warn!("gold query of {} fails: {e}", pair.id);
            AnswerSet::empty()
        });
        let trace = self.answer(models, setting, &pair.question, &spans, &linking, Some(&pair.query))?;
        let f1s: Vec<f64> = trace.results.iter().map(|r| answer_f1(&r.answers, &gold)).collect();
        let top = trace.results.first();
        Ok(QuestionRecord {
            id: pair.id.clone(),
            question: pair.question.clone(),
            gold_query: serialize_query(&pair.query),
            gold,
            predicted_query: top.map(|r| serialize_query(&r.query)),
            predicted: top.map(|r| r.answers.clone()),
            f1: f1s.first().copied().unwrap_or(0.0),
            first_correct: f1s.iter().position(|&f| f == 1.0).map(|i| i + 1),
            outputs: trace.results.len(),
            complex: is_complex(&pair.query),
            gold_structure_seen: models.catalog.structure_index(&canonical_key(&pair.query)).is_some(),
        })
    }

    pub fn evaluate_fold(
        &self,
        fold: usize,
        models: &FoldModels,
        setting: Setting,
        test: &[TrainingPair],
        mode: &LinkingMode,
    ) -> Result<FoldReport> {
        let records = test
            .par_iter()
            .map(|p| self.evaluate_question(models, setting, p, mode))
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldReport::new(fold, records))
    }

    /// Cross-validates every combination of `settings` and labelled linking
    /// modes, training once per fold. Reports come out in
    /// setting-major order.
    pub fn run(
        &self,
        dataset: &Dataset,
        settings: &[Setting],
        modes: &[(String, LinkingMode)],
    ) -> Result<Vec<EvalReport>> {
        self.run_with_fraction(dataset, settings, modes, 1.0)
    }

    fn run_with_fraction(
        &self,
        dataset: &Dataset,
        settings: &[Setting],
        modes: &[(String, LinkingMode)],
        fraction: f64,
    ) -> Result<Vec<EvalReport>> {
        if dataset.pairs.is_empty() {
            return Err(Error::EmptyTrainingData);
        }
        let folds = make_folds(dataset.pairs.len(), self.cfg.folds, self.cfg.seed);
        let take = |idx: &[usize]| -> Vec<TrainingPair> { idx.iter().map(|&i| dataset.pairs[i].clone()).collect() };
        let mut per_combo: BTreeMap<(usize, usize), Vec<FoldReport>> = BTreeMap::new();
        for (f, fold) in folds.iter().enumerate() {
            let mut train_idx = fold.train.clone();
            if fraction < 1.0 {
                train_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.cfg.seed ^ f as u64));
                train_idx.truncate(((train_idx.len() as f64 * fraction).ceil() as usize).max(1));
            }
            let train = take(&train_idx);
            let dev = take(&fold.dev);
            let test = take(&fold.test);
            log::info!("fold {f}: {} train, {} dev, {} test", train.len(), dev.len(), test.len());
            let models = self.train_fold(&train, &dev, settings)?;
            for (si, &setting) in settings.iter().enumerate() {
                for (mi, (_, mode)) in modes.iter().enumerate() {
                    let report = self.evaluate_fold(f, &models, setting, &test, mode)?;
                    per_combo.entry((si, mi)).or_default().push(report);
                }
            }
        }
        Ok(per_combo
            .into_iter()
            .map(|((si, mi), reports)| {
                let setting = settings[si];
                let label = if modes.len() == 1 { setting.name().to_owned() } else { format!("{setting}/{}", modes[mi].0) };
                EvalReport::new(setting, label, reports)
            })
            .collect())
    }

    /// Results of the full setting when each fold trains on a seeded random
    /// fraction of its training split.
    pub fn sweep(&self, dataset: &Dataset, fractions: &[f64], mode: &LinkingMode) -> Result<Vec<(f64, EvalReport)>> {
        fractions
            .iter()
            .map(|&f| {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Config(format!("training fraction {f} outside (0, 1]")));
                }
                let mut reports =
                    self.run_with_fraction(dataset, &[Setting::Full], &[(format!("{f}"), mode.clone())], f)?;
                let mut r = reports.remove(0);
                r.label = format!("full@{f:.1}");
                Ok((f, r))
            })
            .collect()
    }
}
