use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qgen::eval::{
    load_dataset, make_folds, summary_table, Dataset, EvalReport, FoldModels, LinkingMode, Pipeline, PipelineConfig,
    ProbabilitySource, Setting,
};
use qgen::graph::PrefixTable;
use qgen::grounding::{entity_spans, load_linking, Gazetteer, GroundConfig, Linking};
use qgen::kb::{KnowledgeBase, Schema};
use qgen::merger::MergeConfig;
use qgen::mining::{mine, SubstructureCatalog};
use qgen::predictor::{PredictorKind, PredictorSet, TrainConfig};

#[derive(Parser)]
#[command(name = "qgen", version, about = "Query generation from frequent query substructures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine query structures and frequent substructures from a dataset.
    Mine {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 30)]
        gamma: usize,
        /// Write the catalog as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train substructure predictors on a whole dataset and save them.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Output directory for the catalog and predictors.
        #[arg(long)]
        model_dir: PathBuf,
    },
    /// Answer one question with saved models and print the intermediate steps.
    Generate {
        #[command(flatten)]
        kb: KbArgs,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        question: String,
        /// Dictionary linker used when no --linking file is given.
        #[arg(long)]
        gazetteer: Option<PathBuf>,
        /// JSON list of mentions with scored candidates for this question.
        #[arg(long, conflicts_with = "gazetteer")]
        linking: Option<PathBuf>,
        #[arg(long, default_value = "full")]
        setting: Setting,
        #[command(flatten)]
        search: SearchArgs,
        /// Print the trace as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Cross-validate one or more settings.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "full")]
        setting: Vec<Setting>,
    },
    /// Cross-validate all four settings.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare gold linking with linking padded by distractor candidates.
    NoisyLinking {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 4)]
        distractors: usize,
        /// Distractor score relative to the correct candidate.
        #[arg(long, default_value_t = 0.9)]
        factor: f64,
    },
}

#[derive(Args)]
struct KbArgs {
    /// Tab-separated facts.
    #[arg(long)]
    kb: PathBuf,
    /// Domain, range and disjointness declarations.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Extra `prefix namespace` lines.
    #[arg(long)]
    prefixes: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    prefixes: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Predictor family: bilstm or bow.
    #[arg(long, default_value = "bilstm")]
    predictor: PredictorKind,
    #[arg(long, default_value_t = 100)]
    d_e: usize,
    #[arg(long, default_value_t = 128)]
    d_h: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 30)]
    gamma: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl ModelArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            d_e: self.d_e,
            d_h: self.d_h,
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Clone)]
struct SearchArgs {
    /// Merge rounds.
    #[arg(long = "K", default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0.3)]
    theta: f64,
    /// Maximum triples of a merged structure.
    #[arg(long, default_value_t = 5)]
    tau: usize,
    /// Maximum aggregations of a merged structure.
    #[arg(long, default_value_t = 2)]
    delta: usize,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Probability clamp used when scoring; 0 disables it.
    #[arg(long, default_value_t = 1e-6)]
    clamp: f64,
}

impl SearchArgs {
    fn merge(&self) -> MergeConfig {
        MergeConfig { k: self.k, theta: self.theta, tau: self.tau, delta: self.delta, ..MergeConfig::default() }
    }

    fn clamp(&self) -> Option<f64> {
        (self.clamp > 0.0).then_some(self.clamp)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    kb: KbArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Use exact containment indicators of the gold query instead of predictors.
    #[arg(long)]
    oracle: bool,
    /// Dictionary linker; gold linking is used when neither this nor --linking is given.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    /// JSON object mapping question ids to mention candidates.
    #[arg(long, conflicts_with = "gazetteer")]
    linking: Option<PathBuf>,
    /// Directory for the JSON reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn prefix_table(path: Option<&Path>) -> Result<PrefixTable> {
    match path {
        Some(p) => PrefixTable::load(p).with_context(|| format!("reading prefixes from {}", p.display())),
        None => Ok(PrefixTable::default()),
    }
}

fn load_kb(args: &KbArgs, px: &PrefixTable) -> Result<KnowledgeBase> {
    let mut kb = KnowledgeBase::load(&args.kb, px)?;
    if let Some(schema) = &args.schema {
        kb = kb.with_schema(Schema::load(schema, px)?);
    }
    log::info!("{} facts", kb.fact_count());
    Ok(kb)
}

fn load_data(path: &Path, px: &PrefixTable) -> Result<Dataset> {
    let ds = load_dataset(path, px)?;
    for (id, reason) in &ds.skipped {
        log::warn!("skipped question {id}: {reason}");
    }
    log::info!("{} questions", ds.pairs.len());
    Ok(ds)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn base_linking(run: &RunArgs, px: &PrefixTable) -> Result<(String, LinkingMode)> {
    if let Some(g) = &run.gazetteer {
        return Ok(("gazetteer".into(), LinkingMode::Gazetteer(Arc::new(Gazetteer::load(g, px)?))));
    }
    if let Some(l) = &run.linking {
        let text = fs::read_to_string(l).with_context(|| format!("reading {}", l.display()))?;
        let map: HashMap<String, Linking> = serde_json::from_str(&text).context("parsing linking candidates")?;
        return Ok(("provided".into(), LinkingMode::Provided(Arc::new(map))));
    }
    Ok(("gold".into(), LinkingMode::Gold))
}

fn run_eval(run: &RunArgs, settings: &[Setting], modes: Vec<(String, LinkingMode)>) -> Result<Vec<EvalReport>> {
    let px = prefix_table(run.kb.prefixes.as_deref())?;
    let kb = load_kb(&run.kb, &px)?;
    let ds = load_data(&run.dataset, &px)?;
    let cfg = PipelineConfig {
        gamma: run.model.gamma,
        merge: run.search.merge(),
        ground: GroundConfig { top_k: run.search.top_k, ..GroundConfig::default() },
        train: run.model.train_config(),
        folds: run.folds,
        seed: run.model.seed,
        clamp: run.search.clamp(),
        source: if run.oracle { ProbabilitySource::Oracle } else { ProbabilitySource::Trained(run.model.predictor) },
    };
    let reports = Pipeline::new(&kb, cfg)?.run(&ds, settings, &modes)?;
    if let Some(dir) = &run.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for r in &reports {
            write_json(&dir.join(format!("{}.json", r.label.replace('/', "_"))), r)?;
        }
    }
    print!("{}", summary_table(&reports));
    Ok(reports)
}

fn train(data: &DataArgs, model: &ModelArgs, dir: &Path) -> Result<()> {
    let px = prefix_table(data.prefixes.as_deref())?;
    let ds = load_data(&data.dataset, &px)?;
    // One fold's dev slice for early stopping; everything else trains.
    let split = make_folds(ds.pairs.len(), 10, model.seed).remove(0);
    let dev: Vec<_> = split.test.iter().map(|&i| ds.pairs[i].clone()).collect();
    let train: Vec<_> = split.train.iter().chain(&split.dev).map(|&i| ds.pairs[i].clone()).collect();
    let catalog = mine(&train, model.gamma)?;
    println!("{} structures, {} frequent substructures", catalog.structures.len(), catalog.frequent.len());
    let set = PredictorSet::train(&train, &dev, &catalog, &model.train_config(), model.predictor)?;
    set.save(dir)?;
    write_json(&dir.join("catalog.json"), &catalog)?;
    for m in &set.models {
        let acc = m.dev_accuracy.map_or("-".to_owned(), |a| format!("{a:.3}"));
        println!("{:<60} dev accuracy {acc}", m.key.to_string());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn generate(
    kb_args: &KbArgs,
    dir: &Path,
    question: &str,
    gazetteer: Option<&Path>,
    linking: Option<&Path>,
    setting: Setting,
    search: &SearchArgs,
    json: bool,
) -> Result<()> {
    if setting == Setting::RankWoSub {
        bail!("generate supports the settings that use substructure predictors");
    }
    let px = prefix_table(kb_args.prefixes.as_deref())?;
    let kb = load_kb(kb_args, &px)?;
    let catalog_path = dir.join("catalog.json");
    let catalog: SubstructureCatalog = serde_json::from_str(
        &fs::read_to_string(&catalog_path).with_context(|| format!("reading {}", catalog_path.display()))?,
    )?;
    let predictors = PredictorSet::load(dir)?;
    let linking = match (gazetteer, linking) {
        (Some(g), _) => Gazetteer::load(g, &px)?.link(question),
        (None, Some(l)) => load_linking(l)?,
        (None, None) => bail!("give --gazetteer or --linking"),
    };
    let cfg = PipelineConfig {
        merge: search.merge(),
        ground: GroundConfig { top_k: search.top_k, ..GroundConfig::default() },
        clamp: search.clamp(),
        source: ProbabilitySource::Trained(predictors.kind),
        ..PipelineConfig::default()
    };
    let models = FoldModels { catalog, predictors: Some(predictors), classifier: None };
    let trace = Pipeline::new(&kb, cfg)?.answer(&models, setting, question, &entity_spans(&linking), &linking, None)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&trace)?);
        return Ok(());
    }
    println!("tokens: {}", trace.tokens.join(" "));
    println!("\nsubstructure probabilities:");
    for (s, p) in trace.probabilities.iter().take(10) {
        println!("  {p:.3}  {s}");
    }
    if let Some(m) = &trace.merge {
        let sizes: Vec<String> = m.rounds.iter().map(|r| r.len().to_string()).collect();
        println!("\nmerge rounds: {}", sizes.join(" -> "));
    }
    println!("\nranked structures:");
    for s in trace.ranked.iter().take(5) {
        println!("  {:.3e}  {:?}  {}", s.score, s.provenance, s.representative);
    }
    println!("\nqueries:");
    if trace.results.is_empty() {
        println!("  no valid grounding");
    }
    for (i, r) in trace.results.iter().enumerate() {
        println!("  {}. {}", i + 1, qgen::graph::serialize_query(&r.query));
        println!("     answers: {}", serde_json::to_string(&r.answers)?);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Mine { data, gamma, out } => {
            let px = prefix_table(data.prefixes.as_deref())?;
            let ds = load_data(&data.dataset, &px)?;
            let catalog = mine(&ds.pairs, gamma)?;
            println!("{} structures, {} frequent substructures (gamma {gamma})", catalog.structures.len(), catalog.frequent.len());
            for s in &catalog.structures {
                println!("  {:>5}  {}", s.count, s.representative);
            }
            println!("frequent:");
            for s in catalog.frequent_entries() {
                println!("  {:>5}  {}", s.count, s.representative);
            }
            if let Some(out) = out {
                write_json(&out, &catalog)?;
            }
        }
        Command::Train { data, model, model_dir } => train(&data, &model, &model_dir)?,
        Command::Generate { kb, model_dir, question, gazetteer, linking, setting, search, json } => generate(
            &kb,
            &model_dir,
            &question,
            gazetteer.as_deref(),
            linking.as_deref(),
            setting,
            &search,
            json,
        )?,
        Command::Eval { run, setting } => {
            let mode = base_linking(&run, &prefix_table(run.kb.prefixes.as_deref())?)?;
            run_eval(&run, &setting, vec![mode])?;
        }
        Command::Ablate { run } => {
            let mode = base_linking(&run, &prefix_table(run.kb.prefixes.as_deref())?)?;
            run_eval(&run, &Setting::ALL, vec![mode])?;
        }
        Command::NoisyLinking { run, distractors, factor } => {
            let modes = vec![
                ("gold".to_owned(), LinkingMode::Gold),
                ("noisy".to_owned(), LinkingMode::Noisy { distractors, factor }),
            ];
            let reports = run_eval(&run, &[Setting::Full], modes)?;
            let (g, n) = (&reports[0].mean, &reports[1].mean);
            println!(
                "P@1 drop {:.3}, P@5 drop {:.3}, F1 drop {:.3}",
                g.p_at_1 - n.p_at_1,
                g.p_at_5 - n.p_at_5,
                g.macro_f1 - n.macro_f1
            );
        }
    }
    Ok(())
}
