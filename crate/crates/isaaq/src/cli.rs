//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use isaaq_core::corpus::{Corpus, QuestionKind, SplitName, Subject};
use isaaq_core::ensemble::{complementarity_report, ensemble_predict, fit_calibration, score_table, CalibrationModel, FeatureSet};
use isaaq_core::eval::{ablate, evaluate, export_attention, AblationPlan, AblationVariant, Predictions};
use isaaq_core::retrieval::RetrieverKind;
use isaaq_core::solvers::{DiagramMcSolver, SolverScores};
use isaaq_core::vision::{acquire_rois_capped, BBox, DiagramFeaturizer, GridHistogram, RoiSource};
use serde_json::json;

use crate::cache::cache_dir;
use crate::checkpoint::{load_checkpoint, save_checkpoint, AnySolver, CheckpointMeta};
use crate::config::RunConfig;
use crate::convert::{convert, ConvertOptions};
use crate::dataset::{boxes_path, image_path, load_boxes, load_dataset, load_image, read_json, save_image, write_json};
use crate::error::{io, Error, Result};
use crate::features::{FeatureManifest, FeatureStore};
use crate::heatmap::render_heatmap;
use crate::pipeline::{
    cached_passages, corpus_encoder, diagram_input, diagram_inputs, labels, load_encoder, load_examples, read_scores,
    retrieve_to_cache, score_all, text_example, train_any, write_scores, FrozenEncoder,
};

#[derive(Debug, Parser)]
#[command(name = "isaaq", version, about = "Textbook question answering with transformers and BUTD attention")]
pub struct Cli {
    /// Dataset root holding corpus.json, questions.json and splits.json.
    #[arg(long, global = true, default_value = ".")]
    pub data: PathBuf,
    /// Cache directory for passages, features, checkpoints and scores.
    #[arg(long, global = true, env = "ISAAQ_CACHE_DIR")]
    pub cache: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert the raw TQA release into the dataset layout.
    Convert(ConvertArgs),
    /// Retrieve background passages for one split.
    Retrieve(RetrieveArgs),
    /// Extract region features for every diagram.
    Features(FeaturesArgs),
    /// Train one solver.
    Train(TrainArgs),
    /// Score checkpoints on a split and report accuracies.
    Evaluate(EvaluateArgs),
    /// Fit or apply the calibration ensemble.
    #[command(subcommand)]
    Ensemble(EnsembleCommand),
    /// Train and report each diagram-solver ablation variant.
    Ablate(AblateArgs),
    /// Dump attention weights of a diagram solver for one question.
    ExportAttention(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Task {
    Tf,
    TextMc,
    DiagramMc,
}

impl From<Task> for QuestionKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Tf => QuestionKind::TrueFalse,
            Task::TextMc => QuestionKind::TextMc,
            Task::DiagramMc => QuestionKind::DiagramMc,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Retriever {
    Ir,
    Nsp,
    Nn,
}

impl From<Retriever> for RetrieverKind {
    fn from(r: Retriever) -> Self {
        match r {
            Retriever::Ir => RetrieverKind::Ir,
            Retriever::Nsp => RetrieverKind::Nsp,
            Retriever::Nn => RetrieverKind::Nn,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Train,
    #[value(alias = "val")]
    Validation,
    Test,
}

impl From<Split> for SplitName {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitName::Train,
            Split::Validation => SplitName::Validation,
            Split::Test => SplitName::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Source {
    Annotations,
    Trivial,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Directory of the raw release.
    #[arg(long)]
    pub raw: PathBuf,
    /// Output dataset root.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON object mapping lesson ids to life, earth or physical.
    #[arg(long)]
    pub subjects: Option<PathBuf>,
    #[arg(long)]
    pub default_subject: Option<String>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long, value_enum)]
    pub retriever: Retriever,
    #[arg(long, value_enum)]
    pub split: Split,
    /// Shipped config name or TOML path; supplies the budget and encoder shape.
    #[arg(long, default_value = "text_mc")]
    pub config: String,
    /// Frozen encoder directory for NSP and NN; defaults to a seeded toy encoder.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long, value_enum, default_value = "annotations")]
    pub source: Source,
    #[arg(long, default_value = "diagram_mc")]
    pub config: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long, value_enum)]
    pub retriever: Retriever,
    #[arg(long)]
    pub config: String,
    /// Initialise from an encoder directory instead of a fresh toy encoder.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Checkpoint directory; defaults to `<cache>/checkpoints/<task>.<retriever>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub split: Split,
    /// Checkpoint directories to score.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Previously written score files.
    #[arg(long = "scores")]
    pub scores: Vec<PathBuf>,
    /// Calibration models; their predictions form the `ensemble` row.
    #[arg(long = "ensemble")]
    pub ensembles: Vec<PathBuf>,
    /// Report directory; defaults to `<cache>/reports`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EnsembleCommand {
    /// Fit a calibration model on labelled score files.
    Fit {
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also feed the gap to the best option.
        #[arg(long)]
        margin: bool,
    },
    /// Apply a calibration model, writing `ensemble` score rows.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Comma-separated variants or `all`.
    #[arg(long, default_value = "all")]
    pub plan: String,
    #[arg(long, default_value = "diagram_mc")]
    pub config: String,
    #[arg(long, value_enum, default_value = "ir")]
    pub retriever: Retriever,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also render the predicted option's attention over the diagram.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

struct Ctx {
    data: PathBuf,
    cache: PathBuf,
}

impl Ctx {
    fn corpus(&self) -> Result<Corpus> {
        load_dataset(&self.data)
    }
}

/// Parses `args`, runs the command and returns its JSON summary.
pub fn run_from<I, T>(args: I) -> Result<serde_json::Value>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<serde_json::Value> {
    let cache = cli.cache.clone().unwrap_or_else(|| cache_dir(&cli.data));
    let ctx = Ctx { data: cli.data, cache };
    match cli.command {
        Command::Convert(a) => cmd_convert(a),
        Command::Retrieve(a) => cmd_retrieve(&ctx, a),
        Command::Features(a) => cmd_features(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Ensemble(c) => cmd_ensemble(&ctx, c),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::ExportAttention(a) => cmd_export(&ctx, a),
    }
}

fn parse_subject(s: &str) -> Result<Subject> {
    serde_json::from_value(json!(s.to_lowercase())).map_err(|_| Error::Usage(format!("unknown subject {s:?}")))
}

fn cmd_convert(a: ConvertArgs) -> Result<serde_json::Value> {
    let mut opts = ConvertOptions::default();
    if let Some(p) = &a.subjects {
        let raw: BTreeMap<String, String> = read_json(p)?;
        for (k, v) in raw {
            opts.subjects.insert(k, parse_subject(&v)?);
        }
    }
    opts.default_subject = a.default_subject.as_deref().map(parse_subject).transpose()?;
    let summary = convert(&a.raw, &a.out, &opts)?;
    Ok(json!({ "command": "convert", "out": a.out, "summary": summary }))
}

fn frozen_encoder(corpus: &Corpus, cfg: &RunConfig, dir: Option<&Path>) -> Result<FrozenEncoder> {
    let encoder = match dir {
        Some(d) => load_encoder(d)?,
        None => corpus_encoder(corpus, cfg)?,
    };
    Ok(FrozenEncoder { encoder, max_len: cfg.train.max_len, seed: cfg.train.seed })
}

fn cmd_retrieve(ctx: &Ctx, a: RetrieveArgs) -> Result<serde_json::Value> {
    let corpus = ctx.corpus()?;
    let cfg = RunConfig::load(&a.config)?;
    let kind: RetrieverKind = a.retriever.into();
    let split: SplitName = a.split.into();
    let frozen = match kind {
        RetrieverKind::Ir => None,
        _ => Some(frozen_encoder(&corpus, &cfg, a.encoder.as_deref())?),
    };
    let (hash, records) = retrieve_to_cache(&ctx.cache, &corpus, split, kind, &cfg.retriever(kind), frozen.as_ref())?;
    Ok(json!({
        "command": "retrieve",
        "split": split.as_str(),
        "retriever": kind.as_str(),
        "config_hash": hash,
        "records": records,
        "path": crate::cache::passage_path(&ctx.cache, split, kind),
    }))
}

fn cmd_features(ctx: &Ctx, a: FeaturesArgs) -> Result<serde_json::Value> {
    let corpus = ctx.corpus()?;
    let cfg = RunConfig::load(&a.config)?;
    let fz = GridHistogram::default();
    let source = match a.source {
        Source::Annotations => "annotations",
        Source::Trivial => "trivial",
    };
    let manifest = FeatureManifest {
        featurizer: format!("grid_histogram_{}x{}x{}", fz.grid, fz.grid, fz.bins),
        dim: fz.dim(),
        source: source.into(),
        max_rois: cfg.vision.max_rois,
        diagrams: BTreeMap::new(),
    };
    let mut store = FeatureStore::create(&ctx.cache.join("features"), manifest)?;
    let mut regions = 0;
    for d in corpus.diagram_refs() {
        let image = load_image(&image_path(&ctx.data, d.id()))?;
        let boxes;
        let src = match a.source {
            Source::Annotations => {
                boxes = load_boxes(&boxes_path(&ctx.data, d.id()))?;
                RoiSource::Annotations(&boxes)
            }
            Source::Trivial => RoiSource::TrivialDetector,
        };
        let rois = acquire_rois_capped(d.id(), &image, src, &fz, cfg.vision.max_rois)?;
        regions += rois.len();
        store.put(&fz.featurize(&image, &BBox::WHOLE), &rois)?;
    }
    store.save_manifest()?;
    Ok(json!({
        "command": "features",
        "source": source,
        "diagrams": store.manifest.diagrams.len(),
        "regions": regions,
        "dir": store.dir,
    }))
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> Result<serde_json::Value> {
    let corpus = ctx.corpus()?;
    let mut cfg = RunConfig::load(&a.config)?;
    let task: QuestionKind = a.task.into();
    let kind: RetrieverKind = a.retriever.into();
    if cfg.train.task != task {
        return Err(Error::Usage(format!(
            "config {} is for {} questions, not {}",
            a.config,
            cfg.train.task.as_str(),
            task.as_str()
        )));
    }
    cfg.train.retriever = kind;
    let tr = load_examples(&ctx.cache, &corpus, SplitName::Train, task, kind)?;
    let va = load_examples(&ctx.cache, &corpus, SplitName::Validation, task, kind)?;
    let encoder = match &a.encoder {
        Some(d) => load_encoder(d)?,
        None => corpus_encoder(&corpus, &cfg)?,
    };
    let id = format!("{}.{}", task.as_str(), kind.as_str());
    let mut solver = AnySolver::new(task, &id, encoder, cfg.vision.feature_dim, cfg.train.max_len, cfg.train.seed)?;
    let (best, summary) = train_any(&mut solver, &cfg.train, &tr, &va)?;
    let out = a.out.unwrap_or_else(|| ctx.cache.join("checkpoints").join(&id));
    let mut meta = CheckpointMeta::describe(&best, kind);
    meta.best_epoch = summary.best_epoch;
    meta.best_validation_accuracy = summary.best_validation_accuracy;
    meta.log = summary.log;
    save_checkpoint(&out, &best, &meta)?;
    Ok(json!({
        "command": "train",
        "solver_id": id,
        "train_examples": tr.len(),
        "validation_examples": va.len(),
        "best_epoch": meta.best_epoch,
        "best_validation_accuracy": meta.best_validation_accuracy,
        "log": meta.log,
        "checkpoint": out,
    }))
}

fn predictions(scores: &[SolverScores]) -> Predictions {
    scores.iter().map(|s| (s.question_id.clone(), s.predicted)).collect()
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<serde_json::Value> {
    let corpus = ctx.corpus()?;
    let split: SplitName = a.split.into();
    let out = a.out.clone().unwrap_or_else(|| ctx.cache.join("reports"));
    let mut all: Vec<Vec<SolverScores>> = Vec::new();
    let mut written = Vec::new();
    for dir in &a.checkpoints {
        let (solver, meta) = load_checkpoint(dir)?;
        let examples = load_examples(&ctx.cache, &corpus, split, meta.kind, meta.retriever)?;
        let scores = score_all(&solver, &examples)?;
        let path = ctx.cache.join("scores").join(format!("{}.{}.jsonl", split.as_str(), solver.id()));
        write_scores(&path, &scores)?;
        written.push(path);
        all.push(scores);
    }
    for p in &a.scores {
        all.push(read_scores(p)?);
    }
    let mut rows: Vec<(String, Predictions)> = Vec::new();
    for scores in &all {
        let id = scores.first().map(|s| s.solver_id.clone()).unwrap_or_default();
        rows.push((id, predictions(scores)));
    }
    if !a.ensembles.is_empty() {
        let mut merged = Predictions::new();
        for m in &a.ensembles {
            let model: CalibrationModel = read_json(m)?;
            let flat: Vec<SolverScores> = all.iter().flatten().cloned().collect();
            for s in predict_ensemble(&model, &flat)? {
                merged.insert(s.question_id.clone(), s.predicted);
            }
        }
        rows.push(("ensemble".into(), merged));
    }
    let refs: Vec<(&str, &Predictions)> = rows.iter().map(|(n, p)| (n.as_str(), p)).collect();
    let report = evaluate(&corpus, split, &refs)?;
    write_json(&out.join(format!("report.{}.json", split.as_str())), &report)?;
    write_text(&out.join(format!("report.{}.csv", split.as_str())), &report.to_csv())?;
    write_text(&out.join(format!("outcomes.{}.csv", split.as_str())), &report.outcomes_csv())?;
    Ok(json!({ "command": "evaluate", "split": split.as_str(), "scores": written, "report": report.rows, "totals": report.totals, "out": out }))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(path, text).map_err(io(path))
}

/// Ensemble rows for every question all of the model's solvers scored.
fn predict_ensemble(model: &CalibrationModel, scores: &[SolverScores]) -> Result<Vec<SolverScores>> {
    let wanted: Vec<&str> = model.solver_ids();
    let mut by_q: BTreeMap<&str, Vec<SolverScores>> = BTreeMap::new();
    for s in scores.iter().filter(|s| wanted.contains(&s.solver_id.as_str())) {
        by_q.entry(s.question_id.as_str()).or_default().push(s.clone());
    }
    by_q.values().map(|set| Ok(ensemble_predict(model, set)?.to_solver_scores())).collect()
}

fn cmd_ensemble(ctx: &Ctx, c: EnsembleCommand) -> Result<serde_json::Value> {
    match c {
        EnsembleCommand::Fit { split, scores, out, margin } => {
            let corpus = ctx.corpus()?;
            let rows: Vec<SolverScores> = scores.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>>>()?.concat();
            let table = score_table(&rows);
            let mut lab = labels(&corpus, split.into());
            lab.retain(|q, _| rows.iter().any(|r| &r.question_id == q));
            let features = if margin { FeatureSet::WithMargin } else { FeatureSet::RawAndSoftmax };
            let model = fit_calibration(&table, &lab, features)?;
            write_json(&out, &model)?;
            let comp = if table.len() > 1 { complementarity_report(&table, &lab).ok() } else { None };
            Ok(json!({ "command": "ensemble fit", "model": out, "solvers": model.solver_ids(), "complementarity": comp }))
        }
        EnsembleCommand::Predict { model, scores, out } => {
            let m: CalibrationModel = read_json(&model)?;
            let rows: Vec<SolverScores> = scores.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>>>()?.concat();
            let preds = predict_ensemble(&m, &rows)?;
            write_scores(&out, &preds)?;
            Ok(json!({ "command": "ensemble predict", "questions": preds.len(), "out": out }))
        }
    }
}

fn cmd_ablate(ctx: &Ctx, a: AblateArgs) -> Result<serde_json::Value> {
    let corpus = ctx.corpus()?;
    let cfg = RunConfig::load(&a.config)?;
    if cfg.train.task != QuestionKind::DiagramMc {
        return Err(Error::Usage("ablation needs a diagram_mc config".into()));
    }
    let plan = if a.plan.trim() == "all" {
        AblationPlan::all()
    } else {
        AblationPlan::parse(a.plan.split(',').map(str::trim))?
    };
    let kind: RetrieverKind = a.retriever.into();
    let features = FeatureStore::open(&ctx.cache.join("features"))?;
    let inputs = |split| -> Result<_> {
        let passages = cached_passages(&ctx.cache, split, kind)?;
        diagram_inputs(&corpus, split, &passages, kind, &features)
    };
    let (tr, va, te) = (inputs(SplitName::Train)?, inputs(SplitName::Validation)?, inputs(SplitName::Test)?);
    let make = |v: AblationVariant| {
        let encoder = corpus_encoder(&corpus, &cfg).map_err(|e| isaaq_core::Error::Config(e.to_string()))?;
        DiagramMcSolver::new(format!("ablation.{}", v.label()), encoder, cfg.vision.feature_dim, cfg.train.max_len, cfg.train.seed)
    };
    let mut tcfg = cfg.train.clone();
    tcfg.retriever = kind;
    let report = ablate(&plan, make, &tcfg, &tr, &va, &te)?;
    let out = a.out.unwrap_or_else(|| ctx.cache.join("reports"));
    write_json(&out.join("ablation.json"), &report)?;
    write_text(&out.join("ablation.csv"), &report.to_csv())?;
    Ok(json!({ "command": "ablate", "rows": report.ablation, "out": out }))
}

fn cmd_export(ctx: &Ctx, a: ExportArgs) -> Result<serde_json::Value> {
    let corpus = ctx.corpus()?;
    let (solver, meta) = load_checkpoint(&a.checkpoint)?;
    let AnySolver::DiagramMc(dmc) = &solver else {
        return Err(Error::Usage(format!("{} is not a diagram solver", a.checkpoint.display())));
    };
    let q = corpus.question(&a.question)?;
    let split = corpus
        .splits()
        .iter()
        .find(|s| s.lesson_ids.contains(&q.lesson_id))
        .map(|s| s.name)
        .ok_or_else(|| Error::Usage(format!("question {} is in no split", q.id)))?;
    let passages = cached_passages(&ctx.cache, split, meta.retriever)?;
    let features = FeatureStore::open(&ctx.cache.join("features"))?;
    let ex = diagram_input(&corpus, text_example(&corpus, q, &passages, meta.retriever)?, &features)?.example;
    let records = export_attention(dmc, &ex)?;
    let predicted = solver.score(&ex)?.predicted;
    if let Some(path) = &a.heatmap {
        let id = q.diagram.as_ref().map(|d| d.id().to_string()).unwrap_or_default();
        let image = load_image(&image_path(&ctx.data, &id))?;
        // background-diagram regions come last and belong to another image
        let rec = &records[predicted];
        let own = ex.rois.as_ref().map_or(0, |r| r.len()).min(rec.bboxes.len());
        save_image(path, &render_heatmap(&image, &rec.bboxes[..own], &rec.alpha[..own]))?;
    }
    Ok(json!({ "question_id": q.id, "predicted": predicted, "attention": records }))
}
