use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bepath::config::{BackendKind, NamedTokenizer, PipelineConfig};
use bepath::corpus::{generate_synthetic, load_corpus, ClassMix, Corpus, CorpusFormat, ReportField};
use bepath::harness::baseline::BaselineBackend;
use bepath::harness::worker::{serve_stub, WorkerBackend};
use bepath::harness::{
    comparator_rows, evaluate_validation, results_table, run_grid, validation_texts, write_table_csv,
    Backend, DevelopmentSet, GridRunner, LabeledText, ModelType, OptimizationMetric, ReportText,
    RunResults, Task,
};
use bepath::labels::class_distribution;
use bepath::preprocess::{preprocess_corpus, PreprocessMode};
use bepath::splits::CorpusSplit;
use bepath::tokenize::{token_stats, write_stats_csv, StatsRow, Tokenizer, TokenizerSpec};
use bepath::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bepath", version, about = "Barrett's esophagus pathology report classification pipeline")]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for the command's random choices.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus.
    Generate(GenerateArgs),
    /// Clean reports and extract diagnosis sub-sections.
    Preprocess(PreprocessArgs),
    /// Partition patients and development reports.
    Split(SplitArgs),
    /// Token-count statistics and class distribution.
    Stats(StatsArgs),
    /// Run the hyperparameter grid on the development reports.
    Train(TrainArgs),
    /// Score the selected model on the held-out validation reports.
    Evaluate(EvaluateArgs),
    /// Class probabilities for a corpus from the selected model.
    Predict(PredictArgs),
    /// Result tables from one or more results files.
    Report(ReportArgs),
    /// Show configuration.
    Config(ConfigArgs),
    /// Serve the worker protocol with a memorizing stub model.
    #[command(hide = true)]
    StubWorker,
}

#[derive(Clone, Copy, ValueEnum)]
enum MixArg {
    Development,
    Validation,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    patients: Option<usize>,
    /// Class mix preset; defaults to the config's mix.
    #[arg(long, value_enum)]
    mix: Option<MixArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Subsection,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "subsection")]
    mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the rejected report list (JSON).
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    eval_fraction: Option<f64>,
    #[arg(long)]
    stratify: bool,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Token statistics CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Additional WordPiece vocabulary; repeatable.
    #[arg(long = "wordpiece-vocab")]
    wordpiece_vocab: Vec<PathBuf>,
    /// Also write the class distribution CSV here.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Binary,
    Multiclass,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Full,
    Subsection,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Auroc,
    F2Beta,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Baseline,
    Worker,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    ClinicalBert,
    ClinicalBigbird,
    BaselineLinear,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    field: Option<FieldArg>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Model families to search; comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    models: Vec<ModelArg>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Print the expanded grid and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Predictions as JSON lines; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    /// Include the published rule-based reference rows.
    #[arg(long)]
    with_comparator: bool,
    /// One development and one validation row per model.
    #[arg(long)]
    expanded: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Print the built-in defaults instead of the loaded config.
    #[arg(long)]
    print_defaults: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Backend => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // Reader closed stdout early, as with `| head`.
        Err(Error::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> bepath::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Generate(a) => generate(&mut cfg, cli.seed, a),
        Command::Preprocess(a) => preprocess(&cfg, a),
        Command::Split(a) => split(&mut cfg, cli.seed, a),
        Command::Stats(a) => stats(&cfg, a),
        Command::Train(a) => train(&mut cfg, cli.seed, a),
        Command::Evaluate(a) => evaluate(&cfg, a),
        Command::Predict(a) => predict(&cfg, a),
        Command::Report(a) => report(a),
        Command::Config(a) => {
            let shown = if a.print_defaults { PipelineConfig::default() } else { cfg };
            print!("{}", shown.to_toml()?);
            Ok(())
        }
        Command::StubWorker => {
            let stdin = io::stdin().lock();
            let stdout = io::stdout().lock();
            serve_stub(stdin, stdout).map_err(|e| Error::Protocol(e.to_string()))
        }
    }
}

fn create(path: &Path) -> bepath::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.into(), source: e })
}

fn write_file(path: &Path, contents: &str) -> bepath::Result<()> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::Io { path: path.into(), source: e })
}

/// Runs `f` against a file, or stdout when `path` is `None`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> bepath::Result<()>) -> bepath::Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush().map_err(|e| Error::Io { path: p.into(), source: e })
        }
        None => f(&mut io::stdout().lock()),
    }
}

fn load(path: Option<PathBuf>, default: &Path) -> bepath::Result<Corpus> {
    load_corpus(path.as_deref().unwrap_or(default), CorpusFormat::Jsonl)
}

fn generate(cfg: &mut PipelineConfig, seed: Option<u64>, a: GenerateArgs) -> bepath::Result<()> {
    let spec = &mut cfg.generator;
    if let Some(n) = a.patients {
        spec.n_patients = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    match a.mix {
        Some(MixArg::Development) => spec.class_mix = ClassMix::development(),
        Some(MixArg::Validation) => spec.class_mix = ClassMix::validation(),
        None => {}
    }
    let corpus = generate_synthetic(spec)?;
    corpus.save(&a.out)?;
    log::info!("wrote {} reports to {}", corpus.len(), a.out.display());
    Ok(())
}

fn preprocess(cfg: &PipelineConfig, a: PreprocessArgs) -> bepath::Result<()> {
    let corpus = load(a.corpus, &cfg.data.corpus)?;
    let mode = match a.mode {
        ModeArg::Full => PreprocessMode::Full,
        ModeArg::Subsection => PreprocessMode::Subsection,
    };
    let out = preprocess_corpus(&corpus, mode, &cfg.headings);
    out.corpus.save(&a.out)?;
    if !out.rejects.is_empty() {
        log::warn!("{} reports have no diagnosis section", out.rejects.len());
    }
    if let Some(path) = a.rejects {
        let mut json = serde_json::to_string_pretty(&out.rejects)?;
        json.push('\n');
        write_file(&path, &json)?;
    }
    Ok(())
}

fn split(cfg: &mut PipelineConfig, seed: Option<u64>, a: SplitArgs) -> bepath::Result<()> {
    let corpus = load(a.corpus, &cfg.data.corpus)?;
    let opts = &mut cfg.split;
    if let Some(s) = seed {
        opts.seed = s;
    }
    if let Some(f) = a.val_fraction {
        opts.val_fraction = f;
    }
    if let Some(f) = a.eval_fraction {
        opts.eval_fraction = f;
    }
    opts.stratify |= a.stratify;
    let split = CorpusSplit::build(&corpus, opts)?;
    split.save(a.out.as_deref().unwrap_or(&cfg.data.split))
}

fn stats(cfg: &PipelineConfig, a: StatsArgs) -> bepath::Result<()> {
    let corpus = load(a.corpus, &cfg.data.corpus)?;
    let mut tokenizers = cfg.tokenizers.clone();
    for vocab in a.wordpiece_vocab {
        let name = vocab
            .file_stem()
            .map_or_else(|| "wordpiece".to_string(), |s| s.to_string_lossy().into_owned());
        tokenizers.push(NamedTokenizer {
            name,
            spec: TokenizerSpec::wordpiece(vocab),
        });
    }
    let mut rows = Vec::new();
    for named in &tokenizers {
        let tok = Tokenizer::from_spec(&named.spec)?;
        for field in [ReportField::Full, ReportField::Subsection] {
            let with_field = corpus.filter(|r| field.text_of(r).is_some());
            if with_field.is_empty() {
                log::warn!("no report has {} text; row skipped", field.as_str());
                continue;
            }
            if with_field.len() < corpus.len() {
                log::info!(
                    "{} of {} reports lack {} text",
                    corpus.len() - with_field.len(),
                    corpus.len(),
                    field.as_str()
                );
            }
            rows.push(StatsRow {
                tokenizer: named.name.clone(),
                field,
                stats: token_stats(&with_field, &tok, field)?,
            });
        }
    }
    with_output(a.out.as_deref(), |w| write_stats_csv(&rows, w))?;
    if let Some(path) = a.labels {
        let dist = class_distribution(&corpus)?;
        with_output(Some(&path), |w| dist.write_csv(w))?;
    }
    Ok(())
}

fn backend_for(cfg: &PipelineConfig, kind: BackendKind, run_dir: &Path) -> bepath::Result<Box<dyn Backend>> {
    Ok(match kind {
        BackendKind::Baseline => Box::new(BaselineBackend::with_dir(cfg.baseline.clone(), run_dir)),
        BackendKind::Worker => {
            let dir = cfg
                .worker
                .checkpoint_dir
                .clone()
                .unwrap_or_else(|| run_dir.join("worker_checkpoints"));
            Box::new(WorkerBackend::new(cfg.worker.command.clone(), Some(dir))?)
        }
    })
}

fn backend_kind(name: &str) -> bepath::Result<BackendKind> {
    match name {
        "baseline" => Ok(BackendKind::Baseline),
        "worker" => Ok(BackendKind::Worker),
        other => Err(Error::Config(format!("results were produced by unknown backend {other:?}"))),
    }
}

fn train(cfg: &mut PipelineConfig, seed: Option<u64>, a: TrainArgs) -> bepath::Result<()> {
    let grid = &mut cfg.grid;
    if let Some(t) = a.task {
        grid.task = match t {
            TaskArg::Binary => Task::Binary,
            TaskArg::Multiclass => Task::Multiclass,
        };
    }
    if let Some(f) = a.field {
        grid.report_field = match f {
            FieldArg::Full => ReportField::Full,
            FieldArg::Subsection => ReportField::Subsection,
        };
    }
    if let Some(m) = a.metric {
        grid.optimization_metric = match m {
            MetricArg::Auroc => OptimizationMetric::Auroc,
            MetricArg::F2Beta => OptimizationMetric::F2Beta,
        };
    }
    if !a.models.is_empty() {
        grid.models = a
            .models
            .iter()
            .map(|m| match m {
                ModelArg::ClinicalBert => ModelType::ClinicalBert,
                ModelArg::ClinicalBigbird => ModelType::ClinicalBigbird,
                ModelArg::BaselineLinear => ModelType::BaselineLinear,
            })
            .collect();
    }
    if let Some(s) = seed {
        grid.seeds = vec![s];
    }
    if let Some(b) = a.backend {
        cfg.harness.backend = match b {
            BackendArg::Baseline => BackendKind::Baseline,
            BackendArg::Worker => BackendKind::Worker,
        };
    }
    if let Some(p) = a.parallelism {
        cfg.harness.parallelism = p;
    }
    let trials = cfg.grid.expand();

    if a.dry_run {
        let mut out = io::stdout().lock();
        for t in &trials {
            writeln!(
                out,
                "{}\tmodel={} max_tokens={} lr={} seed={} batch_size={} epochs={}",
                t.trial_id(),
                t.model_type,
                t.max_tokens,
                t.learning_rate,
                t.seed,
                t.batch_size,
                t.epochs
            )
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?;
        }
        return Ok(());
    }

    let corpus = load(a.corpus, &cfg.data.corpus)?;
    let split = CorpusSplit::load(a.split.as_deref().unwrap_or(&cfg.data.split))?;
    let out_dir = a.out_dir.unwrap_or_else(|| cfg.data.out_dir.clone());
    let dev = DevelopmentSet::new(&corpus, &split, cfg.grid.report_field, cfg.grid.task)?;
    let backend = backend_for(cfg, cfg.harness.backend, &out_dir)?;
    let mut runner = GridRunner::new(backend.as_ref());
    runner.truncation = Tokenizer::from_spec(&cfg.harness.truncation)?;
    runner.parallelism = cfg.harness.parallelism;
    runner.dev_metrics = cfg.harness.dev_metrics;
    let outcome = run_grid(&dev, &trials, &runner)?;
    let results = RunResults::new(outcome, backend.name(), split.seed);
    results.save(out_dir.join("results.json"))?;
    eprintln!(
        "{} trials completed, {} failed; best {}",
        results.trials.len(),
        results.failures.len(),
        results.best_trial_id
    );
    Ok(())
}

/// Directory holding the results file; checkpoint refs are relative to it.
fn run_dir(results: &Path) -> PathBuf {
    results
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn evaluate(cfg: &PipelineConfig, a: EvaluateArgs) -> bepath::Result<()> {
    let mut results = RunResults::load(&a.results)?;
    let corpus = load(a.corpus, &cfg.data.corpus)?;
    let split = CorpusSplit::load(a.split.as_deref().unwrap_or(&cfg.data.split))?;
    let best = results
        .best()
        .ok_or_else(|| Error::Config("results file has no best trial".into()))?
        .clone();
    let val = validation_texts(&corpus, &split, results.report_field, results.task)?;
    let backend = backend_for(cfg, backend_kind(&results.backend)?, &run_dir(&a.results))?;
    let truncation = Tokenizer::from_spec(&cfg.harness.truncation)?;
    let metrics = evaluate_validation(&best, &val, backend.as_ref(), &truncation)?;
    eprintln!(
        "validation: recall {:.3} precision {:.3} accuracy {:.3} f1 {:.3}",
        metrics.recall, metrics.precision, metrics.accuracy, metrics.f1
    );
    results.validation = Some(metrics);
    results.save(&a.results)
}

fn predict(cfg: &PipelineConfig, a: PredictArgs) -> bepath::Result<()> {
    let results = RunResults::load(&a.results)?;
    let best = results
        .best()
        .ok_or_else(|| Error::Config("results file has no best trial".into()))?;
    let corpus = load_corpus(&a.corpus, CorpusFormat::Jsonl)?;
    let field = results.report_field;
    let texts: Vec<LabeledText> = corpus
        .reports
        .iter()
        .filter_map(|r| {
            let text = field.text_of(r);
            if text.is_none() {
                log::warn!("report {} has no {} text; skipped", r.report_id, field.as_str());
            }
            text.map(|t| LabeledText {
                id: r.report_id.clone(),
                text: t.to_string(),
                label: 0,
            })
        })
        .collect();
    let truncation = Tokenizer::from_spec(&cfg.harness.truncation)?;
    let inputs: Vec<ReportText> = bepath::harness::truncate_all(&truncation, &texts, best.config.max_tokens)
        .iter()
        .map(LabeledText::unlabeled)
        .collect();
    let backend = backend_for(cfg, backend_kind(&results.backend)?, &run_dir(&a.results))?;
    let preds = backend.predict(&best.checkpoint_ref, &inputs, &best.config)?;
    preds.check(&inputs)?;
    with_output(a.out.as_deref(), |w| {
        for (row, class) in preds.rows.iter().zip(preds.predicted_classes()) {
            let line = serde_json::json!({ "id": row.id, "probs": row.probs, "predicted": class });
            writeln!(w, "{line}").map_err(|e| Error::Io { path: "<output>".into(), source: e })?;
        }
        Ok(())
    })
}

fn report(a: ReportArgs) -> bepath::Result<()> {
    let runs: Vec<RunResults> = a.results.iter().map(RunResults::load).collect::<bepath::Result<_>>()?;
    let task = runs[0].task;
    if runs.iter().any(|r| r.task != task) {
        return Err(Error::Config("results files mix binary and multiclass runs".into()));
    }
    let comparators = if a.with_comparator { comparator_rows(task) } else { Vec::new() };
    let rows = results_table(&runs, &comparators, a.expanded);
    with_output(a.out.as_deref(), |w| write_table_csv(&rows, w))
}
