use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    score_predictions, truncate_all, Backend, DevelopmentSet, LabeledText, ModelType,
    OptimizationMetric, PredictionRow, PredictionSet, ReportText, Task, TrialConfig, TrialResult,
};
use crate::corpus::ReportField;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::tokenize::Tokenizer;

/// Hyperparameter values for one model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAxes {
    pub max_tokens: Vec<u32>,
    pub learning_rates: Vec<f64>,
    pub epochs: u32,
}

/// Search space; trials are the cross product of each listed model's axes
/// with the seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub task: Task,
    pub report_field: ReportField,
    pub optimization_metric: OptimizationMetric,
    pub models: Vec<ModelType>,
    pub seeds: Vec<u64>,
    pub clinical_bert: ModelAxes,
    pub clinical_bigbird: ModelAxes,
    pub baseline_linear: ModelAxes,
    /// Batch size per max_tokens value; unlisted lengths use 16.
    pub batch_sizes: BTreeMap<u32, u32>,
}

impl Default for GridSpec {
    fn default() -> Self {
        let transformer_lrs = vec![2e-5, 5e-5];
        GridSpec {
            task: Task::Multiclass,
            report_field: ReportField::Subsection,
            optimization_metric: OptimizationMetric::Auroc,
            models: vec![ModelType::BaselineLinear],
            seeds: vec![0, 1, 2],
            clinical_bert: ModelAxes {
                max_tokens: vec![512],
                learning_rates: transformer_lrs.clone(),
                epochs: 3,
            },
            clinical_bigbird: ModelAxes {
                max_tokens: vec![512, 1024, 2048],
                learning_rates: transformer_lrs,
                epochs: 3,
            },
            baseline_linear: ModelAxes {
                max_tokens: vec![512, 2048],
                learning_rates: vec![1.0, 4.0],
                epochs: 200,
            },
            batch_sizes: BTreeMap::from([(512, 16), (1024, 8), (2048, 4)]),
        }
    }
}

impl GridSpec {
    /// The transformer grid: ClinicalBERT and ClinicalBigBird over the
    /// default axes.
    pub fn transformers(task: Task, report_field: ReportField) -> Self {
        GridSpec {
            task,
            report_field,
            models: vec![ModelType::ClinicalBert, ModelType::ClinicalBigbird],
            ..GridSpec::default()
        }
    }

    pub fn axes(&self, model: ModelType) -> &ModelAxes {
        match model {
            ModelType::ClinicalBert => &self.clinical_bert,
            ModelType::ClinicalBigbird => &self.clinical_bigbird,
            ModelType::BaselineLinear => &self.baseline_linear,
        }
    }

    /// All trials in grid order: model, max_tokens, learning rate, seed.
    pub fn expand(&self) -> Vec<TrialConfig> {
        let mut out = Vec::new();
        for &model in &self.models {
            let axes = self.axes(model);
            for &max_tokens in &axes.max_tokens {
                for &learning_rate in &axes.learning_rates {
                    for &seed in &self.seeds {
                        out.push(TrialConfig {
                            model_type: model,
                            max_tokens,
                            learning_rate,
                            seed,
                            batch_size: self.batch_sizes.get(&max_tokens).copied().unwrap_or(16),
                            epochs: axes.epochs,
                            task: self.task,
                            report_field: self.report_field,
                            optimization_metric: self.optimization_metric,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial_id: String,
    pub config: TrialConfig,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// Completed trials in grid order.
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub best: usize,
}

impl GridOutcome {
    pub fn best(&self) -> &TrialResult {
        &self.results[self.best]
    }
}

/// Execution settings for [`run_grid`].
pub struct GridRunner<'a> {
    pub backend: &'a dyn Backend,
    /// Tokenizer that enforces each trial's `max_tokens`.
    pub truncation: Tokenizer,
    /// Maximum trials in flight; 0 means one per core.
    pub parallelism: usize,
    /// Also score the full development set (train + eval) per trial.
    pub dev_metrics: bool,
}

impl<'a> GridRunner<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        GridRunner {
            backend,
            truncation: Tokenizer::whitespace(),
            parallelism: 1,
            dev_metrics: true,
        }
    }

    fn run_trial(&self, dev: &DevelopmentSet, cfg: &TrialConfig) -> Result<TrialResult> {
        cfg.validate()?;
        if !self.backend.supports(cfg.model_type) {
            return Err(Error::BackendUnavailable(format!(
                "backend {} cannot train {}",
                self.backend.name(),
                cfg.model_type
            )));
        }
        let start = Instant::now();
        let train = truncate_all(&self.truncation, &dev.train, cfg.max_tokens);
        let eval: Vec<ReportText> = truncate_all(&self.truncation, &dev.eval, cfg.max_tokens)
            .iter()
            .map(LabeledText::unlabeled)
            .collect();
        let fit = self.backend.fit(&train, &eval, cfg)?;
        fit.eval_predictions.check(&eval)?;
        let eval_gold: Vec<usize> = dev.eval.iter().map(|r| r.label).collect();
        let eval_metrics = score_predictions(cfg.task, &eval_gold, &fit.eval_predictions)?;

        let dev_metrics = if self.dev_metrics {
            let train_inputs: Vec<ReportText> = train.iter().map(LabeledText::unlabeled).collect();
            let train_preds = self.backend.predict(&fit.checkpoint_ref, &train_inputs, cfg)?;
            train_preds.check(&train_inputs)?;
            let rows: Vec<PredictionRow> = train_preds
                .rows
                .into_iter()
                .chain(fit.eval_predictions.rows.iter().cloned())
                .collect();
            let all = PredictionSet {
                num_classes: cfg.task.num_classes(),
                rows,
            };
            let gold: Vec<usize> = dev.train.iter().chain(&dev.eval).map(|r| r.label).collect();
            Some(score_predictions(cfg.task, &gold, &all)?)
        } else {
            None
        };

        let wall_time = start.elapsed().as_secs_f64();
        log::info!("trial {} finished in {wall_time:.2}s", cfg.trial_id());
        Ok(TrialResult {
            trial_id: cfg.trial_id(),
            config: cfg.clone(),
            eval_metrics,
            dev_metrics,
            checkpoint_ref: fit.checkpoint_ref,
            wall_time,
        })
    }
}

/// Runs every trial, records failures without aborting, and selects the
/// trial with the highest optimization metric on the evaluation reports.
/// Ties go to the earliest trial in grid order.
pub fn run_grid(dev: &DevelopmentSet, grid: &[TrialConfig], runner: &GridRunner) -> Result<GridOutcome> {
    let Some(first) = grid.first() else {
        return Err(Error::InvalidTrial("grid is empty".into()));
    };
    if let Some(c) = grid.iter().find(|c| {
        c.task != first.task
            || c.report_field != first.report_field
            || c.optimization_metric != first.optimization_metric
    }) {
        return Err(Error::InvalidTrial(format!(
            "trial {} disagrees with the grid's task, field or metric",
            c.trial_id()
        )));
    }
    if first.task != dev.task || first.report_field != dev.field {
        return Err(Error::InvalidTrial(
            "grid task or field does not match the development set".into(),
        ));
    }
    if dev.train.is_empty() || dev.eval.is_empty() {
        return Err(Error::DegenerateMatrix(
            "development set needs training and evaluation reports".into(),
        ));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(runner.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<TrialResult>> =
        pool.install(|| grid.par_iter().map(|cfg| runner.run_trial(dev, cfg)).collect());

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (cfg, outcome) in grid.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                log::warn!("trial {} failed: {e}", cfg.trial_id());
                failures.push(TrialFailure {
                    trial_id: cfg.trial_id(),
                    config: cfg.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if results.is_empty() {
        return Err(Error::AllTrialsFailed(grid.len()));
    }
    let metric = first.optimization_metric;
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, r) in results.iter().enumerate() {
        let score = metric.score(&r.eval_metrics).unwrap_or(f64::NEG_INFINITY);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(GridOutcome {
        results,
        failures,
        best,
    })
}

/// Everything a training run writes to `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub task: Task,
    pub report_field: ReportField,
    pub optimization_metric: OptimizationMetric,
    pub backend: String,
    pub split_seed: u64,
    pub trials: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub best_trial_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<MetricsReport>,
}

impl RunResults {
    pub fn new(outcome: GridOutcome, backend: &str, split_seed: u64) -> Self {
        let cfg = outcome.best().config.clone();
        RunResults {
            task: cfg.task,
            report_field: cfg.report_field,
            optimization_metric: cfg.optimization_metric,
            backend: backend.to_string(),
            split_seed,
            best_trial_id: outcome.best().trial_id.clone(),
            trials: outcome.results,
            failures: outcome.failures,
            validation: None,
        }
    }

    pub fn best(&self) -> Option<&TrialResult> {
        self.trials.iter().find(|t| t.trial_id == self.best_trial_id)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::harness::FitOutput;

    #[test]
    fn transformer_grid_has_six_plus_eighteen_trials() {
        let grid = GridSpec::transformers(Task::Binary, ReportField::Full).expand();
        let bert = grid.iter().filter(|c| c.model_type == ModelType::ClinicalBert).count();
        let bigbird = grid.iter().filter(|c| c.model_type == ModelType::ClinicalBigbird).count();
        assert_eq!((bert, bigbird), (6, 18));
        assert!(grid.iter().all(|c| c.validate().is_ok()));
        let batch_2048: Vec<u32> = grid
            .iter()
            .filter(|c| c.max_tokens == 2048)
            .map(|c| c.batch_size)
            .collect();
        assert!(batch_2048.iter().all(|&b| b == 4));
    }

    /// Scores each trial with a fixed table keyed by learning rate; fails
    /// trials whose seed is odd.
    struct Scripted {
        seen: Mutex<Vec<String>>,
    }

    impl Backend for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        fn supports(&self, _: ModelType) -> bool {
            true
        }
        fn fit(&self, train: &[LabeledText], eval: &[ReportText], cfg: &TrialConfig) -> Result<FitOutput> {
            self.seen.lock().unwrap().extend(train.iter().map(|t| t.id.clone()));
            if cfg.seed % 2 == 1 {
                return Err(Error::TrainingFailure("odd seed".into()));
            }
            let p = if cfg.learning_rate > 0.3 { 0.9 } else { 0.6 };
            Ok(FitOutput {
                checkpoint_ref: cfg.trial_id(),
                eval_predictions: self.predict("", eval, cfg)?.with_prob(p),
            })
        }
        fn predict(&self, _: &str, reports: &[ReportText], _: &TrialConfig) -> Result<PredictionSet> {
            Ok(PredictionSet {
                num_classes: 2,
                rows: reports
                    .iter()
                    .map(|r| PredictionRow { id: r.id.clone(), probs: vec![0.5, 0.5] })
                    .collect(),
            })
        }
    }

    impl PredictionSet {
        /// Confidence `p` in the class encoded by the report id suffix.
        fn with_prob(mut self, p: f64) -> Self {
            for row in &mut self.rows {
                let y = row.id.ends_with('1') as usize;
                row.probs = if y == 1 { vec![1.0 - p, p] } else { vec![p, 1.0 - p] };
            }
            self
        }
    }

    fn dev() -> DevelopmentSet {
        let mk = |id: &str, label| LabeledText { id: id.into(), text: "x y z".into(), label };
        DevelopmentSet {
            task: Task::Binary,
            field: ReportField::Full,
            train: vec![mk("t0", 0), mk("t1", 1)],
            eval: vec![mk("e0", 0), mk("e1", 1), mk("f0", 0)],
        }
    }

    #[test]
    fn failures_are_recorded_and_best_is_earliest_max() {
        let backend = Scripted { seen: Mutex::new(Vec::new()) };
        let spec = GridSpec {
            task: Task::Binary,
            report_field: ReportField::Full,
            optimization_metric: OptimizationMetric::F2Beta,
            seeds: vec![0, 1, 2],
            ..GridSpec::default()
        };
        let grid = spec.expand();
        assert_eq!(grid.len(), 12);
        let mut runner = GridRunner::new(&backend);
        runner.parallelism = 3;
        let out = run_grid(&dev(), &grid, &runner).unwrap();
        assert_eq!(out.failures.len(), 4);
        assert_eq!(out.results.len(), 8);
        // Every trial scores perfectly by argmax; the earliest wins.
        assert_eq!(out.best().trial_id, grid[0].trial_id());
        let ids: Vec<&str> = out.results.iter().map(|r| r.trial_id.as_str()).collect();
        let expected: Vec<String> = grid.iter().filter(|c| c.seed % 2 == 0).map(|c| c.trial_id()).collect();
        assert_eq!(ids, expected.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn auroc_ties_resolve_to_grid_order() {
        let backend = Scripted { seen: Mutex::new(Vec::new()) };
        let spec = GridSpec {
            task: Task::Binary,
            report_field: ReportField::Full,
            seeds: vec![0],
            ..GridSpec::default()
        };
        let grid = spec.expand();
        let out = run_grid(&dev(), &grid, &GridRunner::new(&backend)).unwrap();
        assert_eq!(out.best, 0);
    }

    #[test]
    fn all_failures_is_an_error() {
        let backend = Scripted { seen: Mutex::new(Vec::new()) };
        let spec = GridSpec {
            task: Task::Binary,
            report_field: ReportField::Full,
            seeds: vec![1],
            ..GridSpec::default()
        };
        let err = run_grid(&dev(), &spec.expand(), &GridRunner::new(&backend)).unwrap_err();
        assert!(matches!(err, Error::AllTrialsFailed(4)));
    }

    #[test]
    fn mixed_grid_is_rejected() {
        let backend = Scripted { seen: Mutex::new(Vec::new()) };
        let mut grid = GridSpec { task: Task::Binary, report_field: ReportField::Full, ..GridSpec::default() }.expand();
        grid[1].task = Task::Multiclass;
        assert!(matches!(
            run_grid(&dev(), &grid, &GridRunner::new(&backend)),
            Err(Error::InvalidTrial(_))
        ));
        assert!(matches!(run_grid(&dev(), &[], &GridRunner::new(&backend)), Err(Error::InvalidTrial(_))));
    }
}
