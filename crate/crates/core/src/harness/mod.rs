//! Training harness: the classifier backend contract, trial configuration,
//! grid search with best-model selection, held-out evaluation and result
//! tables.
//!
//! The grid runner only ever sees a [`DevelopmentSet`], which is built from
//! the training and evaluation report ids of a split. Validation reports are
//! materialized separately and only reach [`evaluate_validation`].

pub mod baseline;
mod emit;
mod grid;
pub mod worker;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ReportField};
use crate::error::{Error, Result};
use crate::labels::DiagnosisLabel;
use crate::metrics::{argmax, confusion, report_with, MetricsOptions, MetricsReport};
use crate::splits::CorpusSplit;
use crate::tokenize::Tokenizer;

pub use emit::{
    comparator_rows, results_table, write_table_csv, ComparatorRow, Dataset, TableRow,
    RULE_BASED_LABEL,
};
pub use grid::{run_grid, GridOutcome, GridRunner, GridSpec, ModelAxes, RunResults, TrialFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Multiclass,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass => DiagnosisLabel::COUNT,
        }
    }

    pub fn target(self, label: DiagnosisLabel) -> usize {
        match self {
            Task::Binary => label.to_binary().index(),
            Task::Multiclass => label.index(),
        }
    }

    pub fn metrics_options(self) -> MetricsOptions {
        match self {
            Task::Binary => MetricsOptions::binary(),
            Task::Multiclass => MetricsOptions::macro_avg(),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multiclass" | "multi-class" => Ok(Task::Multiclass),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    ClinicalBert,
    ClinicalBigbird,
    BaselineLinear,
}

impl ModelType {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelType::ClinicalBert => "clinical_bert",
            ModelType::ClinicalBigbird => "clinical_bigbird",
            ModelType::BaselineLinear => "baseline_linear",
        }
    }

    /// Input lengths the model accepts; `None` means any.
    pub fn allowed_max_tokens(self) -> Option<&'static [u32]> {
        match self {
            ModelType::ClinicalBert => Some(&[512]),
            ModelType::ClinicalBigbird => Some(&[512, 1024, 2048]),
            ModelType::BaselineLinear => None,
        }
    }

    pub fn is_transformer(self) -> bool {
        self != ModelType::BaselineLinear
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationMetric {
    Auroc,
    F2Beta,
}

impl OptimizationMetric {
    /// Score of a report under this metric; `None` when it was not computed.
    pub fn score(self, m: &MetricsReport) -> Option<f64> {
        match self {
            OptimizationMetric::Auroc => m.auroc,
            OptimizationMetric::F2Beta => Some(m.f2_beta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub model_type: ModelType,
    pub max_tokens: u32,
    pub learning_rate: f64,
    pub seed: u64,
    pub batch_size: u32,
    pub epochs: u32,
    pub task: Task,
    pub report_field: ReportField,
    pub optimization_metric: OptimizationMetric,
}

impl TrialConfig {
    pub fn trial_id(&self) -> String {
        format!(
            "{}-t{}-lr{:e}-s{}",
            self.model_type, self.max_tokens, self.learning_rate, self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(allowed) = self.model_type.allowed_max_tokens() {
            if !allowed.contains(&self.max_tokens) {
                return Err(Error::InvalidTrial(format!(
                    "{} does not accept max_tokens={} (allowed: {allowed:?})",
                    self.model_type, self.max_tokens
                )));
            }
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidTrial("max_tokens must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidTrial(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidTrial(
                "batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A report as handed to a backend for prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportText {
    pub id: String,
    pub text: String,
}

/// A report with its task-space target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub id: String,
    pub text: String,
    pub label: usize,
}

impl LabeledText {
    pub fn unlabeled(&self) -> ReportText {
        ReportText {
            id: self.id.clone(),
            text: self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub probs: Vec<f64>,
}

/// Class probabilities per report, in request order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub num_classes: usize,
    pub rows: Vec<PredictionRow>,
}

impl PredictionSet {
    /// Checks that the set covers exactly `requested` (same order) with
    /// normalized rows of the right width.
    pub fn check(&self, requested: &[ReportText]) -> Result<()> {
        if self.rows.len() != requested.len()
            || self.rows.iter().zip(requested).any(|(row, r)| row.id != r.id)
        {
            return Err(Error::TrainingFailure(
                "prediction ids do not match the requested reports".into(),
            ));
        }
        for row in &self.rows {
            if row.probs.len() != self.num_classes {
                return Err(Error::MalformedProbabilities(format!(
                    "report {} has {} probabilities, expected {}",
                    row.id,
                    row.probs.len(),
                    self.num_classes
                )));
            }
            let sum: f64 = row.probs.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::MalformedProbabilities(format!(
                    "report {} probabilities sum to {sum}",
                    row.id
                )));
            }
        }
        Ok(())
    }

    pub fn predicted_classes(&self) -> Vec<usize> {
        self.rows.iter().map(|r| argmax(&r.probs)).collect()
    }

    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.probs.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub checkpoint_ref: String,
    pub eval_predictions: PredictionSet,
}

/// A classifier implementation the harness can train and query.
///
/// Texts arrive already truncated to `cfg.max_tokens`.
pub trait Backend: Sync {
    fn name(&self) -> &str;

    fn supports(&self, model: ModelType) -> bool;

    fn fit(&self, train: &[LabeledText], eval: &[ReportText], cfg: &TrialConfig) -> Result<FitOutput>;

    fn predict(
        &self,
        checkpoint_ref: &str,
        reports: &[ReportText],
        cfg: &TrialConfig,
    ) -> Result<PredictionSet>;
}

/// Labeled texts of `corpus` restricted to `ids`, in corpus order. Reports
/// without the requested text field are skipped (sub-section rejects).
pub fn labeled_texts(
    corpus: &Corpus,
    ids: &HashSet<&str>,
    field: ReportField,
    task: Task,
) -> Result<Vec<LabeledText>> {
    let mut out = Vec::new();
    for r in corpus.reports.iter().filter(|r| ids.contains(r.report_id.as_str())) {
        let Some(text) = field.text_of(r) else {
            log::info!("report {} has no {} text; skipped", r.report_id, field.as_str());
            continue;
        };
        let label = r
            .gold_label
            .ok_or_else(|| Error::UnlabeledReport(r.report_id.clone()))?;
        out.push(LabeledText {
            id: r.report_id.clone(),
            text: text.to_string(),
            label: task.target(label),
        });
    }
    Ok(out)
}

/// Training and evaluation reports of the development patients.
#[derive(Debug, Clone, PartialEq)]
pub struct DevelopmentSet {
    pub task: Task,
    pub field: ReportField,
    pub train: Vec<LabeledText>,
    pub eval: Vec<LabeledText>,
}

impl DevelopmentSet {
    pub fn new(corpus: &Corpus, split: &CorpusSplit, field: ReportField, task: Task) -> Result<Self> {
        let problems = split.check(corpus);
        if !problems.is_empty() {
            return Err(Error::InvalidSplit(problems.join("; ")));
        }
        let train_ids: HashSet<&str> = split.train_report_ids.iter().map(String::as_str).collect();
        let eval_ids: HashSet<&str> = split.eval_report_ids.iter().map(String::as_str).collect();
        Ok(DevelopmentSet {
            task,
            field,
            train: labeled_texts(corpus, &train_ids, field, task)?,
            eval: labeled_texts(corpus, &eval_ids, field, task)?,
        })
    }

    pub fn report_ids(&self) -> impl Iterator<Item = &str> {
        self.train.iter().chain(&self.eval).map(|r| r.id.as_str())
    }
}

/// Validation reports of `split` as labeled texts.
pub fn validation_texts(
    corpus: &Corpus,
    split: &CorpusSplit,
    field: ReportField,
    task: Task,
) -> Result<Vec<LabeledText>> {
    let val = split.validation_reports(corpus);
    let ids: HashSet<&str> = val.reports.iter().map(|r| r.report_id.as_str()).collect();
    labeled_texts(&val, &ids, field, task)
}

/// Metrics for predictions against gold targets under the task's averaging
/// convention. AUROC is left out, with a log line, when the gold labels do
/// not allow it.
pub fn score_predictions(task: Task, gold: &[usize], preds: &PredictionSet) -> Result<MetricsReport> {
    let predicted = preds.predicted_classes();
    let cm = confusion(gold, &predicted, task.num_classes())?;
    let probs = preds.probs();
    match report_with(&cm, Some(&probs), gold, task.metrics_options()) {
        Ok(r) => Ok(r),
        Err(Error::SingleClassPresent) => {
            log::warn!("AUROC undefined: gold labels contain a single class");
            report_with(&cm, None, gold, task.metrics_options())
        }
        Err(e) => Err(e),
    }
}

/// Truncates every text to the trial's token budget.
pub fn truncate_all(tokenizer: &Tokenizer, texts: &[LabeledText], max_tokens: u32) -> Vec<LabeledText> {
    texts
        .iter()
        .map(|t| LabeledText {
            id: t.id.clone(),
            text: tokenizer.truncate(&t.text, max_tokens as usize).to_string(),
            label: t.label,
        })
        .collect()
}

/// Single prediction pass of the selected model over held-out reports.
pub fn evaluate_validation(
    best: &TrialResult,
    val: &[LabeledText],
    backend: &dyn Backend,
    tokenizer: &Tokenizer,
) -> Result<MetricsReport> {
    if val.is_empty() {
        return Err(Error::DegenerateMatrix("validation set is empty".into()));
    }
    let cfg = &best.config;
    let inputs: Vec<ReportText> = truncate_all(tokenizer, val, cfg.max_tokens)
        .iter()
        .map(LabeledText::unlabeled)
        .collect();
    let preds = backend.predict(&best.checkpoint_ref, &inputs, cfg)?;
    preds.check(&inputs)?;
    let gold: Vec<usize> = val.iter().map(|v| v.label).collect();
    score_predictions(cfg.task, &gold, &preds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: String,
    pub config: TrialConfig,
    pub eval_metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_metrics: Option<MetricsReport>,
    pub checkpoint_ref: String,
    /// Wall time in seconds. Logged, never serialized, so result files stay
    /// byte-stable across runs.
    #[serde(skip)]
    pub wall_time: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(model: ModelType, max_tokens: u32) -> TrialConfig {
        TrialConfig {
            model_type: model,
            max_tokens,
            learning_rate: 2e-5,
            seed: 0,
            batch_size: 16,
            epochs: 3,
            task: Task::Binary,
            report_field: ReportField::Full,
            optimization_metric: OptimizationMetric::Auroc,
        }
    }

    #[test]
    fn token_limits_per_model() {
        assert!(cfg(ModelType::ClinicalBert, 512).validate().is_ok());
        assert!(cfg(ModelType::ClinicalBert, 1024).validate().is_err());
        assert!(cfg(ModelType::ClinicalBigbird, 2048).validate().is_ok());
        assert!(cfg(ModelType::ClinicalBigbird, 4096).validate().is_err());
        assert!(cfg(ModelType::BaselineLinear, 333).validate().is_ok());
        let mut bad = cfg(ModelType::BaselineLinear, 10);
        bad.learning_rate = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trial_ids_are_distinct() {
        let a = cfg(ModelType::ClinicalBigbird, 512).trial_id();
        let mut c = cfg(ModelType::ClinicalBigbird, 512);
        c.learning_rate = 5e-5;
        assert_eq!(a, "clinical_bigbird-t512-lr2e-5-s0");
        assert_ne!(a, c.trial_id());
    }

    #[test]
    fn prediction_set_checks_coverage() {
        let reqs = vec![
            ReportText { id: "a".into(), text: String::new() },
            ReportText { id: "b".into(), text: String::new() },
        ];
        let good = PredictionSet {
            num_classes: 2,
            rows: vec![
                PredictionRow { id: "a".into(), probs: vec![0.4, 0.6] },
                PredictionRow { id: "b".into(), probs: vec![1.0, 0.0] },
            ],
        };
        assert!(good.check(&reqs).is_ok());
        assert_eq!(good.predicted_classes(), vec![1, 0]);
        let mut missing = good.clone();
        missing.rows.pop();
        assert!(missing.check(&reqs).is_err());
        let mut unnormalized = good.clone();
        unnormalized.rows[0].probs = vec![0.4, 0.7];
        assert!(unnormalized.check(&reqs).is_err());
    }
}
