use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ModelType, RunResults, Task};
use crate::corpus::ReportField;
use crate::error::Result;
use crate::metrics::MetricsReport;

/// Model column value for the reference rows.
pub const RULE_BASED_LABEL: &str = "Rule-Based (external reference)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Development,
    Validation,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Development => "Development",
            Dataset::Validation => "Validation",
        }
    }
}

/// Published numbers of the rule-based sub-section system. These are
/// external constants, not computed by this crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparatorRow {
    pub task: Task,
    pub dataset: Dataset,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
}

const COMPARATOR: [ComparatorRow; 4] = [
    ComparatorRow { task: Task::Binary, dataset: Dataset::Development, recall: 1.000, precision: 0.938, accuracy: 0.989, f1: 0.968 },
    ComparatorRow { task: Task::Binary, dataset: Dataset::Validation, recall: 1.000, precision: 0.966, accuracy: 0.990, f1: 0.982 },
    ComparatorRow { task: Task::Multiclass, dataset: Dataset::Development, recall: 0.970, precision: 0.977, accuracy: 0.989, f1: 0.971 },
    ComparatorRow { task: Task::Multiclass, dataset: Dataset::Validation, recall: 0.973, precision: 0.946, accuracy: 0.975, f1: 0.958 },
];

pub fn comparator_rows(task: Task) -> Vec<ComparatorRow> {
    COMPARATOR.iter().filter(|c| c.task == task).copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub report_type: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Dataset>,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
    pub f2_beta: Option<f64>,
    pub external: bool,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn report_type(field: ReportField) -> &'static str {
    match field {
        ReportField::Subsection => "Sub-Section",
        ReportField::Full => "Full",
    }
}

fn model_label(model: ModelType) -> &'static str {
    match model {
        ModelType::ClinicalBert => "ClinicalBERT",
        ModelType::ClinicalBigbird => "ClinicalBigBird",
        ModelType::BaselineLinear => "Baseline (linear)",
    }
}

fn model_row(run: &RunResults, model: ModelType, dataset: Option<Dataset>, m: &MetricsReport) -> TableRow {
    TableRow {
        report_type: report_type(run.report_field).into(),
        model: model_label(model).into(),
        dataset,
        recall: round3(m.recall),
        precision: round3(m.precision),
        accuracy: round3(m.accuracy),
        f1: round3(m.f1),
        auroc: m.auroc.map(round3),
        f2_beta: (run.report_field == ReportField::Full).then(|| round3(m.f2_beta)),
        external: false,
    }
}

/// Result rows for the best model of each run, sub-section runs first,
/// followed by comparator rows and then full-report runs. With `expanded`
/// each model gets a development and a validation row; otherwise only the
/// validation row. Runs without the requested metrics are skipped.
pub fn results_table(runs: &[RunResults], comparators: &[ComparatorRow], expanded: bool) -> Vec<TableRow> {
    let datasets: &[Dataset] = if expanded {
        &[Dataset::Development, Dataset::Validation]
    } else {
        &[Dataset::Validation]
    };
    let mut rows = Vec::new();
    let emit_runs = |field: ReportField, rows: &mut Vec<TableRow>| {
        for run in runs.iter().filter(|r| r.report_field == field) {
            let Some(best) = run.best() else {
                log::warn!("run has no best trial; skipped");
                continue;
            };
            for &d in datasets {
                let metrics = match d {
                    Dataset::Development => best.dev_metrics.as_ref(),
                    Dataset::Validation => run.validation.as_ref(),
                };
                match metrics {
                    Some(m) => rows.push(model_row(run, best.config.model_type, expanded.then_some(d), m)),
                    None => log::warn!(
                        "no {} metrics for {}; row skipped",
                        d.as_str(),
                        best.trial_id
                    ),
                }
            }
        }
    };
    emit_runs(ReportField::Subsection, &mut rows);
    for &d in datasets {
        for c in comparators.iter().filter(|c| c.dataset == d) {
            rows.push(TableRow {
                report_type: report_type(ReportField::Subsection).into(),
                model: RULE_BASED_LABEL.into(),
                dataset: expanded.then_some(d),
                recall: c.recall,
                precision: c.precision,
                accuracy: c.accuracy,
                f1: c.f1,
                auroc: None,
                f2_beta: None,
                external: true,
            });
        }
    }
    emit_runs(ReportField::Full, &mut rows);
    rows
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// CSV in the column order Report Type, Model, [Dataset,] Recall, Precision,
/// Accuracy, F1-Score, AU-ROC, [F2-Beta]. The dataset column appears when
/// rows carry a dataset; F2-Beta when any row has it.
pub fn write_table_csv<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let with_dataset = rows.iter().any(|r| r.dataset.is_some());
    let with_f2 = rows.iter().any(|r| r.f2_beta.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Report Type", "Model"];
    if with_dataset {
        header.push("Dataset");
    }
    header.extend(["Recall", "Precision", "Accuracy", "F1-Score", "AU-ROC"]);
    if with_f2 {
        header.push("F2-Beta");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.report_type.clone(), r.model.clone()];
        if with_dataset {
            rec.push(r.dataset.map_or("", Dataset::as_str).to_string());
        }
        rec.extend([
            cell(Some(r.recall)),
            cell(Some(r.precision)),
            cell(Some(r.accuracy)),
            cell(Some(r.f1)),
            cell(r.auroc),
        ]);
        if with_f2 {
            rec.push(cell(r.f2_beta));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| crate::error::Error::io("<table output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{OptimizationMetric, TrialConfig, TrialResult};
    use crate::metrics::{binary_report, ConfusionMatrix};

    fn run(field: ReportField, cm: ConfusionMatrix) -> RunResults {
        let mut m = binary_report(&cm).unwrap();
        m.auroc = Some(0.9971);
        let config = TrialConfig {
            model_type: ModelType::ClinicalBert,
            max_tokens: 512,
            learning_rate: 2e-5,
            seed: 0,
            batch_size: 16,
            epochs: 3,
            task: Task::Binary,
            report_field: field,
            optimization_metric: OptimizationMetric::Auroc,
        };
        RunResults {
            task: Task::Binary,
            report_field: field,
            optimization_metric: OptimizationMetric::Auroc,
            backend: "stub".into(),
            split_seed: 0,
            trials: vec![TrialResult {
                trial_id: config.trial_id(),
                config: config.clone(),
                eval_metrics: m.clone(),
                dev_metrics: Some(m.clone()),
                checkpoint_ref: "x".into(),
                wall_time: 0.0,
            }],
            failures: vec![],
            best_trial_id: config.trial_id(),
            validation: Some(m),
        }
    }

    fn csv_of(rows: &[TableRow]) -> String {
        let mut buf = Vec::new();
        write_table_csv(rows, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn comparator_row_is_injected_between_fields() {
        let runs = [
            run(ReportField::Full, ConfusionMatrix::binary(51, 6, 5, 256)),
            run(ReportField::Subsection, ConfusionMatrix::binary(56, 7, 0, 255)),
        ];
        let rows = results_table(&runs, &comparator_rows(Task::Binary), false);
        let text = csv_of(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            [
                "Report Type,Model,Recall,Precision,Accuracy,F1-Score,AU-ROC,F2-Beta",
                "Sub-Section,ClinicalBERT,1.000,0.889,0.978,0.964,0.997,-",
                "Sub-Section,Rule-Based (external reference),1.000,0.966,0.990,0.982,-,-",
                "Full,ClinicalBERT,0.911,0.895,0.965,0.941,0.997,0.943",
            ]
        );
        assert!(rows[1].external && !rows[0].external);
    }

    #[test]
    fn without_comparator_only_model_rows() {
        let runs = [run(ReportField::Subsection, ConfusionMatrix::binary(56, 7, 0, 255))];
        let rows = results_table(&runs, &[], false);
        assert_eq!(rows.len(), 1);
        let text = csv_of(&rows);
        assert!(text.starts_with("Report Type,Model,Recall,Precision,Accuracy,F1-Score,AU-ROC\n"));
    }

    #[test]
    fn expanded_layout_has_dataset_column() {
        let runs = [run(ReportField::Subsection, ConfusionMatrix::binary(56, 0, 3, 242))];
        let rows = results_table(&runs, &comparator_rows(Task::Binary), true);
        assert_eq!(rows.len(), 4);
        let text = csv_of(&rows);
        assert!(text.contains("Sub-Section,Rule-Based (external reference),Development,1.000,0.938,0.989,0.968,-"));
        assert!(text.contains("Sub-Section,ClinicalBERT,Development,0.949,1.000,0.990,0.984,0.997"));
    }

    #[test]
    fn multiclass_comparator_constants() {
        let rows = comparator_rows(Task::Multiclass);
        let v = rows.iter().find(|r| r.dataset == Dataset::Validation).unwrap();
        assert_eq!((v.recall, v.precision, v.accuracy, v.f1), (0.973, 0.946, 0.975, 0.958));
    }
}
