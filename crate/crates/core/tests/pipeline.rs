use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use bepath::corpus::{
    affirmative_labels, generate_synthetic, validate_corpus, Corpus, GeneratorSpec, ReportField,
    SIGNATURE_MARKER,
};
use bepath::harness::baseline::{BaselineBackend, BaselineOptions};
use bepath::harness::{
    evaluate_validation, run_grid, validation_texts, Backend, DevelopmentSet, FitOutput,
    GridRunner, GridSpec, LabeledText, ModelType, OptimizationMetric, PredictionRow, PredictionSet,
    ReportText, RunResults, Task, TrialConfig, TrialResult,
};
use bepath::metrics::{binary_report, ConfusionMatrix};
use bepath::preprocess::{preprocess_corpus, HeadingLexicon, PreprocessMode};
use bepath::splits::{CorpusSplit, SplitOptions};
use bepath::tokenize::Tokenizer;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn prepared(patients: usize, seed: u64) -> Corpus {
    let raw = generate_synthetic(&GeneratorSpec::new(patients, seed)).unwrap();
    preprocess_corpus(&raw, PreprocessMode::Subsection, &HeadingLexicon::default()).corpus
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_corpus_is_consistent(patients in 1usize..40, seed in any::<u64>()) {
        let corpus = prepared(patients, seed);
        prop_assert!(validate_corpus(&corpus).is_valid());
        prop_assert_eq!(corpus.patients().len(), patients);
        for r in &corpus.reports {
            let sub = r.sub_section_text.as_deref().expect("generator always writes a diagnosis section");
            prop_assert!(!sub.contains(SIGNATURE_MARKER));
            for line in sub.lines() {
                prop_assert!(r.full_text.contains(line));
            }
            prop_assert_eq!(affirmative_labels(sub), vec![r.gold_label.unwrap()]);
        }
    }

    #[test]
    fn split_partitions_patients_and_reports(patients in 2usize..40, seed in any::<u64>(), stratify in any::<bool>()) {
        let corpus = prepared(patients, seed);
        let opts = SplitOptions { seed, stratify, ..SplitOptions::default() };
        let Ok(split) = CorpusSplit::build(&corpus, &opts) else {
            // Development side too small for a report split.
            return Ok(());
        };
        prop_assert!(split.check(&corpus).is_empty());
        let val = split.validation_reports(&corpus);
        for r in &val.reports {
            prop_assert!(!split.train_report_ids.contains(&r.report_id));
            prop_assert!(!split.eval_report_ids.contains(&r.report_id));
        }
        prop_assert_eq!(
            val.len() + split.train_report_ids.len() + split.eval_report_ids.len(),
            corpus.len()
        );
    }
}

/// Returns stored probability rows keyed by report id.
struct Replay {
    rows: BTreeMap<String, Vec<f64>>,
}

impl Backend for Replay {
    fn name(&self) -> &str {
        "replay"
    }

    fn supports(&self, _: ModelType) -> bool {
        true
    }

    fn fit(&self, _: &[LabeledText], _: &[ReportText], _: &TrialConfig) -> bepath::Result<FitOutput> {
        unreachable!("replay backend only predicts")
    }

    fn predict(&self, _: &str, reports: &[ReportText], _: &TrialConfig) -> bepath::Result<PredictionSet> {
        Ok(PredictionSet {
            num_classes: 2,
            rows: reports
                .iter()
                .map(|r| PredictionRow { id: r.id.clone(), probs: self.rows[&r.id].clone() })
                .collect(),
        })
    }
}

fn trial(model: ModelType) -> TrialResult {
    let config = TrialConfig {
        model_type: model,
        max_tokens: 512,
        learning_rate: 2e-5,
        seed: 0,
        batch_size: 16,
        epochs: 3,
        task: Task::Binary,
        report_field: ReportField::Subsection,
        optimization_metric: OptimizationMetric::Auroc,
    };
    TrialResult {
        trial_id: config.trial_id(),
        config,
        eval_metrics: binary_report(&ConfusionMatrix::binary(1, 0, 0, 1)).unwrap(),
        dev_metrics: None,
        checkpoint_ref: "replayed".into(),
        wall_time: 0.0,
    }
}

#[test]
fn validation_replay_reproduces_published_matrix() {
    // 56 positives all caught, 7 of 262 negatives flagged.
    let mut val = Vec::new();
    let mut rows = BTreeMap::new();
    for i in 0..318 {
        let label = usize::from(i < 56);
        let flagged = i < 63;
        let id = format!("v{i:03}");
        let p1 = if flagged { 0.6 + (i % 5) as f64 * 0.05 } else { 0.1 };
        rows.insert(id.clone(), vec![1.0 - p1, p1]);
        val.push(LabeledText { id, text: "text".into(), label });
    }
    let m = evaluate_validation(
        &trial(ModelType::ClinicalBert),
        &val,
        &Replay { rows },
        &Tokenizer::whitespace(),
    )
    .unwrap();
    let oracle = binary_report(&ConfusionMatrix::binary(56, 7, 0, 255)).unwrap();
    assert_eq!((m.recall, m.precision, m.accuracy, m.f1), (oracle.recall, oracle.precision, oracle.accuracy, oracle.f1));
    assert!(m.auroc.unwrap() > 0.98);
}

fn digest_tree(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let hash = Sha256::digest(fs::read(&path).unwrap());
                let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), hex);
            }
        }
    }
    out
}

#[test]
fn checkpoints_are_written_once_and_never_touched_by_evaluation() {
    let corpus = prepared(40, 3);
    let split = CorpusSplit::build(&corpus, &SplitOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let backend = BaselineBackend::with_dir(BaselineOptions::default(), dir.path());
    let dev = DevelopmentSet::new(&corpus, &split, ReportField::Subsection, Task::Multiclass).unwrap();
    let grid = GridSpec { seeds: vec![0], ..GridSpec::default() }.expand();
    let results = RunResults::new(run_grid(&dev, &grid, &GridRunner::new(&backend)).unwrap(), backend.name(), 0);

    let before = digest_tree(&dir.path().join("checkpoints"));
    assert_eq!(before.len(), grid.len());
    for t in &results.trials {
        assert!(dir.path().join(&t.checkpoint_ref).join("model.json").is_file());
    }

    let val = validation_texts(&corpus, &split, ReportField::Subsection, Task::Multiclass).unwrap();
    let best = results.best().unwrap();
    evaluate_validation(best, &val, &backend, &Tokenizer::whitespace()).unwrap();
    let reloaded = BaselineBackend::with_dir(BaselineOptions::default(), dir.path());
    evaluate_validation(best, &val, &reloaded, &Tokenizer::whitespace()).unwrap();
    assert_eq!(digest_tree(&dir.path().join("checkpoints")), before);
}

#[test]
fn results_file_round_trips() {
    let corpus = prepared(30, 1);
    let split = CorpusSplit::build(&corpus, &SplitOptions::default()).unwrap();
    let backend = BaselineBackend::in_memory(BaselineOptions::default());
    let dev = DevelopmentSet::new(&corpus, &split, ReportField::Full, Task::Binary).unwrap();
    let grid = GridSpec { task: Task::Binary, report_field: ReportField::Full, seeds: vec![0], ..GridSpec::default() };
    let results = RunResults::new(run_grid(&dev, &grid.expand(), &GridRunner::new(&backend)).unwrap(), backend.name(), 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.json");
    results.save(&path).unwrap();
    let loaded = RunResults::load(&path).unwrap();
    assert_eq!(loaded.to_json().unwrap(), results.to_json().unwrap());
    let ids: HashSet<&str> = loaded.trials.iter().map(|t| t.trial_id.as_str()).collect();
    assert!(ids.contains(loaded.best_trial_id.as_str()));
}
