use std::io::{pipe, BufReader};
use std::thread;

use bepath::corpus::ReportField;
use bepath::harness::worker::{serve_stub, train_request, TextItem, WorkerSession};
use bepath::harness::{LabeledText, ModelType, OptimizationMetric, TrialConfig, Task};
use bepath::ErrorKind;

fn toy_task() -> (Vec<LabeledText>, Vec<LabeledText>) {
    let texts = [
        ("Barrett esophagus with high-grade dysplasia.", 1),
        ("Squamous mucosa, no Barrett.", 0),
        ("Intestinal metaplasia, negative for dysplasia.", 0),
        ("Invasive adenocarcinoma.", 1),
        ("Low-grade dysplasia in Barrett mucosa.", 1),
        ("Gastric cardia mucosa.", 0),
        ("Indefinite for dysplasia.", 0),
        ("High-grade dysplasia present.", 1),
        ("Chronic inflammation only.", 0),
        ("Barrett without dysplasia.", 0),
    ];
    let all: Vec<LabeledText> = texts
        .iter()
        .enumerate()
        .map(|(i, (t, l))| LabeledText {
            id: format!("r{i}"),
            text: t.to_string(),
            label: *l,
        })
        .collect();
    let (train, eval) = all.split_at(7);
    (train.to_vec(), eval.to_vec())
}

fn config(model: ModelType) -> TrialConfig {
    TrialConfig {
        model_type: model,
        max_tokens: 512,
        learning_rate: 2e-5,
        seed: 0,
        batch_size: 16,
        epochs: 2,
        task: Task::Binary,
        report_field: ReportField::Subsection,
        optimization_metric: OptimizationMetric::Auroc,
    }
}

#[test]
fn session_against_stub_over_pipes() {
    let (to_worker_r, to_worker_w) = pipe().unwrap();
    let (from_worker_r, from_worker_w) = pipe().unwrap();
    let worker = thread::spawn(move || serve_stub(BufReader::new(to_worker_r), from_worker_w));
    let mut session = WorkerSession::new(BufReader::new(from_worker_r), to_worker_w);

    session.handshake().unwrap();
    let (train, eval) = toy_task();
    let eval_texts: Vec<_> = eval.iter().map(LabeledText::unlabeled).collect();
    let cfg = config(ModelType::ClinicalBert);
    let (checkpoint, rows) = session.train(train_request(&train, &eval_texts, &cfg)).unwrap();
    assert_eq!(rows.len(), eval.len());
    for (row, text) in rows.iter().zip(&eval) {
        assert_eq!(row.id, text.id);
        assert_eq!(row.probs.len(), 2);
        assert!((row.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }

    let reports: Vec<TextItem> = train
        .iter()
        .map(|t| TextItem { id: t.id.clone(), text: t.text.clone() })
        .collect();
    let preds = session.predict(&checkpoint, reports).unwrap();
    assert_eq!(preds.len(), train.len());
    for (row, t) in preds.iter().zip(&train) {
        let argmax = if row.probs[1] > row.probs[0] { 1 } else { 0 };
        assert_eq!(argmax, t.label, "memorized text {} mispredicted", t.id);
    }

    let err = session.predict("no-such-checkpoint", Vec::new()).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Backend);

    let bad = train_request(&train, &eval_texts, &config(ModelType::BaselineLinear));
    let err = session.train(bad).unwrap_err();
    assert!(err.to_string().contains("unavailable"), "{err}");

    // The worker survives both error replies.
    session.predict(&checkpoint, Vec::new()).unwrap();
    session.shutdown().unwrap();
    drop(session);
    worker.join().unwrap().unwrap();
}
