//! Client side of the out-of-process trainer protocol: newline-delimited
//! JSON over the worker's stdin and stdout, one request in flight per
//! worker. [`WorkerBackend`] keeps a pool of worker processes so that
//! parallel trials each get their own.
//!
//! [`serve_stub`] is a tiny deterministic worker used to exercise the
//! protocol without a transformer stack.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, FitOutput, LabeledText, ModelType, PredictionRow, PredictionSet, ReportText, TrialConfig};
use crate::error::{Error, Result};

pub const PROTO_VERSION: u32 = 1;

/// Environment variable carrying the worker's checkpoint directory.
pub const CHECKPOINT_DIR_ENV: &str = "BEPATH_WORKER_CHECKPOINT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub id: String,
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextItem {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Hello {
        proto_version: u32,
    },
    Train {
        trial_id: String,
        model_name: String,
        num_labels: usize,
        max_tokens: u32,
        learning_rate: f64,
        seed: u64,
        batch_size: u32,
        epochs: u32,
        train: Vec<TrainExample>,
        eval: Vec<TextItem>,
    },
    Predict {
        checkpoint_id: String,
        reports: Vec<TextItem>,
    },
    Shutdown {},
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ModelUnavailable,
    Oom,
    BadRequest,
    #[serde(other)]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Ready {
        proto_version: u32,
    },
    Progress {
        trial_id: String,
        epoch: u32,
        loss: f64,
    },
    Trained {
        trial_id: String,
        checkpoint_id: String,
        eval_predictions: Vec<PredictionRow>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metadata: Option<serde_json::Value>,
    },
    Predicted {
        checkpoint_id: String,
        predictions: Vec<PredictionRow>,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

fn worker_error(code: ErrorCode, detail: String) -> Error {
    match code {
        ErrorCode::ModelUnavailable => Error::BackendUnavailable(detail),
        ErrorCode::Oom => Error::TrainingFailure(format!("out of memory: {detail}")),
        ErrorCode::BadRequest | ErrorCode::Other => Error::Protocol(format!("{code:?}: {detail}")),
    }
}

/// One conversation with a worker over a reader/writer pair.
pub struct WorkerSession<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead, W: Write> WorkerSession<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        WorkerSession { reader, writer }
    }

    pub fn send(&mut self, req: &Request) -> Result<()> {
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::BackendUnavailable(format!("worker stdin closed: {e}")))
    }

    pub fn recv(&mut self) -> Result<Response> {
        let mut line = String::new();
        loop {
            line.clear();
            let n = self
                .reader
                .read_line(&mut line)
                .map_err(|e| Error::BackendUnavailable(format!("reading worker output: {e}")))?;
            if n == 0 {
                return Err(Error::BackendUnavailable("worker closed its output".into()));
            }
            if !line.trim().is_empty() {
                break;
            }
        }
        serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("unparseable worker message {:?}: {e}", line.trim_end())))
    }

    /// Sends hello and requires a matching protocol version.
    pub fn handshake(&mut self) -> Result<()> {
        self.send(&Request::Hello {
            proto_version: PROTO_VERSION,
        })?;
        match self.recv()? {
            Response::Ready { proto_version } if proto_version == PROTO_VERSION => Ok(()),
            Response::Ready { proto_version } => Err(Error::Protocol(format!(
                "worker speaks protocol {proto_version}, expected {PROTO_VERSION}"
            ))),
            Response::Error { code, detail } => Err(worker_error(code, detail)),
            other => Err(Error::Protocol(format!("expected ready, got {other:?}"))),
        }
    }

    /// Trains and returns the checkpoint id and eval predictions.
    pub fn train(&mut self, req: Request) -> Result<(String, Vec<PredictionRow>)> {
        let Request::Train { trial_id, .. } = &req else {
            return Err(Error::Protocol("train expects a train request".into()));
        };
        let trial_id = trial_id.clone();
        self.send(&req)?;
        loop {
            match self.recv()? {
                Response::Progress { trial_id: t, epoch, loss } if t == trial_id => {
                    log::info!("{t}: epoch {epoch} loss {loss:.4}");
                }
                Response::Trained {
                    trial_id: t,
                    checkpoint_id,
                    eval_predictions,
                    metadata,
                } if t == trial_id => {
                    if let Some(meta) = metadata {
                        log::info!("{t}: worker metadata {meta}");
                    }
                    return Ok((checkpoint_id, eval_predictions));
                }
                Response::Error { code, detail } => return Err(worker_error(code, detail)),
                other => {
                    return Err(Error::Protocol(format!(
                        "unexpected message while training {trial_id}: {other:?}"
                    )))
                }
            }
        }
    }

    pub fn predict(&mut self, checkpoint_id: &str, reports: Vec<TextItem>) -> Result<Vec<PredictionRow>> {
        self.send(&Request::Predict {
            checkpoint_id: checkpoint_id.to_string(),
            reports,
        })?;
        match self.recv()? {
            Response::Predicted {
                checkpoint_id: c,
                predictions,
            } if c == checkpoint_id => Ok(predictions),
            Response::Error { code, detail } => Err(worker_error(code, detail)),
            other => Err(Error::Protocol(format!("expected predicted, got {other:?}"))),
        }
    }

    pub fn shutdown(&mut self) -> Result<()> {
        self.send(&Request::Shutdown {})
    }
}

pub fn train_request(train: &[LabeledText], eval: &[ReportText], cfg: &TrialConfig) -> Request {
    Request::Train {
        trial_id: cfg.trial_id(),
        model_name: cfg.model_type.as_str().to_string(),
        num_labels: cfg.task.num_classes(),
        max_tokens: cfg.max_tokens,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        train: train
            .iter()
            .map(|t| TrainExample {
                id: t.id.clone(),
                text: t.text.clone(),
                label: t.label,
            })
            .collect(),
        eval: text_items(eval),
    }
}

fn text_items(reports: &[ReportText]) -> Vec<TextItem> {
    reports
        .iter()
        .map(|r| TextItem {
            id: r.id.clone(),
            text: r.text.clone(),
        })
        .collect()
}

type ProcessSession = WorkerSession<BufReader<ChildStdout>, ChildStdin>;

struct Worker {
    child: Child,
    session: ProcessSession,
}

/// [`Backend`] that delegates transformer trials to worker processes.
pub struct WorkerBackend {
    command: Vec<String>,
    checkpoint_dir: Option<PathBuf>,
    idle: Mutex<Vec<Worker>>,
}

impl WorkerBackend {
    /// `command` is the program and its arguments.
    pub fn new(command: Vec<String>, checkpoint_dir: Option<PathBuf>) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Config("worker command is empty".into()));
        }
        Ok(WorkerBackend {
            command,
            checkpoint_dir,
            idle: Mutex::new(Vec::new()),
        })
    }

    fn spawn(&self) -> Result<Worker> {
        let mut cmd = Command::new(&self.command[0]);
        cmd.args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        if let Some(dir) = &self.checkpoint_dir {
            cmd.env(CHECKPOINT_DIR_ENV, dir);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| Error::BackendUnavailable(format!("cannot start {:?}: {e}", self.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut session = WorkerSession::new(BufReader::new(stdout), stdin);
        if let Err(e) = session.handshake() {
            let _ = child.kill();
            let _ = child.wait();
            return Err(e);
        }
        Ok(Worker { child, session })
    }

    /// Runs `f` on an idle worker, spawning one if needed. Workers that hit
    /// an error are discarded.
    fn with_worker<T>(&self, f: impl FnOnce(&mut ProcessSession) -> Result<T>) -> Result<T> {
        let pooled = self.idle.lock().expect("worker pool poisoned").pop();
        let mut worker = match pooled {
            Some(w) => w,
            None => self.spawn()?,
        };
        match f(&mut worker.session) {
            Ok(v) => {
                self.idle.lock().expect("worker pool poisoned").push(worker);
                Ok(v)
            }
            Err(e) => {
                let _ = worker.child.kill();
                let _ = worker.child.wait();
                Err(e)
            }
        }
    }
}

impl Drop for WorkerBackend {
    fn drop(&mut self) {
        let workers = std::mem::take(self.idle.get_mut().expect("worker pool poisoned"));
        for mut w in workers {
            let _ = w.session.shutdown();
            drop(w.session);
            let _ = w.child.wait();
        }
    }
}

impl Backend for WorkerBackend {
    fn name(&self) -> &str {
        "worker"
    }

    fn supports(&self, model: ModelType) -> bool {
        model.is_transformer()
    }

    fn fit(&self, train: &[LabeledText], eval: &[ReportText], cfg: &TrialConfig) -> Result<FitOutput> {
        let req = train_request(train, eval, cfg);
        let (checkpoint_ref, rows) = self.with_worker(|s| s.train(req))?;
        Ok(FitOutput {
            checkpoint_ref,
            eval_predictions: PredictionSet {
                num_classes: cfg.task.num_classes(),
                rows,
            },
        })
    }

    fn predict(&self, checkpoint_ref: &str, reports: &[ReportText], cfg: &TrialConfig) -> Result<PredictionSet> {
        let items = text_items(reports);
        let rows = self.with_worker(|s| s.predict(checkpoint_ref, items))?;
        Ok(PredictionSet {
            num_classes: cfg.task.num_classes(),
            rows,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StubModel {
    /// Smoothed class prior.
    prior: Vec<f64>,
    /// Training text to label.
    memory: HashMap<String, usize>,
}

impl StubModel {
    fn predict(&self, text: &str) -> Vec<f64> {
        match self.memory.get(text) {
            Some(&y) => {
                let k = self.prior.len() as f64;
                let mut p = vec![0.1 / (k - 1.0); self.prior.len()];
                p[y] = 0.9;
                p
            }
            None => self.prior.clone(),
        }
    }
}

/// Serves the protocol with a memorizing stub model until shutdown or end
/// of input. Accepts `clinical_bert` and `clinical_bigbird`; checkpoints
/// live in memory, and are also written as JSON when
/// `BEPATH_WORKER_CHECKPOINT_DIR` is set.
pub fn serve_stub<R: BufRead, W: Write>(input: R, mut output: W) -> std::io::Result<()> {
    let mut models: HashMap<String, StubModel> = HashMap::new();
    let checkpoint_dir = std::env::var_os(CHECKPOINT_DIR_ENV).map(PathBuf::from);
    let reply = |resp: Response, out: &mut W| -> std::io::Result<()> {
        let mut line = serde_json::to_string(&resp).map_err(std::io::Error::other)?;
        line.push('\n');
        out.write_all(line.as_bytes())?;
        out.flush()
    };
    let bad = |detail: String| Response::Error {
        code: ErrorCode::BadRequest,
        detail,
    };
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                reply(bad(format!("unparseable request: {e}")), &mut output)?;
                continue;
            }
        };
        let resp = match req {
            Request::Hello { .. } => Response::Ready {
                proto_version: PROTO_VERSION,
            },
            Request::Shutdown {} => return Ok(()),
            Request::Train {
                trial_id,
                model_name,
                num_labels,
                epochs,
                train,
                eval,
                ..
            } => {
                if model_name != "clinical_bert" && model_name != "clinical_bigbird" {
                    reply(
                        Response::Error {
                            code: ErrorCode::ModelUnavailable,
                            detail: format!("no pretrained weights for {model_name:?}"),
                        },
                        &mut output,
                    )?;
                    continue;
                }
                if num_labels < 2 || train.iter().any(|t| t.label >= num_labels) {
                    reply(bad("labels out of range".into()), &mut output)?;
                    continue;
                }
                let mut prior = vec![1.0; num_labels];
                for t in &train {
                    prior[t.label] += 1.0;
                }
                let total: f64 = prior.iter().sum();
                prior.iter_mut().for_each(|p| *p /= total);
                let model = StubModel {
                    prior,
                    memory: train.into_iter().map(|t| (t.text, t.label)).collect(),
                };
                for epoch in 1..=epochs {
                    reply(
                        Response::Progress {
                            trial_id: trial_id.clone(),
                            epoch,
                            loss: 1.0 / epoch as f64,
                        },
                        &mut output,
                    )?;
                }
                let checkpoint_id = format!("stub-{trial_id}");
                if let Some(dir) = &checkpoint_dir {
                    std::fs::create_dir_all(dir)?;
                    let json = serde_json::to_string(&model).map_err(std::io::Error::other)?;
                    std::fs::write(dir.join(format!("{checkpoint_id}.json")), json)?;
                }
                let eval_predictions = eval
                    .iter()
                    .map(|r| PredictionRow {
                        id: r.id.clone(),
                        probs: model.predict(&r.text),
                    })
                    .collect();
                models.insert(checkpoint_id.clone(), model);
                Response::Trained {
                    trial_id,
                    checkpoint_id,
                    eval_predictions,
                    metadata: Some(serde_json::json!({ "model": "stub" })),
                }
            }
            Request::Predict { checkpoint_id, reports } => {
                let model = models.get(&checkpoint_id).cloned().or_else(|| {
                    let dir = checkpoint_dir.as_ref()?;
                    let raw = std::fs::read_to_string(dir.join(format!("{checkpoint_id}.json"))).ok()?;
                    serde_json::from_str(&raw).ok()
                });
                match model {
                    Some(m) => Response::Predicted {
                        checkpoint_id,
                        predictions: reports
                            .iter()
                            .map(|r| PredictionRow {
                                id: r.id.clone(),
                                probs: m.predict(&r.text),
                            })
                            .collect(),
                    },
                    None => bad(format!("unknown checkpoint {checkpoint_id:?}")),
                }
            }
        };
        reply(resp, &mut output)?;
    }
    Ok(())
}
