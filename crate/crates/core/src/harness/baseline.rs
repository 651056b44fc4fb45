//! Dependency-free reference classifier: hashed unigram and bigram features
//! with IDF weighting, and multinomial logistic regression trained by
//! full-batch gradient descent.
//!
//! Checkpoints are JSON files holding only the weights of features seen in
//! training. The backend ignores `batch_size`; every step uses the whole
//! training set.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, FitOutput, LabeledText, ModelType, PredictionRow, PredictionSet, ReportText, TrialConfig};
use crate::error::{Error, Result};

/// Sparse feature vector as `(index, value)` pairs with unique indices.
pub type SparseVec = Vec<(u32, f64)>;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// Every example weighs the same.
    Uniform,
    /// Each present class contributes equally to the loss.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineOptions {
    /// log2 of the hashed feature space size.
    pub hash_bits: u32,
    /// Features seen in fewer training documents are dropped.
    pub min_df: usize,
    /// Skip words containing digits (dates, identifiers, measurements).
    pub skip_numeric: bool,
    pub use_idf: bool,
    pub l2: f64,
    pub class_weighting: ClassWeighting,
    /// Half-width of the uniform weight initialization drawn from the seed.
    pub init_scale: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            hash_bits: 18,
            min_df: 2,
            skip_numeric: true,
            use_idf: true,
            l2: 1e-4,
            class_weighting: ClassWeighting::Balanced,
            init_scale: 0.01,
        }
    }
}

/// Lowercased alphanumeric word runs.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Text to signed hashed term counts of unigrams and bigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub hash_bits: u32,
    pub skip_numeric: bool,
}

impl Featurizer {
    pub fn counts(&self, text: &str) -> BTreeMap<u32, f64> {
        let mask = (1u64 << self.hash_bits) - 1;
        let mut ws = words(text);
        if self.skip_numeric {
            ws.retain(|w| !w.chars().any(|c| c.is_numeric()));
        }
        let mut counts = BTreeMap::new();
        let mut add = |h: u64| {
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            *counts.entry((h & mask) as u32).or_insert(0.0) += sign;
        };
        for (i, w) in ws.iter().enumerate() {
            add(fnv1a(&[w.as_bytes()]));
            if let Some(next) = ws.get(i + 1) {
                add(fnv1a(&[w.as_bytes(), b"\x1f", next.as_bytes()]));
            }
        }
        counts
    }
}

/// Sublinear term frequency times IDF, L2-normalized. Features without an
/// IDF entry are dropped.
fn weight_features(counts: &BTreeMap<u32, f64>, idf: &HashMap<u32, f64>) -> SparseVec {
    let mut v: SparseVec = counts
        .iter()
        .filter_map(|(&i, &c)| {
            let w = *idf.get(&i)?;
            let tf = (1.0 + c.abs().ln()) * c.signum();
            (c != 0.0 && w > 0.0).then_some((i, tf * w))
        })
        .collect();
    let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, x) in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Smoothed inverse document frequency `ln((1 + n) / (1 + df))`, which is
/// zero for features present in every document, or 1 for every feature when
/// `use_idf` is off. Features with document frequency below `min_df` are
/// left out.
fn fit_idf(docs: &[BTreeMap<u32, f64>], min_df: usize, use_idf: bool) -> HashMap<u32, f64> {
    let mut df: HashMap<u32, usize> = HashMap::new();
    for d in docs {
        for (&i, &c) in d {
            if c != 0.0 {
                *df.entry(i).or_insert(0) += 1;
            }
        }
    }
    let n = docs.len() as f64;
    df.into_iter()
        .filter(|&(_, d)| d >= min_df)
        .map(|(i, d)| {
            let w = if use_idf { ((1.0 + n) / (1.0 + d as f64)).ln() } else { 1.0 };
            (i, w)
        })
        .collect()
}

/// Multinomial logistic regression over a dense index space `0..dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxRegression {
    pub k: usize,
    pub dim: usize,
    /// Row-major `dim x k`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl SoftmaxRegression {
    pub fn zeros(dim: usize, k: usize) -> Self {
        SoftmaxRegression {
            k,
            dim,
            weights: vec![0.0; dim * k],
            bias: vec![0.0; k],
        }
    }

    pub fn logits(&self, x: &[(u32, f64)]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &(i, v) in x {
            let row = &self.weights[i as usize * self.k..(i as usize + 1) * self.k];
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += w * v;
            }
        }
        z
    }

    pub fn predict_proba(&self, x: &[(u32, f64)]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Weighted mean cross-entropy plus `l2 / 2 * |W|^2` (bias unpenalized).
    /// `sample_weights` holds one weight per example.
    pub fn loss(&self, data: &[(SparseVec, usize)], sample_weights: &[f64], l2: f64) -> f64 {
        let n = data.len() as f64;
        let ce: f64 = data
            .iter()
            .zip(sample_weights)
            .map(|((x, y), w)| {
                let z = self.logits(x);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                w * (lse - z[*y])
            })
            .sum();
        ce / n + 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Analytic gradient of [`SoftmaxRegression::loss`].
    pub fn gradient(&self, data: &[(SparseVec, usize)], sample_weights: &[f64], l2: f64) -> Gradient {
        let n = data.len() as f64;
        let mut gw: Vec<f64> = self.weights.iter().map(|w| l2 * w).collect();
        let mut gb = vec![0.0; self.k];
        for ((x, y), sw) in data.iter().zip(sample_weights) {
            let mut p = self.predict_proba(x);
            p[*y] -= 1.0;
            let scale = sw / n;
            for (c, pc) in p.iter().enumerate() {
                gb[c] += scale * pc;
            }
            for &(i, v) in x {
                let row = &mut gw[i as usize * self.k..(i as usize + 1) * self.k];
                for (g, pc) in row.iter_mut().zip(&p) {
                    *g += scale * pc * v;
                }
            }
        }
        Gradient { weights: gw, bias: gb }
    }

    fn step(&mut self, g: &Gradient, lr: f64) {
        for (w, d) in self.weights.iter_mut().zip(&g.weights) {
            *w -= lr * d;
        }
        for (b, d) in self.bias.iter_mut().zip(&g.bias) {
            *b -= lr * d;
        }
    }
}

/// Per-example weights for the chosen weighting scheme.
pub fn sample_weights(labels: &[usize], k: usize, scheme: ClassWeighting) -> Vec<f64> {
    match scheme {
        ClassWeighting::Uniform => vec![1.0; labels.len()],
        ClassWeighting::Balanced => {
            let mut counts = vec![0usize; k];
            for &y in labels {
                counts[y] += 1;
            }
            let present = counts.iter().filter(|&&c| c > 0).count() as f64;
            let n = labels.len() as f64;
            labels
                .iter()
                .map(|&y| n / (present * counts[y] as f64))
                .collect()
        }
    }
}

/// Trains from a seeded small random initialization.
pub fn train(
    data: &[(SparseVec, usize)],
    dim: usize,
    k: usize,
    cfg: &TrialConfig,
    opts: &BaselineOptions,
) -> Result<SoftmaxRegression> {
    let mut model = SoftmaxRegression::zeros(dim, k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if opts.init_scale > 0.0 {
        for w in &mut model.weights {
            *w = rng.random_range(-opts.init_scale..=opts.init_scale);
        }
    }
    let labels: Vec<usize> = data.iter().map(|(_, y)| *y).collect();
    let weights = sample_weights(&labels, k, opts.class_weighting);
    for epoch in 0..cfg.epochs {
        let g = model.gradient(data, &weights, opts.l2);
        model.step(&g, cfg.learning_rate);
        let finite = model.weights.iter().chain(&model.bias).all(|w| w.is_finite());
        if !finite {
            return Err(Error::NumericalOverflow(format!(
                "weights diverged at epoch {epoch} with learning rate {}",
                cfg.learning_rate
            )));
        }
    }
    let loss = model.loss(data, &weights, opts.l2);
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow(format!("final loss is {loss}")));
    }
    log::debug!("baseline trained: {} epochs, loss {loss:.6}", cfg.epochs);
    Ok(model)
}

/// A trained baseline model in its persisted form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub featurizer: Featurizer,
    pub num_classes: usize,
    pub bias: Vec<f64>,
    /// `(hashed index, idf, per-class weights)`, sorted by index.
    pub features: Vec<(u32, f64, Vec<f64>)>,
}

impl Checkpoint {
    fn lookup(&self) -> (HashMap<u32, f64>, HashMap<u32, u32>) {
        let idf = self.features.iter().map(|(i, w, _)| (*i, *w)).collect();
        let compact = self
            .features
            .iter()
            .enumerate()
            .map(|(j, (i, _, _))| (*i, j as u32))
            .collect();
        (idf, compact)
    }

    pub fn predict(&self, texts: &[&str]) -> Vec<Vec<f64>> {
        let (idf, compact) = self.lookup();
        let model = SoftmaxRegression {
            k: self.num_classes,
            dim: self.features.len(),
            weights: self.features.iter().flat_map(|(_, _, w)| w.iter().copied()).collect(),
            bias: self.bias.clone(),
        };
        texts
            .iter()
            .map(|t| {
                let x = remap(&weight_features(&self.featurizer.counts(t), &idf), &compact);
                model.predict_proba(&x)
            })
            .collect()
    }
}

fn remap(x: &[(u32, f64)], compact: &HashMap<u32, u32>) -> SparseVec {
    x.iter()
        .filter_map(|(i, v)| compact.get(i).map(|&j| (j, *v)))
        .collect()
}

/// Fits features and model on `train` and returns the checkpoint.
pub fn fit_checkpoint(train_set: &[LabeledText], k: usize, cfg: &TrialConfig, opts: &BaselineOptions) -> Result<Checkpoint> {
    if train_set.is_empty() {
        return Err(Error::TrainingFailure("empty training set".into()));
    }
    if let Some(bad) = train_set.iter().find(|t| t.label >= k) {
        return Err(Error::LabelOutOfRange { label: bad.label, k });
    }
    let featurizer = Featurizer {
        hash_bits: opts.hash_bits,
        skip_numeric: opts.skip_numeric,
    };
    let counts: Vec<BTreeMap<u32, f64>> = train_set.iter().map(|t| featurizer.counts(&t.text)).collect();
    let idf = fit_idf(&counts, opts.min_df, opts.use_idf);
    let mut kept: Vec<u32> = idf.iter().filter(|(_, &w)| w > 0.0).map(|(&i, _)| i).collect();
    kept.sort_unstable();
    let compact: HashMap<u32, u32> = kept.iter().enumerate().map(|(j, &i)| (i, j as u32)).collect();
    let data: Vec<(SparseVec, usize)> = counts
        .iter()
        .zip(train_set)
        .map(|(c, t)| (remap(&weight_features(c, &idf), &compact), t.label))
        .collect();
    let model = train(&data, kept.len(), k, cfg, opts)?;
    let features = kept
        .iter()
        .enumerate()
        .map(|(j, &i)| (i, idf[&i], model.weights[j * k..(j + 1) * k].to_vec()))
        .collect();
    Ok(Checkpoint {
        featurizer,
        num_classes: k,
        bias: model.bias,
        features,
    })
}

enum Store {
    Memory(Mutex<HashMap<String, Checkpoint>>),
    Dir(PathBuf),
}

/// [`Backend`] for `baseline_linear` trials.
pub struct BaselineBackend {
    opts: BaselineOptions,
    store: Store,
}

impl BaselineBackend {
    /// Keeps checkpoints in memory only.
    pub fn in_memory(opts: BaselineOptions) -> Self {
        BaselineBackend {
            opts,
            store: Store::Memory(Mutex::new(HashMap::new())),
        }
    }

    /// Writes checkpoints under `run_dir/checkpoints/<trial id>/`.
    pub fn with_dir(opts: BaselineOptions, run_dir: impl Into<PathBuf>) -> Self {
        BaselineBackend {
            opts,
            store: Store::Dir(run_dir.into()),
        }
    }

    fn checkpoint_file(root: &Path, checkpoint_ref: &str) -> PathBuf {
        root.join(checkpoint_ref).join("model.json")
    }

    fn save(&self, cfg: &TrialConfig, ckpt: Checkpoint) -> Result<String> {
        let reference = format!("checkpoints/{}", cfg.trial_id());
        match &self.store {
            Store::Memory(m) => {
                m.lock().expect("checkpoint store poisoned").insert(reference.clone(), ckpt);
            }
            Store::Dir(root) => {
                let path = Self::checkpoint_file(root, &reference);
                let dir = path.parent().expect("checkpoint path has a parent");
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let mut json = serde_json::to_string(&ckpt)?;
                json.push('\n');
                fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(reference)
    }

    pub fn load(&self, checkpoint_ref: &str) -> Result<Checkpoint> {
        match &self.store {
            Store::Memory(m) => m
                .lock()
                .expect("checkpoint store poisoned")
                .get(checkpoint_ref)
                .cloned()
                .ok_or_else(|| Error::BackendUnavailable(format!("unknown checkpoint {checkpoint_ref}"))),
            Store::Dir(root) => {
                let path = Self::checkpoint_file(root, checkpoint_ref);
                let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Ok(serde_json::from_str(&raw)?)
            }
        }
    }
}

fn prediction_set(k: usize, reports: &[ReportText], probs: Vec<Vec<f64>>) -> PredictionSet {
    PredictionSet {
        num_classes: k,
        rows: reports
            .iter()
            .zip(probs)
            .map(|(r, p)| PredictionRow { id: r.id.clone(), probs: p })
            .collect(),
    }
}

impl Backend for BaselineBackend {
    fn name(&self) -> &str {
        "baseline"
    }

    fn supports(&self, model: ModelType) -> bool {
        model == ModelType::BaselineLinear
    }

    fn fit(&self, train_set: &[LabeledText], eval: &[ReportText], cfg: &TrialConfig) -> Result<FitOutput> {
        let k = cfg.task.num_classes();
        let ckpt = fit_checkpoint(train_set, k, cfg, &self.opts)?;
        let texts: Vec<&str> = eval.iter().map(|r| r.text.as_str()).collect();
        let eval_predictions = prediction_set(k, eval, ckpt.predict(&texts));
        let checkpoint_ref = self.save(cfg, ckpt)?;
        Ok(FitOutput {
            checkpoint_ref,
            eval_predictions,
        })
    }

    fn predict(&self, checkpoint_ref: &str, reports: &[ReportText], cfg: &TrialConfig) -> Result<PredictionSet> {
        let ckpt = self.load(checkpoint_ref)?;
        if ckpt.num_classes != cfg.task.num_classes() {
            return Err(Error::BackendUnavailable(format!(
                "checkpoint {checkpoint_ref} has {} classes, task needs {}",
                ckpt.num_classes,
                cfg.task.num_classes()
            )));
        }
        let texts: Vec<&str> = reports.iter().map(|r| r.text.as_str()).collect();
        Ok(prediction_set(ckpt.num_classes, reports, ckpt.predict(&texts)))
    }
}
