//! Patient-level development/validation split and report-level
//! train/evaluation split of the development set.
//!
//! Both splits sort their ids, shuffle them with a ChaCha stream seeded from
//! the caller's seed and take a prefix, so the result depends only on the id
//! set, the fraction and the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::labels::DiagnosisLabel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub seed: u64,
    pub dev_patient_ids: BTreeSet<String>,
    pub val_patient_ids: BTreeSet<String>,
    pub train_report_ids: BTreeSet<String>,
    pub eval_report_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitOptions {
    pub val_fraction: f64,
    pub eval_fraction: f64,
    pub seed: u64,
    /// Stratify by class: patients by their most severe label, reports by
    /// their own label.
    pub stratify: bool,
}

impl Default for SplitOptions {
    /// 115 of 214 patients held out; 61 of 301 development reports used for
    /// evaluation.
    fn default() -> Self {
        SplitOptions {
            val_fraction: 115.0 / 214.0,
            eval_fraction: 61.0 / 301.0,
            seed: 0,
            stratify: false,
        }
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidFraction(f))
    }
}

fn take_count(fraction: f64, n: usize) -> Result<usize> {
    let k = (fraction * n as f64).round() as usize;
    if k == 0 || k >= n {
        return Err(Error::EmptyPartition { fraction, n });
    }
    Ok(k)
}

/// Picks `k` of `ids` (sorted first) by seeded shuffle-and-prefix.
fn shuffled_prefix(mut ids: Vec<String>, k: usize, seed: u64) -> BTreeSet<String> {
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.truncate(k);
    ids.into_iter().collect()
}

/// Stratified variant: per-stratum shuffles, with the total `k` distributed
/// across strata by largest remainder.
fn stratified_prefix(
    strata: BTreeMap<usize, Vec<String>>,
    n: usize,
    k: usize,
    seed: u64,
) -> BTreeSet<String> {
    let exact: Vec<(usize, f64)> = strata
        .iter()
        .map(|(s, ids)| (*s, ids.len() as f64 * k as f64 / n as f64))
        .collect();
    let mut alloc: BTreeMap<usize, usize> =
        exact.iter().map(|(s, x)| (*s, x.floor() as usize)).collect();
    let mut left = k - alloc.values().sum::<usize>();
    let mut order: Vec<(usize, f64)> = exact.iter().map(|(s, x)| (*s, x - x.floor())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (s, _) in order {
        if left == 0 {
            break;
        }
        *alloc.get_mut(&s).expect("stratum exists") += 1;
        left -= 1;
    }
    let mut picked = BTreeSet::new();
    for (s, ids) in strata {
        let stratum_seed = seed ^ (s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        picked.extend(shuffled_prefix(ids, alloc[&s], stratum_seed));
    }
    picked
}

fn stratum(label: Option<DiagnosisLabel>) -> usize {
    label.map_or(DiagnosisLabel::COUNT, DiagnosisLabel::index)
}

/// Splits patients into (development, validation). Every report of a
/// patient lands on the same side.
pub fn split_patients(
    corpus: &Corpus,
    val_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    check_fraction(val_fraction)?;
    let patients = corpus.patients();
    let n = patients.len();
    if n < 2 {
        return Err(Error::TooFewPatients(n));
    }
    let k = take_count(val_fraction, n)?;
    let ids: Vec<String> = patients.keys().map(|p| p.to_string()).collect();
    let val = if stratify {
        let mut strata: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (pid, idx) in &patients {
            let worst = idx
                .iter()
                .map(|&i| stratum(corpus.reports[i].gold_label))
                .min()
                .unwrap_or(DiagnosisLabel::COUNT);
            strata.entry(worst).or_default().push(pid.to_string());
        }
        stratified_prefix(strata, n, k, seed)
    } else {
        shuffled_prefix(ids.clone(), k, seed)
    };
    let dev = ids.into_iter().filter(|p| !val.contains(p)).collect();
    Ok((dev, val))
}

/// Splits the reports of `dev` into (train, eval) at the report level; a
/// patient's reports may straddle the two.
pub fn split_reports(
    dev: &Corpus,
    eval_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    check_fraction(eval_fraction)?;
    let n = dev.len();
    if n < 2 {
        return Err(Error::TooFewReports(n));
    }
    let k = take_count(eval_fraction, n)?;
    let ids: Vec<String> = dev.reports.iter().map(|r| r.report_id.clone()).collect();
    let eval = if stratify {
        let mut strata: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for r in &dev.reports {
            strata
                .entry(stratum(r.gold_label))
                .or_default()
                .push(r.report_id.clone());
        }
        stratified_prefix(strata, n, k, seed)
    } else {
        shuffled_prefix(ids.clone(), k, seed)
    };
    let train = ids.into_iter().filter(|r| !eval.contains(r)).collect();
    Ok((train, eval))
}

impl CorpusSplit {
    /// Patient split, then report split of the development reports. The
    /// report split uses a seed derived from `opts.seed` so the two shuffles
    /// draw from different streams.
    pub fn build(corpus: &Corpus, opts: &SplitOptions) -> Result<Self> {
        let (dev_patient_ids, val_patient_ids) =
            split_patients(corpus, opts.val_fraction, opts.seed, opts.stratify)?;
        let dev = corpus.filter(|r| dev_patient_ids.contains(&r.patient_id));
        let (train_report_ids, eval_report_ids) = split_reports(
            &dev,
            opts.eval_fraction,
            opts.seed.wrapping_add(1),
            opts.stratify,
        )?;
        Ok(CorpusSplit {
            seed: opts.seed,
            dev_patient_ids,
            val_patient_ids,
            train_report_ids,
            eval_report_ids,
        })
    }

    /// Checks every structural invariant of the split against `corpus`.
    /// Returns a list of problems; empty means the split is sound.
    pub fn check(&self, corpus: &Corpus) -> Vec<String> {
        let mut problems = Vec::new();
        for p in self.dev_patient_ids.intersection(&self.val_patient_ids) {
            problems.push(format!("patient {p} is on both sides of the split"));
        }
        for p in corpus.patients().keys() {
            if !self.dev_patient_ids.contains(*p) && !self.val_patient_ids.contains(*p) {
                problems.push(format!("patient {p} is not assigned"));
            }
        }
        for r in self.train_report_ids.intersection(&self.eval_report_ids) {
            problems.push(format!("report {r} is in both train and eval"));
        }
        for r in &corpus.reports {
            let in_dev_sets =
                self.train_report_ids.contains(&r.report_id) || self.eval_report_ids.contains(&r.report_id);
            let dev_patient = self.dev_patient_ids.contains(&r.patient_id);
            if in_dev_sets && !dev_patient {
                problems.push(format!(
                    "report {} belongs to validation patient {}",
                    r.report_id, r.patient_id
                ));
            }
            if dev_patient && !in_dev_sets {
                problems.push(format!("development report {} is not assigned", r.report_id));
            }
        }
        problems
    }

    pub fn validation_reports(&self, corpus: &Corpus) -> Corpus {
        corpus.filter(|r| self.val_patient_ids.contains(&r.patient_id))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
