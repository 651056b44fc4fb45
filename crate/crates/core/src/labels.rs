//! Diagnosis taxonomy and the binary dysplasia collapse.
//!
//! The six classes are ordered from most to least severe. That order is the
//! axis order of every confusion matrix in the crate, and it makes the binary
//! mapping a simple threshold on the class index.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisLabel {
    /// Esophageal adenocarcinoma.
    Eac,
    /// Barrett's esophagus with high-grade dysplasia.
    BeHgd,
    /// Barrett's esophagus with low-grade dysplasia.
    BeLgd,
    BeIndefinite,
    BeNoDysplasia,
    /// No histological evidence of Barrett's esophagus.
    NoBe,
}

impl DiagnosisLabel {
    pub const COUNT: usize = 6;

    pub const ALL: [DiagnosisLabel; 6] = [
        DiagnosisLabel::Eac,
        DiagnosisLabel::BeHgd,
        DiagnosisLabel::BeLgd,
        DiagnosisLabel::BeIndefinite,
        DiagnosisLabel::BeNoDysplasia,
        DiagnosisLabel::NoBe,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn key(self) -> &'static str {
        match self {
            DiagnosisLabel::Eac => "eac",
            DiagnosisLabel::BeHgd => "be_hgd",
            DiagnosisLabel::BeLgd => "be_lgd",
            DiagnosisLabel::BeIndefinite => "be_indefinite",
            DiagnosisLabel::BeNoDysplasia => "be_no_dysplasia",
            DiagnosisLabel::NoBe => "no_be",
        }
    }

    /// Human-readable row name as used in class-distribution tables.
    pub fn display_name(self) -> &'static str {
        match self {
            DiagnosisLabel::Eac => "EAC",
            DiagnosisLabel::BeHgd => "BE with HGD",
            DiagnosisLabel::BeLgd => "BE with LGD",
            DiagnosisLabel::BeIndefinite => "BE indefinite for dysplasia",
            DiagnosisLabel::BeNoDysplasia => "BE with no dysplasia",
            DiagnosisLabel::NoBe => "No histological evidence of BE",
        }
    }

    pub fn to_binary(self) -> BinaryLabel {
        to_binary(self)
    }
}

impl fmt::Display for DiagnosisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for DiagnosisLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.key() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    NoDysplasia = 0,
    /// Positive class.
    DysplasiaOrWorse = 1,
}

impl BinaryLabel {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// EAC, HGD and LGD are "dysplasia or worse"; everything else is negative.
pub fn to_binary(label: DiagnosisLabel) -> BinaryLabel {
    match label {
        DiagnosisLabel::Eac | DiagnosisLabel::BeHgd | DiagnosisLabel::BeLgd => {
            BinaryLabel::DysplasiaOrWorse
        }
        DiagnosisLabel::BeIndefinite | DiagnosisLabel::BeNoDysplasia | DiagnosisLabel::NoBe => {
            BinaryLabel::NoDysplasia
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCount {
    pub label: DiagnosisLabel,
    pub count: usize,
    /// Unrounded; tables format it with one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDistribution {
    pub total: usize,
    pub rows: Vec<ClassCount>,
}

impl ClassDistribution {
    pub fn count(&self, label: DiagnosisLabel) -> usize {
        self.rows[label.index()].count
    }

    pub fn percent(&self, label: DiagnosisLabel) -> f64 {
        self.rows[label.index()].percent
    }

    /// Reports in the positive binary class.
    pub fn positives(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.label.to_binary() == BinaryLabel::DysplasiaOrWorse)
            .map(|r| r.count)
            .sum()
    }

    /// Writes `label,count,percent` rows in canonical class order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "count", "percent"])?;
        for row in &self.rows {
            w.write_record([
                row.label.key().to_string(),
                row.count.to_string(),
                format!("{:.1}", row.percent),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn class_distribution(corpus: &Corpus) -> Result<ClassDistribution> {
    let mut counts = [0usize; DiagnosisLabel::COUNT];
    for report in &corpus.reports {
        let label = report
            .gold_label
            .ok_or_else(|| Error::UnlabeledReport(report.report_id.clone()))?;
        counts[label.index()] += 1;
    }
    Ok(distribution_from_counts(counts))
}

pub fn distribution_from_counts(counts: [usize; DiagnosisLabel::COUNT]) -> ClassDistribution {
    let total: usize = counts.iter().sum();
    let rows = DiagnosisLabel::ALL
        .iter()
        .map(|&label| {
            let count = counts[label.index()];
            let percent = if total == 0 {
                0.0
            } else {
                100.0 * count as f64 / total as f64
            };
            ClassCount {
                label,
                count,
                percent,
            }
        })
        .collect();
    ClassDistribution { total, rows }
}

pub fn binarize_corpus(corpus: &Corpus) -> Result<Vec<(String, BinaryLabel)>> {
    corpus
        .reports
        .iter()
        .map(|r| {
            r.gold_label
                .map(|l| (r.report_id.clone(), to_binary(l)))
                .ok_or_else(|| Error::UnlabeledReport(r.report_id.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PathologyReport, Provenance};

    fn labeled(id: &str, label: Option<DiagnosisLabel>) -> PathologyReport {
        PathologyReport {
            report_id: id.into(),
            patient_id: "p".into(),
            collected_date: chrono::NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            full_text: "x".into(),
            sub_section_text: None,
            gold_label: label,
        }
    }

    fn corpus_from_counts(counts: [usize; 6]) -> Corpus {
        let mut reports = Vec::new();
        for (label, &n) in DiagnosisLabel::ALL.iter().zip(counts.iter()) {
            for i in 0..n {
                reports.push(labeled(&format!("{}-{i}", label.key()), Some(*label)));
            }
        }
        Corpus::new(reports, Provenance::Ingested)
    }

    #[test]
    fn binary_mapping_matches_severity_threshold() {
        assert_eq!(to_binary(DiagnosisLabel::Eac), BinaryLabel::DysplasiaOrWorse);
        assert_eq!(
            to_binary(DiagnosisLabel::BeIndefinite),
            BinaryLabel::NoDysplasia
        );
        let ones = DiagnosisLabel::ALL
            .iter()
            .filter(|l| to_binary(**l) == BinaryLabel::DysplasiaOrWorse)
            .count();
        assert_eq!(ones, 3);
        for l in DiagnosisLabel::ALL {
            assert_eq!(to_binary(l).index() == 1, l.index() <= 2);
        }
    }

    #[test]
    fn keys_round_trip() {
        for l in DiagnosisLabel::ALL {
            assert_eq!(l.key().parse::<DiagnosisLabel>().unwrap(), l);
            assert_eq!(
                serde_json::to_string(&l).unwrap(),
                format!("\"{}\"", l.key())
            );
            assert_eq!(DiagnosisLabel::from_index(l.index()), Some(l));
        }
        assert!("hgd".parse::<DiagnosisLabel>().is_err());
    }

    #[test]
    fn development_distribution() {
        let dist = class_distribution(&corpus_from_counts([11, 30, 18, 15, 88, 139])).unwrap();
        assert_eq!(dist.total, 301);
        assert_eq!(format!("{:.1}", dist.percent(DiagnosisLabel::Eac)), "3.7");
        assert_eq!(dist.positives(), 59);
        let sum: f64 = dist.rows.iter().map(|r| r.percent).sum();
        assert!((sum - 100.0).abs() < 0.1);
    }

    #[test]
    fn single_report_distribution() {
        let c = Corpus::new(
            vec![labeled("r1", Some(DiagnosisLabel::NoBe))],
            Provenance::Ingested,
        );
        let dist = class_distribution(&c).unwrap();
        assert_eq!(dist.count(DiagnosisLabel::NoBe), 1);
        assert_eq!(dist.percent(DiagnosisLabel::NoBe), 100.0);
    }

    #[test]
    fn unlabeled_report_is_an_error() {
        let c = Corpus::new(vec![labeled("r9", None)], Provenance::Ingested);
        assert!(matches!(
            class_distribution(&c),
            Err(Error::UnlabeledReport(id)) if id == "r9"
        ));
        assert!(binarize_corpus(&c).is_err());
    }

    #[test]
    fn binarize_preserves_order() {
        let c = corpus_from_counts([22, 26, 8, 22, 99, 141]);
        let bin = binarize_corpus(&c).unwrap();
        assert_eq!(bin.len(), 318);
        let pos = bin
            .iter()
            .filter(|(_, b)| *b == BinaryLabel::DysplasiaOrWorse)
            .count();
        assert_eq!(pos, 56);
        assert_eq!(bin[0].0, c.reports[0].report_id);

        let empty = Corpus::new(vec![], Provenance::Ingested);
        assert!(binarize_corpus(&empty).unwrap().is_empty());

        let one = Corpus::new(
            vec![labeled("only", Some(DiagnosisLabel::Eac))],
            Provenance::Ingested,
        );
        assert_eq!(
            binarize_corpus(&one).unwrap(),
            vec![("only".to_string(), BinaryLabel::DysplasiaOrWorse)]
        );
    }

    #[test]
    fn csv_has_one_decimal_percent() {
        let dist = distribution_from_counts([11, 30, 18, 15, 88, 139]);
        let mut buf = Vec::new();
        dist.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("label,count,percent"));
        assert_eq!(lines.next(), Some("eac,11,3.7"));
        assert!(text.contains("be_hgd,30,10.0"));
    }
}
