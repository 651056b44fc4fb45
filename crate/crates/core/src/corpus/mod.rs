//! Report data model, JSONL corpus files and corpus validation.

mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::DiagnosisLabel;

pub use synthetic::{
    affirmative_labels, generate_synthetic, phrase_bank, ClassMix, GeneratorSpec,
    ReportsPerPatient, DEVELOPMENT_COUNTS, SIGNATURE_MARKER, VALIDATION_COUNTS,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathologyReport {
    pub report_id: String,
    pub patient_id: String,
    pub collected_date: NaiveDate,
    pub full_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_section_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<DiagnosisLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Ingested,
    Synthetic,
}

/// Which text of a report a downstream step reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportField {
    Full,
    Subsection,
}

impl ReportField {
    pub fn text_of<'a>(&self, report: &'a PathologyReport) -> Option<&'a str> {
        match self {
            ReportField::Full => Some(report.full_text.as_str()),
            ReportField::Subsection => report.sub_section_text.as_deref(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ReportField::Full => "full",
            ReportField::Subsection => "subsection",
        }
    }
}

impl std::str::FromStr for ReportField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ReportField::Full),
            "subsection" | "sub-section" | "sub_section" => Ok(ReportField::Subsection),
            _ => Err(Error::Config(format!("unknown report field {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub reports: Vec<PathologyReport>,
    pub provenance: Provenance,
}

/// On-disk line shape. `provenance` is only written for synthetic corpora so
/// ingested files stay in the plain six-field layout.
#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(flatten)]
    report: PathologyReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl Corpus {
    pub fn new(reports: Vec<PathologyReport>, provenance: Provenance) -> Self {
        Self {
            reports,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn get(&self, report_id: &str) -> Option<&PathologyReport> {
        self.reports.iter().find(|r| r.report_id == report_id)
    }

    /// Report indices grouped by patient, keyed in sorted patient order.
    pub fn patients(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.reports.iter().enumerate() {
            map.entry(r.patient_id.as_str()).or_default().push(i);
        }
        map
    }

    /// Reports whose id satisfies `keep`, in corpus order.
    pub fn filter<F>(&self, mut keep: F) -> Corpus
    where
        F: FnMut(&PathologyReport) -> bool,
    {
        Corpus {
            reports: self.reports.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: self.provenance,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let provenance = match self.provenance {
            Provenance::Synthetic => Some(Provenance::Synthetic),
            Provenance::Ingested => None,
        };
        for report in &self.reports {
            let record = Record {
                report: report.clone(),
                provenance,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Corpus> {
        let mut reports = Vec::new();
        let mut seen = HashSet::new();
        let mut all_synthetic = true;
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io("<corpus>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                    line: line_no,
                    detail: e.to_string(),
                })?;
            if !seen.insert(record.report.report_id.clone()) {
                return Err(Error::DuplicateReportId(record.report.report_id));
            }
            all_synthetic &= record.provenance == Some(Provenance::Synthetic);
            reports.push(record.report);
        }
        let provenance = if all_synthetic && !reports.is_empty() {
            Provenance::Synthetic
        } else {
            Provenance::Ingested
        };
        Ok(Corpus {
            reports,
            provenance,
        })
    }
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    match format {
        CorpusFormat::Jsonl => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            Corpus::read_jsonl(BufReader::new(file))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    EmptyFullText { report_id: String },
    EmptySubSection { report_id: String },
    EmptyPatientId { report_id: String },
    DuplicateReportId { report_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Label validity is enforced by the type: a record with a label outside the
/// taxonomy never parses, so it surfaces as `MalformedRecord` at load time.
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for r in &corpus.reports {
        let report_id = r.report_id.clone();
        if !seen.insert(r.report_id.as_str()) {
            violations.push(Violation::DuplicateReportId {
                report_id: report_id.clone(),
            });
        }
        if r.full_text.trim().is_empty() {
            violations.push(Violation::EmptyFullText {
                report_id: report_id.clone(),
            });
        }
        if r.patient_id.trim().is_empty() {
            violations.push(Violation::EmptyPatientId {
                report_id: report_id.clone(),
            });
        }
        if matches!(&r.sub_section_text, Some(s) if s.trim().is_empty()) {
            violations.push(Violation::EmptySubSection { report_id });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(id: &str, patient: &str, text: &str) -> PathologyReport {
        PathologyReport {
            report_id: id.into(),
            patient_id: patient.into(),
            collected_date: NaiveDate::from_ymd_opt(2019, 3, 14).unwrap(),
            full_text: text.into(),
            sub_section_text: None,
            gold_label: Some(DiagnosisLabel::NoBe),
        }
    }

    #[test]
    fn reads_two_records() {
        let data = concat!(
            r#"{"report_id":"r1","patient_id":"p1","collected_date":"2019-01-02","full_text":"a","gold_label":"eac"}"#,
            "\n",
            r#"{"report_id":"r2","patient_id":"p1","collected_date":"2019-01-03","full_text":"b","extra":42}"#,
            "\n"
        );
        let c = Corpus::read_jsonl(data.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.reports[0].gold_label, Some(DiagnosisLabel::Eac));
        assert_eq!(c.reports[1].gold_label, None);
        assert_eq!(c.provenance, Provenance::Ingested);
    }

    #[test]
    fn duplicate_id_rejected() {
        let line = r#"{"report_id":"r1","patient_id":"p1","collected_date":"2019-01-02","full_text":"a"}"#;
        let data = format!("{line}\n{line}\n");
        match Corpus::read_jsonl(data.as_bytes()) {
            Err(Error::DuplicateReportId(id)) => assert_eq!(id, "r1"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let c = Corpus::read_jsonl(&b""[..]).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let data = concat!(
            r#"{"report_id":"r1","patient_id":"p1","collected_date":"2019-01-02","full_text":"a"}"#,
            "\n{not json\n"
        );
        assert!(matches!(
            Corpus::read_jsonl(data.as_bytes()),
            Err(Error::MalformedRecord { line: 2, .. })
        ));
        let bad_label = r#"{"report_id":"r1","patient_id":"p1","collected_date":"2019-01-02","full_text":"a","gold_label":"cancer"}"#;
        assert!(matches!(
            Corpus::read_jsonl(bad_label.as_bytes()),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_corpus("/nonexistent/corpus.jsonl", CorpusFormat::Jsonl),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn validation_flags_empty_text() {
        let good = Corpus::new(
            vec![
                report("a", "p1", "x"),
                report("b", "p1", "y"),
                report("c", "p2", "z"),
            ],
            Provenance::Ingested,
        );
        assert!(validate_corpus(&good).is_valid());

        let bad = Corpus::new(
            vec![report("a", "p1", "x"), report("b", "p1", "  ")],
            Provenance::Ingested,
        );
        assert_eq!(
            validate_corpus(&bad).violations,
            vec![Violation::EmptyFullText {
                report_id: "b".into()
            }]
        );
    }

    #[test]
    fn validation_flags_duplicates() {
        let c = Corpus::new(
            vec![report("a", "p1", "x"), report("a", "p2", "y")],
            Provenance::Ingested,
        );
        assert_eq!(
            validate_corpus(&c).violations,
            vec![Violation::DuplicateReportId {
                report_id: "a".into()
            }]
        );
    }

    #[test]
    fn synthetic_provenance_survives_round_trip() {
        let c = Corpus::new(vec![report("a", "p1", "x")], Provenance::Synthetic);
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        assert_eq!(Corpus::read_jsonl(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn patients_groups_reports() {
        let c = Corpus::new(
            vec![
                report("a", "p2", "x"),
                report("b", "p1", "y"),
                report("c", "p2", "z"),
            ],
            Provenance::Ingested,
        );
        let groups = c.patients();
        assert_eq!(groups.keys().copied().collect::<Vec<_>>(), vec!["p1", "p2"]);
        assert_eq!(groups["p2"], vec![0, 2]);
    }
}
