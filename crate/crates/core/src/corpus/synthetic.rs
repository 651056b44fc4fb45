//! Deterministic synthetic pathology reports.
//!
//! Each report is laid out the way real upper-endoscopy pathology reports
//! usually are: an identifying header, clinical history, specimen list, gross
//! and microscopic description, a diagnosis section under one of the default
//! diagnosis headings, an optional comment, the pathologist signature and
//! trailing laboratory boilerplate. Only the diagnosis section carries the
//! class-specific phrases.
//!
//! Benign reports may also carry a *negated* mention of a dysplastic finding
//! ("Negative for high-grade dysplasia.") so that the word "dysplasia" alone
//! does not separate the classes.

use chrono::{Duration, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, PathologyReport, Provenance};
use crate::error::{Error, Result};
use crate::labels::{BinaryLabel, DiagnosisLabel};

/// Line that opens the signature block in every synthetic report.
pub const SIGNATURE_MARKER: &str = "ELECTRONICALLY SIGNED BY";

/// Report counts per class of the development set, canonical order.
pub const DEVELOPMENT_COUNTS: [usize; 6] = [11, 30, 18, 15, 88, 139];
/// Report counts per class of the validation set, canonical order.
pub const VALIDATION_COUNTS: [usize; 6] = [22, 26, 8, 22, 99, 141];

/// Probability vector over the six classes in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassMix(pub Vec<f64>);

impl ClassMix {
    pub fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        ClassMix(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn development() -> Self {
        Self::from_counts(&DEVELOPMENT_COUNTS)
    }

    pub fn validation() -> Self {
        Self::from_counts(&VALIDATION_COUNTS)
    }

    pub fn one_hot(label: DiagnosisLabel) -> Self {
        let mut v = vec![0.0; DiagnosisLabel::COUNT];
        v[label.index()] = 1.0;
        ClassMix(v)
    }

    fn validate(&self) -> Result<()> {
        if self.0.len() != DiagnosisLabel::COUNT {
            return Err(Error::InvalidSpec(format!(
                "class_mix needs {} entries, got {}",
                DiagnosisLabel::COUNT,
                self.0.len()
            )));
        }
        if self.0.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidSpec(
                "class_mix entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!(
                "class_mix sums to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> DiagnosisLabel {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_nonzero = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > 0.0 {
                last_nonzero = i;
            }
            acc += p;
            if u < acc && *p > 0.0 {
                return DiagnosisLabel::ALL[i];
            }
        }
        // u landed in the rounding gap above the cumulative sum
        DiagnosisLabel::ALL[last_nonzero]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ReportsPerPatient {
    Fixed { count: u32 },
    /// Geometric on {1, 2, ...} with success probability `p`, renormalized
    /// over {1..=max}.
    TruncatedGeometric { p: f64, max: u32 },
}

impl Default for ReportsPerPatient {
    /// p = 0.3 truncated at 8 gives quartiles 1 / 2 / 4.
    fn default() -> Self {
        ReportsPerPatient::TruncatedGeometric { p: 0.3, max: 8 }
    }
}

impl ReportsPerPatient {
    /// Probability of each count 1..=max.
    pub fn pmf(&self) -> Vec<f64> {
        match *self {
            ReportsPerPatient::Fixed { count } => {
                let mut v = vec![0.0; count as usize];
                if let Some(last) = v.last_mut() {
                    *last = 1.0;
                }
                v
            }
            ReportsPerPatient::TruncatedGeometric { p, max } => {
                let raw: Vec<f64> = (0..max).map(|k| p * (1.0 - p).powi(k as i32)).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / total).collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ReportsPerPatient::Fixed { count: 0 } => Err(Error::InvalidSpec(
                "fixed reports_per_patient must be at least 1".into(),
            )),
            ReportsPerPatient::TruncatedGeometric { p, max }
                if !(p > 0.0 && p <= 1.0) || max == 0 =>
            {
                Err(Error::InvalidSpec(format!(
                    "truncated geometric needs p in (0, 1] and max >= 1, got p={p} max={max}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        match *self {
            ReportsPerPatient::Fixed { count } => count,
            ReportsPerPatient::TruncatedGeometric { .. } => {
                let pmf = self.pmf();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in pmf.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i as u32 + 1;
                    }
                }
                pmf.len() as u32
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n_patients: usize,
    pub class_mix: ClassMix,
    pub reports_per_patient: ReportsPerPatient,
    pub negation_distractor_rate: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    /// 214 patients with the development class mix.
    fn default() -> Self {
        GeneratorSpec::new(214, 0)
    }
}

impl GeneratorSpec {
    pub fn new(n_patients: usize, seed: u64) -> Self {
        GeneratorSpec {
            n_patients,
            class_mix: ClassMix::development(),
            reports_per_patient: ReportsPerPatient::default(),
            negation_distractor_rate: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::InvalidSpec("n_patients must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.negation_distractor_rate) {
            return Err(Error::InvalidSpec(format!(
                "negation_distractor_rate {} outside [0, 1]",
                self.negation_distractor_rate
            )));
        }
        self.class_mix.validate()?;
        self.reports_per_patient.validate()
    }
}

/// Affirmative phrases that identify each class in a diagnosis section.
pub fn phrase_bank(label: DiagnosisLabel) -> &'static [&'static str] {
    match label {
        DiagnosisLabel::Eac => &["invasive adenocarcinoma"],
        DiagnosisLabel::BeHgd => &["high-grade dysplasia"],
        DiagnosisLabel::BeLgd => &["low-grade dysplasia"],
        DiagnosisLabel::BeIndefinite => &["indefinite for dysplasia"],
        DiagnosisLabel::BeNoDysplasia => &["intestinal metaplasia", "negative for dysplasia"],
        DiagnosisLabel::NoBe => &["squamous mucosa", "no intestinal metaplasia"],
    }
}

const NEGATION_CUES: &[&str] = &["no ", "not ", "without ", "negative for ", "no evidence of "];

/// Labels whose phrase bank occurs affirmatively in `text`. An occurrence
/// directly preceded by a negation cue does not count.
pub fn affirmative_labels(text: &str) -> Vec<DiagnosisLabel> {
    let lower = text.to_lowercase();
    DiagnosisLabel::ALL
        .into_iter()
        .filter(|&label| {
            phrase_bank(label).iter().any(|phrase| {
                lower.match_indices(phrase).any(|(at, _)| {
                    let before = &lower[..at];
                    !NEGATION_CUES.iter().any(|cue| before.ends_with(cue))
                })
            })
        })
        .collect()
}

fn diagnosis_sentences(label: DiagnosisLabel) -> &'static [&'static str] {
    match label {
        DiagnosisLabel::Eac => &[
            "Invasive adenocarcinoma, moderately differentiated, arising in Barrett's esophagus.",
            "Invasive adenocarcinoma, poorly differentiated.",
            "Fragments of invasive adenocarcinoma with adjacent Barrett's mucosa.",
        ],
        DiagnosisLabel::BeHgd => &[
            "Barrett's esophagus with high-grade dysplasia.",
            "Columnar mucosa with high-grade dysplasia, consistent with Barrett's esophagus.",
            "High-grade dysplasia arising in Barrett's esophagus.",
        ],
        DiagnosisLabel::BeLgd => &[
            "Barrett's esophagus with low-grade dysplasia.",
            "Columnar mucosa with focal low-grade dysplasia.",
            "Low-grade dysplasia in a background of Barrett's esophagus.",
        ],
        DiagnosisLabel::BeIndefinite => &[
            "Barrett's esophagus, indefinite for dysplasia.",
            "Columnar mucosa with reactive atypia, indefinite for dysplasia.",
        ],
        DiagnosisLabel::BeNoDysplasia => &[
            "Barrett's esophagus: columnar mucosa with intestinal metaplasia, negative for dysplasia.",
            "Intestinal metaplasia consistent with Barrett's esophagus, negative for dysplasia.",
            "Columnar epithelium with goblet cells (intestinal metaplasia), negative for dysplasia.",
        ],
        DiagnosisLabel::NoBe => &[
            "Squamous mucosa with no intestinal metaplasia.",
            "Benign squamous mucosa and cardiac-type mucosa, no intestinal metaplasia identified.",
            "Squamous mucosa with mild reflux changes.",
        ],
    }
}

const DISTRACTORS: &[&str] = &[
    "Negative for high-grade dysplasia.",
    "No low-grade dysplasia is identified.",
    "Negative for low-grade dysplasia.",
    "No evidence of high-grade dysplasia.",
];

const FIRST_NAMES: &[&str] = &[
    "JOHN", "MARIA", "ROBERT", "LINDA", "JAMES", "PATRICIA", "DAVID", "ELENA", "MICHAEL",
    "SUSAN", "WILLIAM", "KAREN", "RICHARD", "NANCY", "THOMAS", "HELEN",
];
const LAST_NAMES: &[&str] = &[
    "SMITH", "JOHNSON", "WILLIAMS", "BROWN", "GARCIA", "MILLER", "DAVIS", "RODRIGUEZ",
    "MARTINEZ", "ANDERSON", "TAYLOR", "THOMPSON", "MOORE", "JACKSON", "WHITE", "HARRIS",
];
const PATHOLOGISTS: &[&str] = &[
    "Dr. A. Whitfield",
    "Dr. K. Osei",
    "Dr. R. Lindqvist",
    "Dr. M. Castellano",
    "Dr. S. Nakamura",
];
const HISTORIES: &[&str] = &[
    "Barrett's esophagus, surveillance endoscopy.",
    "GERD. Rule out Barrett's esophagus.",
    "History of Barrett's esophagus. Surveillance biopsies.",
    "Dysphagia and chronic reflux symptoms.",
    "Follow-up of previously treated Barrett's esophagus after ablation.",
    "Salmon-colored mucosa seen at the gastroesophageal junction.",
];
const SITES: &[&str] = &[
    "Esophagus, distal",
    "Esophagus, 35 cm",
    "Gastroesophageal junction",
    "Esophagus, 38-40 cm",
];
const MICROSCOPIC: &[&str] = &[
    "Sections show fragments of esophageal mucosa with mild chronic inflammation.",
    "Multiple levels were examined.",
    "Special stains were reviewed with appropriate controls.",
    "An Alcian blue / PAS stain was performed.",
    "The biopsy fragments are well oriented.",
];
const COMMENTS: &[&str] = &[
    "Clinical correlation is recommended.",
    "Findings were discussed with the endoscopist.",
    "The case was reviewed at the departmental consensus conference.",
];
const BOILERPLATE: &[&str] = &[
    "This test was performed in a laboratory certified to perform high complexity testing.",
    "Results should be interpreted in the context of the clinical presentation and endoscopic findings.",
    "Slides and blocks are retained according to institutional retention policy and are available on request.",
    "Gross examination and processing were performed at the main campus histology laboratory.",
    "Immunohistochemical stains, when performed, were developed and validated by this laboratory.",
];

/// Dates fall inside the 2016-2020 surveillance window.
fn random_date<R: Rng>(rng: &mut R) -> NaiveDate {
    let start = NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date");
    let end = NaiveDate::from_ymd_opt(2020, 12, 31).expect("valid date");
    let span = (end - start).num_days();
    start + Duration::days(rng.random_range(0..=span))
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty list")
}

struct Patient {
    first: &'static str,
    last: &'static str,
    mrn: u32,
    age: u32,
    sex: &'static str,
}

fn render_report<R: Rng>(
    rng: &mut R,
    patient: &Patient,
    date: NaiveDate,
    label: DiagnosisLabel,
    distractor_rate: f64,
) -> String {
    let mut lines: Vec<String> = Vec::new();
    // extraction artifacts that cleaning is expected to strip
    let rule = ["==========", "----------", "**********"];
    let heading_tail = |rng: &mut R| if rng.random_bool(0.2) { ":::" } else { ":" };

    lines.push("SURGICAL PATHOLOGY REPORT".into());
    if rng.random_bool(0.5) {
        lines.push(pick(rng, &rule).to_string());
    }
    lines.push(format!("Patient Name: {}, {}", patient.last, patient.first));
    lines.push(format!("MRN:\t{:08}", patient.mrn));
    lines.push(format!("Collected: {}", date.format("%Y-%m-%d")));
    lines.push(format!(
        "Accession #: S{}-{:05}",
        date.format("%y"),
        rng.random_range(1..100_000)
    ));
    lines.push(String::new());

    lines.push(format!("CLINICAL HISTORY{}", heading_tail(rng)));
    lines.push(format!(
        "{}-year-old {}.  {}",
        patient.age,
        patient.sex,
        pick(rng, HISTORIES)
    ));
    lines.push(String::new());

    let site = pick(rng, SITES);
    let gastric = rng.random_bool(0.3);
    lines.push("SPECIMENS SUBMITTED:".into());
    lines.push(format!("A. {site}, biopsy"));
    if gastric {
        lines.push("B. Stomach, antrum, biopsy".into());
    }
    lines.push(String::new());

    lines.push(format!("GROSS DESCRIPTION{}", heading_tail(rng)));
    let fragments = rng.random_range(2..9);
    lines.push(format!(
        "Received in formalin labeled with the patient's name and \"{}\" are {} tan-pink soft tissue fragments measuring {:.1} x {:.1} x {:.1} cm. Entirely submitted in cassette A1.",
        site.to_lowercase(),
        fragments,
        rng.random_range(0.2..0.9f64),
        rng.random_range(0.1..0.5f64),
        rng.random_range(0.1..0.3f64),
    ));
    let micro_count = rng.random_range(0..=MICROSCOPIC.len());
    if micro_count > 0 {
        lines.push(String::new());
        lines.push("MICROSCOPIC DESCRIPTION:".into());
        for s in MICROSCOPIC.choose_multiple(rng, micro_count) {
            lines.push((*s).to_string());
        }
    }
    lines.push(String::new());

    let heading = pick(rng, &["FINAL DIAGNOSIS", "DIAGNOSIS", "PATHOLOGIC DIAGNOSIS"]);
    lines.push(format!("{heading}{}", heading_tail(rng)));
    lines.push(format!("A. {site}, biopsy:"));
    lines.push(format!("- {}", pick(rng, diagnosis_sentences(label))));
    if label.to_binary() == BinaryLabel::NoDysplasia && rng.random_bool(distractor_rate) {
        lines.push(format!("- {}", pick(rng, DISTRACTORS)));
    }
    if gastric {
        lines.push("B. Stomach, antrum, biopsy:".into());
        lines.push("- Antral-type gastric mucosa with mild chronic inflammation.".into());
    }
    lines.push(String::new());

    if rng.random_bool(0.4) {
        lines.push("COMMENT:".into());
        lines.push(pick(rng, COMMENTS).to_string());
        lines.push(String::new());
    }

    lines.push(format!(
        "{SIGNATURE_MARKER}: {}, MD   ",
        pick(rng, PATHOLOGISTS)
    ));
    let signed = date + Duration::days(rng.random_range(1..6));
    lines.push(format!("Signed out {}", signed.format("%Y-%m-%d")));
    let extra = rng.random_range(0..=BOILERPLATE.len());
    if extra > 0 {
        lines.push(String::new());
        for s in BOILERPLATE.choose_multiple(rng, extra) {
            lines.push((*s).to_string());
        }
    }
    let mut text = lines.join("\r\n");
    text.push('\n');
    text
}

/// Generates a labeled corpus from `spec`. Equal specs give identical corpora.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut reports = Vec::new();
    for p in 0..spec.n_patients {
        let patient_id = format!("P{:05}", p + 1);
        let patient = Patient {
            first: pick(&mut rng, FIRST_NAMES),
            last: pick(&mut rng, LAST_NAMES),
            mrn: rng.random_range(10_000_000..100_000_000),
            age: rng.random_range(45..90),
            sex: if rng.random_bool(0.75) { "male" } else { "female" },
        };
        let n = spec.reports_per_patient.sample(&mut rng);
        let mut dates: Vec<NaiveDate> = (0..n).map(|_| random_date(&mut rng)).collect();
        dates.sort();
        for (j, date) in dates.into_iter().enumerate() {
            let label = spec.class_mix.sample(&mut rng);
            let full_text = render_report(
                &mut rng,
                &patient,
                date,
                label,
                spec.negation_distractor_rate,
            );
            reports.push(PathologyReport {
                report_id: format!("{patient_id}-R{:02}", j + 1),
                patient_id: patient_id.clone(),
                collected_date: date,
                full_text,
                sub_section_text: None,
                gold_label: Some(label),
            });
        }
    }
    Ok(Corpus::new(reports, Provenance::Synthetic))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_reports_per_patient_quartiles() {
        let pmf = ReportsPerPatient::default().pmf();
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        let quantile = |q: f64| cdf.iter().position(|&c| c >= q).unwrap() + 1;
        assert_eq!(quantile(0.25), 1);
        assert_eq!(quantile(0.5), 2);
        assert_eq!(quantile(0.75), 4);
        assert_eq!(pmf.len(), 8);
    }

    #[test]
    fn malformed_class_mix_rejected() {
        let mut spec = GeneratorSpec::new(3, 1);
        spec.class_mix = ClassMix(vec![0.5, 0.5]);
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
        spec.class_mix = ClassMix(vec![0.5, 0.6, -0.1, 0.0, 0.0, 0.0]);
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
        spec.class_mix = ClassMix(vec![0.2; 6]);
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn one_hot_single_report() {
        let spec = GeneratorSpec {
            n_patients: 1,
            class_mix: ClassMix::one_hot(DiagnosisLabel::Eac),
            reports_per_patient: ReportsPerPatient::Fixed { count: 1 },
            negation_distractor_rate: 0.3,
            seed: 11,
        };
        let c = generate_synthetic(&spec).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.reports[0].gold_label, Some(DiagnosisLabel::Eac));
        assert!(c.reports[0]
            .full_text
            .to_lowercase()
            .contains("invasive adenocarcinoma"));
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = GeneratorSpec::new(20, 99);
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_synthetic(&spec).unwrap().write_jsonl(&mut a).unwrap();
        generate_synthetic(&spec).unwrap().write_jsonl(&mut b).unwrap();
        assert_eq!(a, b);
        let mut other = Vec::new();
        generate_synthetic(&GeneratorSpec::new(20, 100))
            .unwrap()
            .write_jsonl(&mut other)
            .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn negated_mentions_are_not_affirmative() {
        assert_eq!(
            affirmative_labels("Squamous mucosa with no intestinal metaplasia."),
            vec![DiagnosisLabel::NoBe]
        );
        assert_eq!(
            affirmative_labels("Barrett's esophagus, indefinite for dysplasia. Negative for high-grade dysplasia."),
            vec![DiagnosisLabel::BeIndefinite]
        );
        assert_eq!(
            affirmative_labels("Barrett's esophagus with high-grade dysplasia."),
            vec![DiagnosisLabel::BeHgd]
        );
    }

    #[test]
    fn every_sentence_matches_only_its_own_bank() {
        for label in DiagnosisLabel::ALL {
            for s in diagnosis_sentences(label) {
                assert_eq!(affirmative_labels(s), vec![label], "{s}");
            }
        }
        for d in DISTRACTORS {
            assert!(affirmative_labels(d).is_empty(), "{d}");
        }
    }
}
