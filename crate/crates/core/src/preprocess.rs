//! Text cleaning and diagnosis sub-section extraction.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Section headings that open and close a diagnosis block. Patterns are
/// literal, case-insensitive, matched at the start of a line and may be
/// followed by a colon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadingLexicon {
    pub diagnosis_headings: Vec<String>,
    pub terminator_headings: Vec<String>,
}

impl Default for HeadingLexicon {
    fn default() -> Self {
        HeadingLexicon {
            diagnosis_headings: ["FINAL DIAGNOSIS", "DIAGNOSIS", "PATHOLOGIC DIAGNOSIS"]
                .map(String::from)
                .to_vec(),
            terminator_headings: [
                "COMMENT",
                "SIGNATURE",
                "ELECTRONICALLY SIGNED",
                "GROSS DESCRIPTION",
                "CLINICAL HISTORY",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeadingKind {
    Diagnosis,
    Terminator,
}

impl HeadingLexicon {
    pub fn validate(&self) -> Result<()> {
        if self.diagnosis_headings.iter().all(|h| h.trim().is_empty()) {
            return Err(Error::Config(
                "heading lexicon needs at least one diagnosis heading".into(),
            ));
        }
        Ok(())
    }

    /// Longest pattern matching at the start of `line`; on equal length the
    /// diagnosis list wins, then list order.
    fn classify(&self, line: &str) -> Option<HeadingKind> {
        let line = line.trim_start();
        let mut best: Option<(usize, HeadingKind)> = None;
        let candidates = self
            .diagnosis_headings
            .iter()
            .map(|h| (h, HeadingKind::Diagnosis))
            .chain(
                self.terminator_headings
                    .iter()
                    .map(|h| (h, HeadingKind::Terminator)),
            );
        for (pattern, kind) in candidates {
            let pattern = pattern.trim();
            if pattern.is_empty() || !heading_matches(line, pattern) {
                continue;
            }
            if best.is_none_or(|(len, _)| pattern.len() > len) {
                best = Some((pattern.len(), kind));
            }
        }
        best.map(|(_, kind)| kind)
    }
}

fn heading_matches(line: &str, pattern: &str) -> bool {
    let Some(head) = line.get(..pattern.len()) else {
        return false;
    };
    if !head.eq_ignore_ascii_case(pattern) {
        return false;
    }
    // the literal must end at a word boundary
    match line[pattern.len()..].chars().next() {
        None => true,
        Some(c) => !c.is_alphanumeric(),
    }
}

/// Minimal cleanup of extraction noise.
///
/// Runs of three or more identical ASCII punctuation characters collapse to
/// one, runs of spaces and tabs collapse to a single space, line endings
/// become `\n` and trailing whitespace is trimmed from every line.
pub fn clean_text(raw: &str) -> String {
    let normalized = raw.replace("\r\n", "\n").replace('\r', "\n");
    let mut out = String::with_capacity(normalized.len());
    for (i, line) in normalized.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let start = out.len();
        clean_line(line, &mut out);
        let trimmed = out[start..].trim_end().len();
        out.truncate(start + trimmed);
    }
    out
}

fn clean_line(line: &str, out: &mut String) {
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut j = i + 1;
        if c == ' ' || c == '\t' {
            while j < chars.len() && (chars[j] == ' ' || chars[j] == '\t') {
                j += 1;
            }
            out.push(' ');
        } else if c.is_ascii_punctuation() {
            while j < chars.len() && chars[j] == c {
                j += 1;
            }
            let run = j - i;
            let keep = if run >= 3 { 1 } else { run };
            out.extend(std::iter::repeat_n(c, keep));
        } else {
            out.push(c);
        }
        i = j;
    }
}

/// Extracts every block that starts at a diagnosis heading line and runs up
/// to the next terminator heading or the end of the text. Blocks are joined
/// with `\n`; trailing blank lines of a block are dropped.
pub fn extract_subsection(full_text: &str, lex: &HeadingLexicon) -> Result<String> {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in full_text.lines() {
        match lex.classify(line) {
            Some(HeadingKind::Diagnosis) => {
                blocks.extend(current.take());
                current = Some(vec![line]);
            }
            Some(HeadingKind::Terminator) => blocks.extend(current.take()),
            None => {
                if let Some(block) = current.as_mut() {
                    block.push(line);
                }
            }
        }
    }
    blocks.extend(current);
    if blocks.is_empty() {
        return Err(Error::NoDiagnosisSection);
    }
    let joined: Vec<String> = blocks
        .into_iter()
        .map(|mut block| {
            while block.len() > 1 && block.last().is_some_and(|l| l.trim().is_empty()) {
                block.pop();
            }
            block.join("\n")
        })
        .collect();
    Ok(joined.join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    Full,
    Subsection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub report_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preprocessed {
    pub corpus: Corpus,
    pub rejects: Vec<Reject>,
}

/// Cleans every report; in sub-section mode also extracts the diagnosis
/// section. Reports without one stay in the corpus with no sub-section text
/// and are listed in `rejects`.
pub fn preprocess_corpus(corpus: &Corpus, mode: PreprocessMode, lex: &HeadingLexicon) -> Preprocessed {
    let mut rejects = Vec::new();
    let reports = corpus
        .reports
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.full_text = clean_text(&r.full_text);
            if mode == PreprocessMode::Subsection {
                match extract_subsection(&r.full_text, lex) {
                    Ok(sub) => r.sub_section_text = Some(sub),
                    Err(e) => {
                        log::info!("report {} rejected: {e}", r.report_id);
                        r.sub_section_text = None;
                        rejects.push(Reject {
                            report_id: r.report_id.clone(),
                            reason: e.to_string(),
                        });
                    }
                }
            }
            r
        })
        .collect();
    Preprocessed {
        corpus: Corpus::new(reports, corpus.provenance),
        rejects,
    }
}
