//! Whitespace and WordPiece tokenization, plus per-report token statistics.
//!
//! WordPiece follows the BERT recipe: optional lowercasing, splitting on
//! whitespace and ASCII punctuation, then greedy longest-match-first against
//! the vocabulary with a continuation prefix on non-initial pieces. A word
//! with no complete segmentation becomes a single unknown token.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ReportField};
use crate::error::{Error, Result};

/// Words longer than this many characters map straight to the unknown token.
const MAX_CHARS_PER_WORD: usize = 100;

/// Reports longer than this are counted in `pct_over_512`.
pub const LONG_REPORT_TOKENS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    Whitespace,
    Wordpiece,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerSpec {
    pub kind: TokenizerKind,
    pub vocab_path: Option<PathBuf>,
    pub lowercase: bool,
    pub continuation_prefix: String,
    pub unknown_token: String,
    /// Add the two sequence markers ([CLS]/[SEP]) to every count.
    pub count_special_tokens: bool,
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        TokenizerSpec {
            kind: TokenizerKind::Whitespace,
            vocab_path: None,
            lowercase: true,
            continuation_prefix: "##".into(),
            unknown_token: "[UNK]".into(),
            count_special_tokens: false,
        }
    }
}

impl TokenizerSpec {
    pub fn wordpiece(vocab_path: impl Into<PathBuf>) -> Self {
        TokenizerSpec {
            kind: TokenizerKind::Wordpiece,
            vocab_path: Some(vocab_path.into()),
            ..Default::default()
        }
    }
}

/// A loaded, immutable tokenizer.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    spec: TokenizerSpec,
    vocab: HashSet<String>,
}

impl Tokenizer {
    pub fn whitespace() -> Self {
        Tokenizer {
            spec: TokenizerSpec::default(),
            vocab: HashSet::new(),
        }
    }

    pub fn from_spec(spec: &TokenizerSpec) -> Result<Self> {
        match spec.kind {
            TokenizerKind::Whitespace => Ok(Tokenizer {
                spec: spec.clone(),
                vocab: HashSet::new(),
            }),
            TokenizerKind::Wordpiece => {
                let path = spec.vocab_path.as_deref().ok_or_else(|| Error::VocabLoadError {
                    path: PathBuf::new(),
                    detail: "wordpiece tokenizer needs a vocab_path".into(),
                })?;
                let vocab = load_vocab(path)?;
                Self::with_vocab(spec.clone(), vocab).map_err(|e| match e {
                    Error::VocabLoadError { detail, .. } => Error::VocabLoadError {
                        path: path.to_path_buf(),
                        detail,
                    },
                    other => other,
                })
            }
        }
    }

    /// WordPiece tokenizer over an in-memory vocabulary.
    pub fn with_vocab<I, S>(mut spec: TokenizerSpec, vocab: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        spec.kind = TokenizerKind::Wordpiece;
        let vocab: HashSet<String> = vocab.into_iter().map(Into::into).collect();
        if !vocab.contains(&spec.unknown_token) {
            return Err(Error::VocabLoadError {
                path: spec.vocab_path.clone().unwrap_or_default(),
                detail: format!("vocabulary lacks the unknown token {:?}", spec.unknown_token),
            });
        }
        Ok(Tokenizer { spec, vocab })
    }

    pub fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    /// Splits `text` into words, as byte spans of the original text.
    pub fn pre_tokenize<'a>(&self, text: &'a str) -> Vec<(usize, &'a str)> {
        let mut words = Vec::new();
        let mut start: Option<usize> = None;
        let split_punct = self.spec.kind == TokenizerKind::Wordpiece;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    words.push((s, &text[s..i]));
                }
            } else if split_punct && c.is_ascii_punctuation() {
                if let Some(s) = start.take() {
                    words.push((s, &text[s..i]));
                }
                words.push((i, &text[i..i + 1]));
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            words.push((s, &text[s..]));
        }
        words
    }

    fn normalize(&self, word: &str) -> String {
        if self.spec.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        }
    }

    /// Greedy longest-match-first segmentation of one word.
    pub fn word_pieces(&self, word: &str) -> Vec<String> {
        let word = self.normalize(word);
        if self.spec.kind == TokenizerKind::Whitespace {
            return vec![word];
        }
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.len() > MAX_CHARS_PER_WORD {
            return vec![self.spec.unknown_token.clone()];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let from = chars[start].0;
            let mut matched = None;
            for end in (start + 1..=chars.len()).rev() {
                let to = chars.get(end).map_or(word.len(), |c| c.0);
                let piece = if start == 0 {
                    word[from..to].to_string()
                } else {
                    format!("{}{}", self.spec.continuation_prefix, &word[from..to])
                };
                if self.vocab.contains(&piece) {
                    matched = Some((end, piece));
                    break;
                }
            }
            match matched {
                Some((end, piece)) => {
                    pieces.push(piece);
                    start = end;
                }
                None => return vec![self.spec.unknown_token.clone()],
            }
        }
        pieces
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.pre_tokenize(text)
            .into_iter()
            .flat_map(|(_, w)| self.word_pieces(w))
            .collect()
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        let n: usize = self
            .pre_tokenize(text)
            .into_iter()
            .map(|(_, w)| self.word_pieces(w).len())
            .sum();
        if self.spec.count_special_tokens {
            n + 2
        } else {
            n
        }
    }

    /// Longest prefix of `text` ending on a word boundary whose count stays
    /// within `max_tokens`. A word that would straddle the limit is dropped
    /// whole.
    pub fn truncate<'a>(&self, text: &'a str, max_tokens: usize) -> &'a str {
        let budget = if self.spec.count_special_tokens {
            max_tokens.saturating_sub(2)
        } else {
            max_tokens
        };
        let mut used = 0;
        let mut end = 0;
        for (start, word) in self.pre_tokenize(text) {
            let n = self.word_pieces(word).len();
            if used + n > budget {
                return &text[..end];
            }
            used += n;
            end = start + word.len();
        }
        text
    }
}

pub fn load_vocab(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::VocabLoadError {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(|l| l.trim_end().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Loads the tokenizer described by `spec` and tokenizes `text`.
pub fn tokenize(text: &str, spec: &TokenizerSpec) -> Result<Vec<String>> {
    Ok(Tokenizer::from_spec(spec)?.tokenize(text))
}

pub fn count_tokens(text: &str, spec: &TokenizerSpec) -> Result<usize> {
    Ok(Tokenizer::from_spec(spec)?.count_tokens(text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub n: usize,
    pub min: usize,
    pub p25: usize,
    pub p50: usize,
    pub p75: usize,
    pub max: usize,
    pub pct_over_512: f64,
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
fn nearest_rank(sorted: &[usize], p: f64) -> usize {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn stats_from_counts(counts: &[usize]) -> TokenStats {
    if counts.is_empty() {
        return TokenStats {
            n: 0,
            min: 0,
            p25: 0,
            p50: 0,
            p75: 0,
            max: 0,
            pct_over_512: 0.0,
        };
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let over = sorted.iter().filter(|&&c| c > LONG_REPORT_TOKENS).count();
    TokenStats {
        n: sorted.len(),
        min: sorted[0],
        p25: nearest_rank(&sorted, 25.0),
        p50: nearest_rank(&sorted, 50.0),
        p75: nearest_rank(&sorted, 75.0),
        max: sorted[sorted.len() - 1],
        pct_over_512: 100.0 * over as f64 / sorted.len() as f64,
    }
}

pub fn token_counts(corpus: &Corpus, tokenizer: &Tokenizer, field: ReportField) -> Result<Vec<usize>> {
    corpus
        .reports
        .iter()
        .map(|r| {
            field
                .text_of(r)
                .map(|t| tokenizer.count_tokens(t))
                .ok_or_else(|| Error::MissingField(r.report_id.clone()))
        })
        .collect()
}

pub fn token_stats(corpus: &Corpus, tokenizer: &Tokenizer, field: ReportField) -> Result<TokenStats> {
    Ok(stats_from_counts(&token_counts(corpus, tokenizer, field)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub tokenizer: String,
    pub field: ReportField,
    pub stats: TokenStats,
}

pub const STATS_COLUMNS: [&str; 6] = ["Min", "25p", "50p", "75p", "Max", "%>512"];

pub fn write_stats_csv<W: Write>(rows: &[StatsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Tokenizer", "Text"];
    header.extend(STATS_COLUMNS);
    w.write_record(&header)?;
    for row in rows {
        let s = &row.stats;
        let text = match row.field {
            ReportField::Full => "Full Report Text",
            ReportField::Subsection => "Sub-Section Text",
        };
        w.write_record([
            row.tokenizer.clone(),
            text.to_string(),
            s.min.to_string(),
            s.p25.to_string(),
            s.p50.to_string(),
            s.p75.to_string(),
            s.max.to_string(),
            format!("{:.1}", s.pct_over_512),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
