//! Classification pipeline for Barrett's esophagus pathology reports.
//!
//! The crate covers the whole path from raw reports to result tables:
//!
//! - [`corpus`]: report records, JSONL loading and a synthetic generator
//! - [`preprocess`]: text cleanup and diagnosis sub-section extraction
//! - [`labels`]: the six-class taxonomy and its binary collapse
//! - [`splits`]: patient-level and report-level partitions
//! - [`tokenize`]: whitespace and WordPiece token counts and statistics
//! - [`metrics`]: confusion matrices, F-scores and AUROC
//! - [`harness`]: backends, grid search, evaluation and result tables
//! - [`config`]: the TOML pipeline configuration
//!
//! ```
//! use bepath::corpus::{generate_synthetic, GeneratorSpec};
//! use bepath::labels::class_distribution;
//!
//! let corpus = generate_synthetic(&GeneratorSpec::new(20, 7)).unwrap();
//! let dist = class_distribution(&corpus).unwrap();
//! assert_eq!(dist.total, corpus.len());
//! ```

pub mod config;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod labels;
pub mod metrics;
pub mod preprocess;
pub mod splits;
pub mod tokenize;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/corpus.md")]
pub mod book_corpus {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/preprocessing.md")]
pub mod book_preprocessing {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/labels.md")]
pub mod book_labels {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/splits.md")]
pub mod book_splits {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tokenization.md")]
pub mod book_tokenization {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod book_metrics {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/harness.md")]
pub mod book_harness {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/worker-protocol.md")]
pub mod book_worker_protocol {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod book_cli {}
