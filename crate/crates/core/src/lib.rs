//! Adaptive-retrieval question answering harness.
//!
//! The crate wires together five concerns:
//!
//! - [`datamodel`]: QA records and passage corpora, ingested from
//!   line-delimited files in several schema variants.
//! - [`retriever`]: a self-contained sparse BM25 index with binary
//!   persistence, standing behind the [`retriever::Retriever`] trait so a
//!   different engine can be plugged in later.
//! - [`gateway`]: a uniform text-generation interface with an HTTP
//!   completion backend and a deterministic scripted backend, plus the
//!   two prompt templates and `<RET>` sentinel detection.
//! - [`databuilder`]: probes a base model on every question and emits the
//!   training file that teaches a model to ask for retrieval when it does
//!   not know the answer.
//! - [`pipeline`] / [`popularity`]: the inference configurations
//!   (adaptive, never-retrieve, always-retrieve, popularity-threshold)
//!   and the decision analysis that cross-tabulates them.
//!
//! Answer judging lives in [`normalize`], aggregate metrics and report
//! rendering in [`report`].

pub mod config;
pub mod databuilder;
pub mod datamodel;
pub mod error;
pub mod exec;
pub mod gateway;
pub mod normalize;
pub mod pipeline;
pub mod popularity;
pub mod report;
pub mod retriever;
pub mod testing;
pub mod trace;

pub use error::{Error, Result};
