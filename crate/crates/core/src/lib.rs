//! Extreme numeral labeling for financial statements.
//!
//! Each numeral mention becomes an instruction prompt, a generation backend
//! answers with tag documentation, and the [`matcher`] maps that text to the
//! nearest XBRL tag by cosine similarity of embeddings. [`metrics`] scores
//! the result and [`review`] supports the human evaluation protocol.

pub mod backends;
pub mod corpus;
pub mod jsonl;
pub mod matcher;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod prompting;
pub mod review;
pub mod synthetic;
pub mod text;

pub use corpus::{parse_corpus, zero_shot_tags, Corpus, Split, TagId, Taxonomy};
pub use matcher::{match_generated, Prediction, TagIndex};
pub use metrics::{evaluate, EvalOptions, EvalReport, LabeledPrediction};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError};
