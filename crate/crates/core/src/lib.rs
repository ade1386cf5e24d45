//! Triage of monitored production scenarios against a unit test suite.
//!
//! The pipeline ingests execution traces captured in production, renders a
//! fixed five-question prompt per scenario, queries a chat-completion
//! backend, decodes the YES/NO answers into a five-bit vector, and maps the
//! vector to one of three classes by prototype matching:
//! `already-tested`, `not-yet-tested`, or `error-prone`. Scenarios in the
//! latter two classes are candidates for test generation.
//!
//! Modules follow the pipeline stages:
//!
//! - [`corpus`] — trace records, labeled datasets, splitting, fine-tune export
//! - [`promptgen`] — prompt template instantiation and context budgets
//! - [`retriever`] — lexical code index for retrieval-augmented prompts
//! - [`analyzer`] — chat backends (HTTP and scripted) and answer decoding
//! - [`triage`] — prototype matching with dominance tie-breaking
//! - [`evalharness`] — confusion matrices, per-class metrics, centroid baseline
//! - [`testsmith`] — bounded chat loop generating test scaffolds

pub mod analyzer;
pub mod corpus;
pub mod evalharness;
pub mod promptgen;
pub mod retriever;
pub mod testsmith;
pub mod text;
pub mod triage;

pub use analyzer::AnswerVector;
pub use corpus::{LabeledDataset, ScenarioRecord};
pub use triage::ScenarioClass;
