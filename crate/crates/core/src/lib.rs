//! Synthesis of verified buggy/fixed program pairs in low-resource languages
//! from high-resource counterparts, and the metrics used to evaluate repair
//! models trained on them.
//!
//! The pipeline runs per source pair:
//!
//! ```text
//! ingest -> descriptor -> transferability -> oracle suite -> translation
//!        -> behaviour spec -> input sets -> candidate injection -> selection
//! ```
//!
//! Every decision is journaled ([`corpus::journal`]), every model call goes
//! through a record/replay cache ([`llm`]), and every program runs inside a
//! scratch-directory sandbox ([`sandbox`]).

pub mod config;
pub mod corpus;
pub mod curriculum;
pub mod descriptor;
pub mod eval;
pub mod hash;
pub mod inject;
pub mod llm;
pub mod pipeline;
pub mod sandbox;
pub mod testgen;
pub mod translate;

pub use corpus::{LanguageId, ParallelQuad, SourcePair, TargetPair};
