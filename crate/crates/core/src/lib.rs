//! Davidsonian scene graphs: generate dependency-aware yes/no questions from
//! a text prompt, answer them against an image, and score alignment.

pub mod backends;
pub mod cli;
pub mod codec;
pub mod dataset;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod scoring;

pub use codec::{decode_graph, encode_graph, ParseMode};
pub use graph::{build_graph, Category, DependencyEdge, QuestionNode, SceneGraph, SemanticTuple, Subcategory};
pub use pipeline::{generate_dsg, PreambleSet, RetryConfig};
pub use scoring::{evaluate_item, ScoreMode};
