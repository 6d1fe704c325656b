//! Complex logical query answering over knowledge graphs.
//!
//! A ComplEx link predictor is materialized into a sparse, type-pruned
//! adjacency matrix per relation. Queries are executed with fuzzy logic
//! (product t-norm) over calibrated matrix entries, and a small set of
//! calibration and type-adapter parameters is trained from labeled queries.

pub mod adjacency;
mod binio;
pub mod error;
pub mod eval;
pub mod executor;
pub mod kg;
pub mod kge;
pub mod query;
pub mod synthetic;
pub mod trainer;
pub mod type_graphs;

pub use adjacency::{BuildOptions, CalibrationParams, NeuralAdjacencyMatrix};
pub use error::{Error, Result};
pub use eval::{evaluate, Averaging, EvalReport};
pub use executor::{AdapterHops, AdapterParams, ExecutionTrace, Executor, FuzzyVector};
pub use kg::{EdgeIndex, GraphView, KnowledgeGraph, Split, Triple, TypeAnnotations};
pub use kge::{train_kge, KgeConfig, KgeModel};
pub use query::{LabeledQuery, Query, QueryAst, Structure};
pub use trainer::{train_adapter, ParamsFile, TrainConfig, TrainState};
pub use type_graphs::TypedEntityRelationGraphs;
