pub mod eval;
pub mod generator;
pub mod graph;
pub mod nn;
pub mod pipeline;
pub mod sem;
pub mod table;
pub mod training;

pub use eval::{DownstreamConfig, EvalReport, Predictor, RunMetrics};
pub use generator::{GeneratorModel, Surrogate, SurrogatePolicy};
pub use graph::{
    edges_to_remove, perturb_dag, CausalDag, EdgeRemovalSet, FairnessDefinition, FairnessSpec, NodeKind, NodeSpec,
    PerturbMode,
};
pub use pipeline::{ExperimentConfig, ExperimentReport, Variant};
pub use sem::SemSpec;
pub use table::Table;
pub use training::{fit, TrainConfig, TrainLog};
