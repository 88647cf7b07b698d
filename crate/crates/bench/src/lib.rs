//! Fixtures shared by the benchmarks.

use decaf::graph::CausalDag;
use decaf::sem::SemSpec;

pub fn data_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

pub fn adult_dag() -> CausalDag {
    CausalDag::load(data_path("adult/dag.json")).expect("shipped Adult graph")
}

pub fn mediated_sem() -> SemSpec {
    SemSpec::load(data_path("sem/mediated-sem.json")).expect("shipped SEM")
}
