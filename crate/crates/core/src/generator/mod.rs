//! Sequential causal generator with inference-time edge removal.
//!
//! A [`GeneratorModel`] holds one mechanism per DAG node and produces rows by
//! a topological sweep. Removing an edge `i -> j` at generation time feeds a
//! surrogate value to node `j` in place of the generated `X_i`; the generated
//! `X_i` column itself is kept.

mod file;
pub mod network;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{CausalDag, EdgeRemovalSet, GraphError, NodeKind};
use crate::sem::SemSpec;
use crate::table::{Table, TableError};
use crate::training::Preprocessing;

pub use file::FORMAT_VERSION;
pub use network::GeneratorNet;

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error("node `{node}` expects {expected} inputs, got {found}")]
    ArityMismatch {
        node: String,
        expected: usize,
        found: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no surrogate for removed edge {0} -> {1}")]
    MissingPolicy(String, String),
    #[error("invalid surrogate policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model file integrity check failed: {0}")]
    Integrity(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T, E = GeneratorError> = std::result::Result<T, E>;

/// Value fed to a child in place of a removed parent edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// A fresh draw from the generated parent column, independently per row
    /// and per removed edge.
    MarginalSample,
    /// The same raw value for every row.
    FixedValue(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PolicyEntry {
    from: String,
    to: String,
    surrogate: Surrogate,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    #[serde(default)]
    default: Option<Surrogate>,
    #[serde(default)]
    edges: Vec<PolicyEntry>,
}

/// Surrogates for removed edges: explicit per-edge entries, with an optional
/// fallback for edges that have none.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct SurrogatePolicy {
    default: Option<Surrogate>,
    edges: BTreeMap<(String, String), Surrogate>,
}

impl TryFrom<PolicyFile> for SurrogatePolicy {
    type Error = GeneratorError;

    fn try_from(f: PolicyFile) -> Result<Self> {
        let mut policy = SurrogatePolicy {
            default: f.default,
            edges: BTreeMap::new(),
        };
        for e in f.edges {
            if policy.edges.insert((e.from.clone(), e.to.clone()), e.surrogate).is_some() {
                return Err(GeneratorError::InvalidPolicy(format!(
                    "edge {} -> {} listed twice",
                    e.from, e.to
                )));
            }
        }
        Ok(policy)
    }
}

impl From<SurrogatePolicy> for PolicyFile {
    fn from(p: SurrogatePolicy) -> Self {
        PolicyFile {
            default: p.default,
            edges: p
                .edges
                .into_iter()
                .map(|((from, to), surrogate)| PolicyEntry { from, to, surrogate })
                .collect(),
        }
    }
}

impl SurrogatePolicy {
    /// Applies `surrogate` to every removed edge.
    pub fn uniform(surrogate: Surrogate) -> Self {
        Self {
            default: Some(surrogate),
            edges: BTreeMap::new(),
        }
    }

    pub fn with_edge(mut self, from: &str, to: &str, surrogate: Surrogate) -> Self {
        self.edges.insert((from.to_string(), to.to_string()), surrogate);
        self
    }

    pub fn get(&self, from: &str, to: &str) -> Option<Surrogate> {
        self.edges
            .get(&(from.to_string(), to.to_string()))
            .copied()
            .or(self.default)
    }

    /// Checks that every removed edge has a surrogate, that explicit entries
    /// name removed edges, and that fixed values suit the parent's kind.
    pub fn validate(&self, dag: &CausalDag, removed: &EdgeRemovalSet) -> Result<()> {
        for (from, to) in self.edges.keys() {
            if !removed.contains(from, to) {
                return Err(GeneratorError::InvalidPolicy(format!(
                    "entry for {from} -> {to}, which is not a removed edge"
                )));
            }
        }
        for (from, to) in removed.edges() {
            let s = self
                .get(from, to)
                .ok_or_else(|| GeneratorError::MissingPolicy(from.into(), to.into()))?;
            if let Surrogate::FixedValue(v) = s {
                let kind = dag.kind(dag.id(from)?);
                if !v.is_finite() || (kind == NodeKind::Binary && v != 0.0 && v != 1.0) {
                    return Err(GeneratorError::InvalidPolicy(format!(
                        "fixed value {v} does not fit {kind:?} parent `{from}`"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How each node's value is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Mechanisms {
    /// Trained networks working in standardized units.
    Network(GeneratorNet),
    /// Ground-truth structural equations, working in raw units.
    Structural(SemSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    dag: CausalDag,
    mechanisms: Mechanisms,
    preprocessing: Preprocessing,
}

impl GeneratorModel {
    pub fn new(dag: CausalDag, mechanisms: Mechanisms, preprocessing: Preprocessing) -> Result<Self> {
        let stats_names: Vec<&str> = preprocessing.columns().iter().map(|c| c.name.as_str()).collect();
        let dag_names: Vec<&str> = dag.nodes().iter().map(|n| n.name.as_str()).collect();
        if stats_names != dag_names {
            return Err(GeneratorError::ShapeMismatch(format!(
                "preprocessing covers {stats_names:?}, graph has {dag_names:?}"
            )));
        }
        match &mechanisms {
            Mechanisms::Network(net) => {
                if net.inputs.len() != dag.len() || net.heads.len() != dag.len() {
                    return Err(GeneratorError::ShapeMismatch(format!(
                        "network has {} sub-generators for {} nodes",
                        net.inputs.len(),
                        dag.len()
                    )));
                }
                for j in 0..dag.len() {
                    let expected = dag.parents(j).len() + 1;
                    if net.arity(j) != expected {
                        return Err(GeneratorError::ArityMismatch {
                            node: dag.name(j).to_string(),
                            expected,
                            found: net.arity(j),
                        });
                    }
                    if net.kinds[j] != dag.kind(j) {
                        return Err(GeneratorError::ShapeMismatch(format!(
                            "node `{}` kind differs between network and graph",
                            dag.name(j)
                        )));
                    }
                }
            }
            Mechanisms::Structural(sem) => {
                if sem.dag() != &dag {
                    return Err(GeneratorError::ShapeMismatch(
                        "structural mechanisms are defined over a different graph".into(),
                    ));
                }
            }
        }
        Ok(Self {
            dag,
            mechanisms,
            preprocessing,
        })
    }

    /// Plugs the true structural equations in as sub-generators.
    pub fn from_sem(sem: &SemSpec) -> Self {
        let dag = sem.dag().clone();
        let preprocessing = Preprocessing::identity(dag.nodes());
        Self {
            dag,
            mechanisms: Mechanisms::Structural(sem.clone()),
            preprocessing,
        }
    }

    pub fn dag(&self) -> &CausalDag {
        &self.dag
    }

    pub fn mechanisms(&self) -> &Mechanisms {
        &self.mechanisms
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    /// Evaluates node `j` on a complete input matrix `[parents..., z]`.
    fn node_values(&self, j: usize, input: ArrayView2<f64>) -> Array1<f64> {
        match &self.mechanisms {
            Mechanisms::Network(net) => net.emit(j, input),
            Mechanisms::Structural(sem) => {
                let p = input.ncols() - 1;
                input
                    .rows()
                    .into_iter()
                    .map(|r| {
                        let r = r.to_vec();
                        sem.evaluate(j, &r[..p], r[p])
                    })
                    .collect()
            }
        }
    }

    /// Applies one sub-generator. `parent_values` holds one column per
    /// parent in graph order, in the model's internal units (standardized for
    /// trained models); `substitutions` replaces named parent columns.
    pub fn generate_node(
        &self,
        node: &str,
        parent_values: ArrayView2<f64>,
        substitutions: &BTreeMap<String, Array1<f64>>,
        noise: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        let j = self.dag.id(node)?;
        let parents = self.dag.parents(j);
        if parent_values.ncols() != parents.len() {
            return Err(GeneratorError::ArityMismatch {
                node: node.to_string(),
                expected: parents.len() + 1,
                found: parent_values.ncols() + 1,
            });
        }
        let n = noise.len();
        if parent_values.nrows() != n {
            return Err(GeneratorError::ShapeMismatch(format!(
                "{} parent rows for {n} noise values",
                parent_values.nrows()
            )));
        }
        let mut input = Array2::zeros((n, parents.len() + 1));
        input.slice_mut(ndarray::s![.., ..parents.len()]).assign(&parent_values);
        input.column_mut(parents.len()).assign(&noise);
        for (name, values) in substitutions {
            let slot = parents
                .iter()
                .position(|&p| self.dag.name(p) == name)
                .ok_or_else(|| {
                    GeneratorError::InvalidArgument(format!("`{name}` is not a parent of `{node}`"))
                })?;
            if values.len() != n {
                return Err(GeneratorError::ShapeMismatch(format!(
                    "substitution for `{name}` has {} rows, expected {n}",
                    values.len()
                )));
            }
            input.column_mut(slot).assign(values);
        }
        Ok(self.node_values(j, input.view()))
    }

    /// Produces `n` rows. Removed edges receive surrogates per `policy`;
    /// with an empty removal set this is plain sequential generation.
    pub fn generate(
        &self,
        n: usize,
        removed: &EdgeRemovalSet,
        policy: &SurrogatePolicy,
        seed: u64,
    ) -> Result<Table> {
        if n == 0 {
            return Err(GeneratorError::InvalidArgument("sample size must be >= 1".into()));
        }
        let dag = &self.dag;
        for (from, to) in removed.edges() {
            if !dag.has_edge(dag.id(from)?, dag.id(to)?) {
                return Err(GraphError::MissingEdge(from.into(), to.into()).into());
            }
        }
        policy.validate(dag, removed)?;

        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut surrogate_rng = ChaCha8Rng::seed_from_u64(seed);
        surrogate_rng.set_stream(1);

        let mut internal = Array2::<f64>::zeros((n, dag.len()));
        for &j in dag.topological_order() {
            let parents = dag.parents(j);
            let p = parents.len();
            // Per slot: None keeps the generated parent.
            let surrogates: Vec<Option<Surrogate>> = parents
                .iter()
                .map(|&i| {
                    let (from, to) = (dag.name(i), dag.name(j));
                    removed.contains(from, to).then(|| policy.get(from, to).expect("validated"))
                })
                .collect();
            let mut input = Array2::<f64>::zeros((n, p + 1));
            for row in 0..n {
                input[[row, p]] = noise_rng.sample(StandardNormal);
            }
            for row in 0..n {
                for (k, &i) in parents.iter().enumerate() {
                    input[[row, k]] = match surrogates[k] {
                        None => internal[[row, i]],
                        Some(Surrogate::FixedValue(v)) => self.preprocessing.transform_value(i, v),
                        Some(Surrogate::MarginalSample) => internal[[surrogate_rng.random_range(0..n), i]],
                    };
                }
            }
            let col = self.node_values(j, input.view());
            internal.column_mut(j).assign(&col);
        }
        Ok(self.preprocessing.invert_generated(internal, dag.nodes())?)
    }
}
