//! Ground-truth structural equation models.
//!
//! Mechanisms are linear-Gaussian for continuous nodes and logistic-Bernoulli
//! for binary ones. Sampling is ancestral along the graph's topological order,
//! with one standard-normal noise column per node drawn in that order, so a
//! seed fully determines the table. Binary nodes turn their noise into a
//! uniform draw through the normal CDF.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::generator::{Surrogate, SurrogatePolicy};
use crate::graph::{CausalDag, EdgeRemovalSet, GraphError, NodeKind};
use crate::table::{Table, TableError};

#[derive(Debug, thiserror::Error)]
pub enum SemError {
    #[error("invalid SEM: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no surrogate policy entry for removed edge {0} -> {1}")]
    MissingPolicy(String, String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T, E = SemError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mechanism {
    /// `intercept + Σ w·parent + sigma·z`
    Linear {
        #[serde(default)]
        weights: BTreeMap<String, f64>,
        #[serde(default)]
        intercept: f64,
        sigma: f64,
    },
    /// `1` with probability `sigmoid(intercept + Σ w·parent)`
    Logistic {
        #[serde(default)]
        weights: BTreeMap<String, f64>,
        #[serde(default)]
        intercept: f64,
    },
}

impl Mechanism {
    pub fn weights(&self) -> &BTreeMap<String, f64> {
        match self {
            Self::Linear { weights, .. } | Self::Logistic { weights, .. } => weights,
        }
    }

    fn score(&self, weights: &[f64], parents: &[f64]) -> f64 {
        let intercept = match self {
            Self::Linear { intercept, .. } | Self::Logistic { intercept, .. } => *intercept,
        };
        intercept + weights.iter().zip(parents).map(|(w, x)| w * x).sum::<f64>()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SemFile {
    dag: CausalDag,
    mechanisms: BTreeMap<String, Mechanism>,
}

/// A fully specified structural equation model over a [`CausalDag`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SemFile", into = "SemFile")]
pub struct SemSpec {
    dag: CausalDag,
    mechanisms: BTreeMap<String, Mechanism>,
    /// Per node id, weights in the order of `dag.parents(id)`.
    ordered_weights: Vec<Vec<f64>>,
}

impl TryFrom<SemFile> for SemSpec {
    type Error = SemError;

    fn try_from(f: SemFile) -> Result<Self> {
        SemSpec::new(f.dag, f.mechanisms)
    }
}

impl From<SemSpec> for SemFile {
    fn from(s: SemSpec) -> Self {
        SemFile {
            dag: s.dag,
            mechanisms: s.mechanisms,
        }
    }
}

impl SemSpec {
    pub fn new(dag: CausalDag, mechanisms: BTreeMap<String, Mechanism>) -> Result<Self> {
        let invalid = |m: String| Err(SemError::InvalidSpec(m));
        if let Some(extra) = mechanisms.keys().find(|k| !dag.contains(k)) {
            return invalid(format!("mechanism for unknown node `{extra}`"));
        }
        let mut ordered_weights = Vec::with_capacity(dag.len());
        for id in 0..dag.len() {
            let name = dag.name(id);
            let Some(mech) = mechanisms.get(name) else {
                return invalid(format!("node `{name}` has no mechanism"));
            };
            match (mech, dag.kind(id)) {
                (Mechanism::Linear { sigma, .. }, NodeKind::Continuous) => {
                    if !(*sigma > 0.0) {
                        return invalid(format!("node `{name}` needs sigma > 0, got {sigma}"));
                    }
                }
                (Mechanism::Logistic { .. }, NodeKind::Binary) => {}
                (_, kind) => {
                    return invalid(format!("mechanism of `{name}` does not fit a {kind:?} node"))
                }
            }
            let parents: Vec<&str> = dag.parents(id).iter().map(|&p| dag.name(p)).collect();
            let weights = mech.weights();
            if weights.len() != parents.len() || parents.iter().any(|p| !weights.contains_key(*p)) {
                return invalid(format!(
                    "weights of `{name}` cover {:?}, graph parents are {parents:?}",
                    weights.keys().collect::<Vec<_>>()
                ));
            }
            ordered_weights.push(parents.iter().map(|p| weights[*p]).collect());
        }
        Ok(Self {
            dag,
            mechanisms,
            ordered_weights,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn dag(&self) -> &CausalDag {
        &self.dag
    }

    pub fn mechanism(&self, name: &str) -> Option<&Mechanism> {
        self.mechanisms.get(name)
    }

    /// Structural equation of node `id` for given parent values (in
    /// `dag.parents(id)` order) and standard-normal noise `z`.
    pub fn evaluate(&self, id: usize, parents: &[f64], z: f64) -> f64 {
        let mech = &self.mechanisms[self.dag.name(id)];
        let s = mech.score(&self.ordered_weights[id], parents);
        match mech {
            Mechanism::Linear { sigma, .. } => s + sigma * z,
            Mechanism::Logistic { .. } => {
                if normal_cdf(z) < sigmoid(s) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// The SEM with some nodes marginalized out of the graph: dropped nodes
    /// and their edges vanish, remaining mechanisms lose those parents.
    /// Only the graph shape is kept exact; this is not a faithful
    /// marginalization of the distribution.
    pub fn without_nodes(&self, dropped: &[String]) -> Result<SemSpec> {
        let dag = self.dag.without_nodes(dropped)?;
        let mechanisms = self
            .mechanisms
            .iter()
            .filter(|(k, _)| !dropped.contains(k))
            .map(|(k, m)| {
                let mut m = m.clone();
                match &mut m {
                    Mechanism::Linear { weights, .. } | Mechanism::Logistic { weights, .. } => {
                        weights.retain(|p, _| !dropped.contains(p))
                    }
                }
                (k.clone(), m)
            })
            .collect();
        SemSpec::new(dag, mechanisms)
    }

    /// Draws `n` rows by ancestral sampling.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Table> {
        self.interventional_sample(&EdgeRemovalSet::new(), &SurrogatePolicy::default(), n, seed)
    }

    /// Ancestral sampling in which each removed edge `i -> j` feeds the
    /// surrogate value into `f_j` instead of the sampled `X_i`. The sampled
    /// `X_i` column itself is left untouched.
    pub fn interventional_sample(
        &self,
        removed: &EdgeRemovalSet,
        policy: &SurrogatePolicy,
        n: usize,
        seed: u64,
    ) -> Result<Table> {
        if n == 0 {
            return Err(SemError::InvalidArgument("sample size must be >= 1".into()));
        }
        let dag = &self.dag;
        let mut surrogates: Vec<Vec<Option<Surrogate>>> = vec![Vec::new(); dag.len()];
        for id in 0..dag.len() {
            for &p in dag.parents(id) {
                let (from, to) = (dag.name(p), dag.name(id));
                let s = if removed.contains(from, to) {
                    Some(
                        policy
                            .get(from, to)
                            .ok_or_else(|| SemError::MissingPolicy(from.into(), to.into()))?,
                    )
                } else {
                    None
                };
                surrogates[id].push(s);
            }
        }
        for (from, to) in removed.edges() {
            let (f, t) = (dag.id(from)?, dag.id(to)?);
            if !dag.has_edge(f, t) {
                return Err(GraphError::MissingEdge(from.into(), to.into()).into());
            }
        }

        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut surrogate_rng = ChaCha8Rng::seed_from_u64(seed);
        surrogate_rng.set_stream(1);

        let mut data = Array2::<f64>::zeros((n, dag.len()));
        let mut parent_buf = Vec::new();
        for &id in dag.topological_order() {
            let noise: Vec<f64> = (0..n).map(|_| noise_rng.sample(StandardNormal)).collect();
            let parents = dag.parents(id);
            for row in 0..n {
                parent_buf.clear();
                for (k, &p) in parents.iter().enumerate() {
                    let v = match surrogates[id][k] {
                        None => data[[row, p]],
                        Some(Surrogate::FixedValue(v)) => v,
                        Some(Surrogate::MarginalSample) => {
                            data[[surrogate_rng.random_range(0..n), p]]
                        }
                    };
                    parent_buf.push(v);
                }
                data[[row, id]] = self.evaluate(id, &parent_buf, noise[row]);
            }
        }
        Ok(Table::new(dag.nodes().to_vec(), data)?)
    }
}

/// Flips `target` from 1 to 0 with probability `beta` in every row whose
/// `protected` value equals `disadvantaged`. No other cell changes.
pub fn inject_direct_bias(
    table: &Table,
    protected: &str,
    target: &str,
    disadvantaged: f64,
    beta: f64,
    seed: u64,
) -> Result<Table> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(SemError::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
    }
    if table.kind(target)? != NodeKind::Binary {
        return Err(SemError::InvalidArgument(format!("target `{target}` is not binary")));
    }
    let a = table.column_index(protected)?;
    let y = table.column_index(target)?;
    let mut data = table.data().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for mut row in data.rows_mut() {
        if row[a] == disadvantaged && row[y] == 1.0 && rng.random::<f64>() < beta {
            row[y] = 0.0;
        }
    }
    Ok(Table::new(table.schema().to_vec(), data)?)
}
