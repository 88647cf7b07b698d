//! Causal DAGs and the fairness-driven edge surgery performed on them.
//!
//! A [`CausalDag`] is immutable once built: every constructor validates node
//! names, edge endpoints and acyclicity, and caches a deterministic
//! topological order. Queries (d-separation, Markov boundaries, directed
//! paths) are pure functions of the graph.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("graph contains a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("fairness spec does not match graph: {0}")]
    SpecMismatch(String),
    #[error("edge {0} -> {1} is not in the graph")]
    MissingEdge(String, String),
    #[error("perturbation infeasible: {0}")]
    Infeasible(String),
    #[error("malformed DAG file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, kind: NodeKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// On-disk layout of a DAG file.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DagFile {
    nodes: Vec<NodeSpec>,
    edges: Vec<(String, String)>,
}

/// A validated directed acyclic graph over named, typed nodes.
///
/// Node ids are positions in declaration order. Parent and child lists are
/// kept sorted by id so that every derived quantity is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DagFile", into = "DagFile")]
pub struct CausalDag {
    nodes: Vec<NodeSpec>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl PartialEq for CausalDag {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.parents == other.parents
    }
}

impl Eq for CausalDag {}

impl TryFrom<DagFile> for CausalDag {
    type Error = GraphError;

    fn try_from(file: DagFile) -> Result<Self> {
        CausalDag::new(file.nodes, file.edges)
    }
}

impl From<CausalDag> for DagFile {
    fn from(dag: CausalDag) -> Self {
        DagFile {
            edges: dag.edge_names(),
            nodes: dag.nodes,
        }
    }
}

impl CausalDag {
    pub fn new<S: AsRef<str>>(nodes: Vec<NodeSpec>, edges: Vec<(S, S)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.name.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(node.name.clone()));
            }
        }
        let mut parents = vec![Vec::new(); nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        let mut seen = BTreeSet::new();
        for (from, to) in &edges {
            let (from, to) = (from.as_ref(), to.as_ref());
            let f = *index
                .get(from)
                .ok_or_else(|| GraphError::UnknownNode(from.to_string()))?;
            let t = *index
                .get(to)
                .ok_or_else(|| GraphError::UnknownNode(to.to_string()))?;
            if f == t {
                return Err(GraphError::SelfLoop(from.to_string()));
            }
            if !seen.insert((f, t)) {
                return Err(GraphError::DuplicateEdge(from.to_string(), to.to_string()));
            }
            parents[t].push(f);
            children[f].push(t);
        }
        parents.iter_mut().for_each(|p| p.sort_unstable());
        children.iter_mut().for_each(|c| c.sort_unstable());

        let mut dag = Self {
            nodes,
            index,
            parents,
            children,
            order: Vec::new(),
        };
        dag.order = dag.compute_order()?;
        Ok(dag)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("dag serialization is infallible")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn name(&self, id: usize) -> &str {
        &self.nodes[id].name
    }

    pub fn kind(&self, id: usize) -> NodeKind {
        self.nodes[id].kind
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn parents(&self, id: usize) -> &[usize] {
        &self.parents[id]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.children[from].binary_search(&to).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// All edges as `(parent, child)` id pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (from, cs) in self.children.iter().enumerate() {
            out.extend(cs.iter().map(|&to| (from, to)));
        }
        out
    }

    pub fn edge_names(&self) -> Vec<(String, String)> {
        self.edges()
            .into_iter()
            .map(|(f, t)| (self.name(f).to_string(), self.name(t).to_string()))
            .collect()
    }

    /// Topological order; ready nodes are released in lexicographic name order.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn topological_names(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.name(i)).collect()
    }

    fn compute_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<(&str, usize)>> = (0..n)
            .filter(|&i| indegree[i] == 0)
            .map(|i| Reverse((self.name(i), i)))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse((_, v))) = ready.pop() {
            order.push(v);
            for &c in &self.children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(Reverse((self.name(c), c)));
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        let remaining: Vec<bool> = indegree.iter().map(|&d| d > 0).collect();
        Err(GraphError::Cycle(self.find_cycle(&remaining)))
    }

    /// Walks parent links inside the unsorted remainder until a node repeats.
    fn find_cycle(&self, remaining: &[bool]) -> Vec<String> {
        let start = remaining.iter().position(|&r| r).unwrap_or(0);
        let mut pos: HashMap<usize, usize> = HashMap::new();
        let mut walk = Vec::new();
        let mut v = start;
        loop {
            if let Some(&p) = pos.get(&v) {
                let mut cycle: Vec<String> =
                    walk[p..].iter().rev().map(|&i| self.name(i).to_string()).collect();
                cycle.push(cycle[0].clone());
                return cycle;
            }
            pos.insert(v, walk.len());
            walk.push(v);
            // every remaining node keeps at least one remaining parent
            v = self.parents[v]
                .iter()
                .copied()
                .find(|&p| remaining[p])
                .unwrap_or(v);
        }
    }

    /// Ancestors of `id`, excluding `id` itself.
    pub fn ancestors(&self, id: usize) -> BTreeSet<usize> {
        self.closure(id, &self.parents)
    }

    /// Descendants of `id`, excluding `id` itself.
    pub fn descendants(&self, id: usize) -> BTreeSet<usize> {
        self.closure(id, &self.children)
    }

    fn closure(&self, id: usize, adj: &[Vec<usize>]) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        seen
    }

    /// True iff every path between `xs` and `ys` is blocked by `zs`.
    ///
    /// Members of `zs` that also appear in `xs` or `ys` are treated as
    /// separated from everything, so they are dropped from the query; a
    /// query whose source or target side becomes empty is trivially
    /// separated. `xs` and `ys` must be disjoint.
    pub fn d_separated(&self, xs: &[usize], ys: &[usize], zs: &[usize]) -> Result<bool> {
        let n = self.len();
        if let Some(&bad) = xs.iter().chain(ys).chain(zs).find(|&&v| v >= n) {
            return Err(GraphError::InvalidQuery(format!("node id {bad} out of range")));
        }
        let mut in_z = vec![false; n];
        zs.iter().for_each(|&z| in_z[z] = true);
        let ys: BTreeSet<usize> = ys.iter().copied().filter(|&y| !in_z[y]).collect();
        let xs: BTreeSet<usize> = xs.iter().copied().filter(|&x| !in_z[x]).collect();
        if let Some(v) = xs.intersection(&ys).next() {
            return Err(GraphError::InvalidQuery(format!(
                "`{}` appears on both sides of the query",
                self.name(*v)
            )));
        }
        if xs.is_empty() || ys.is_empty() {
            return Ok(true);
        }
        let reach = self.reachable(&xs, &in_z);
        Ok(ys.iter().all(|&y| !reach[y]))
    }

    pub fn d_separated_names(&self, xs: &[&str], ys: &[&str], zs: &[&str]) -> Result<bool> {
        let ids = |names: &[&str]| names.iter().map(|n| self.id(n)).collect::<Result<Vec<_>>>();
        self.d_separated(&ids(xs)?, &ids(ys)?, &ids(zs)?)
    }

    /// Nodes reachable from `sources` along an active trail given `in_z`
    /// (Bayes-ball over `(node, direction)` states).
    fn reachable(&self, sources: &BTreeSet<usize>, in_z: &[bool]) -> Vec<bool> {
        let n = self.len();
        // nodes that are in Z or have a descendant in Z
        let mut opens_collider = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&v| in_z[v]).collect();
        while let Some(v) = stack.pop() {
            if !opens_collider[v] {
                opens_collider[v] = true;
                stack.extend(self.parents[v].iter().copied());
            }
        }

        // direction: false = arrived from a child (moving up), true = from a parent
        let mut visited = vec![[false; 2]; n];
        let mut reached = vec![false; n];
        let mut queue: VecDeque<(usize, bool)> = sources.iter().map(|&s| (s, false)).collect();
        while let Some((v, down)) = queue.pop_front() {
            if visited[v][down as usize] {
                continue;
            }
            visited[v][down as usize] = true;
            if !in_z[v] {
                reached[v] = true;
            }
            if !down {
                if !in_z[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, false)));
                    queue.extend(self.children[v].iter().map(|&c| (c, true)));
                }
            } else {
                if !in_z[v] {
                    queue.extend(self.children[v].iter().map(|&c| (c, true)));
                }
                if opens_collider[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, false)));
                }
            }
        }
        reached
    }

    /// Parents, children and co-parents of children, excluding `id`.
    pub fn markov_boundary(&self, id: usize) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = self.parents[id].iter().copied().collect();
        for &c in &self.children[id] {
            out.insert(c);
            out.extend(self.parents[c].iter().copied());
        }
        out.remove(&id);
        out
    }

    pub fn markov_boundary_names(&self, name: &str) -> Result<BTreeSet<String>> {
        let id = self.id(name)?;
        Ok(self
            .markov_boundary(id)
            .into_iter()
            .map(|i| self.name(i).to_string())
            .collect())
    }

    /// Every simple directed path from `from` to `to`, in DFS order.
    pub fn directed_paths(&self, from: usize, to: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        if from == to {
            return out;
        }
        let ancestors_of_target = self.ancestors(to);
        let mut path = vec![from];
        self.extend_paths(to, &ancestors_of_target, &mut path, &mut out);
        out
    }

    fn extend_paths(
        &self,
        to: usize,
        useful: &BTreeSet<usize>,
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let v = *path.last().expect("path is never empty");
        for &c in &self.children[v] {
            if c == to {
                let mut p = path.clone();
                p.push(c);
                out.push(p);
            } else if useful.contains(&c) {
                path.push(c);
                self.extend_paths(to, useful, path, out);
                path.pop();
            }
        }
    }

    /// Copy of this graph without the given edges. Every edge must exist.
    pub fn without_edges(&self, removed: &EdgeRemovalSet) -> Result<CausalDag> {
        for (from, to) in removed.edges() {
            let (f, t) = (self.id(from)?, self.id(to)?);
            if !self.has_edge(f, t) {
                return Err(GraphError::MissingEdge(from.to_string(), to.to_string()));
            }
        }
        let edges: Vec<(String, String)> = self
            .edge_names()
            .into_iter()
            .filter(|(f, t)| !removed.contains(f, t))
            .collect();
        CausalDag::new(self.nodes.clone(), edges)
    }

    /// Copy of this graph with the named nodes (and their edges) deleted.
    pub fn without_nodes(&self, dropped: &[String]) -> Result<CausalDag> {
        for d in dropped {
            self.id(d)?;
        }
        let keep = |n: &String| !dropped.contains(n);
        let nodes = self.nodes.iter().filter(|n| keep(&n.name)).cloned().collect();
        let edges: Vec<(String, String)> = self
            .edge_names()
            .into_iter()
            .filter(|(f, t)| keep(f) && keep(t))
            .collect();
        CausalDag::new(nodes, edges)
    }

    pub fn with_edge(&self, from: &str, to: &str) -> Result<CausalDag> {
        let mut edges = self.edge_names();
        edges.push((from.to_string(), to.to_string()));
        CausalDag::new(self.nodes.clone(), edges)
    }
}

/// Fairness definitions the edge-removal rules understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessDefinition {
    Ftu,
    Dp,
    Cf,
    NoDirectDiscrimination,
    NoIndirectDiscrimination,
    NoUnresolvedDiscrimination,
    NoProxyDiscrimination,
}

impl FairnessDefinition {
    pub fn needs_explanatory(self) -> bool {
        matches!(self, Self::Cf | Self::NoUnresolvedDiscrimination)
    }

    pub fn needs_proxies(self) -> bool {
        matches!(self, Self::NoProxyDiscrimination)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::Ftu => "ftu",
            Self::Dp => "dp",
            Self::Cf => "cf",
            Self::NoDirectDiscrimination => "no_direct",
            Self::NoIndirectDiscrimination => "no_indirect",
            Self::NoUnresolvedDiscrimination => "no_unresolved",
            Self::NoProxyDiscrimination => "no_proxy",
        }
    }
}

impl fmt::Display for FairnessDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for FairnessDefinition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ftu" => Self::Ftu,
            "dp" => Self::Dp,
            "cf" => Self::Cf,
            "no_direct" | "no_direct_discrimination" => Self::NoDirectDiscrimination,
            "no_indirect" | "no_indirect_discrimination" => Self::NoIndirectDiscrimination,
            "no_unresolved" | "no_unresolved_discrimination" => Self::NoUnresolvedDiscrimination,
            "no_proxy" | "no_proxy_discrimination" => Self::NoProxyDiscrimination,
            other => return Err(format!("unknown fairness definition `{other}`")),
        })
    }
}

/// A fairness requirement: definition, protected attribute, target and the
/// explanatory (`R`) or proxy (`P`) sets some definitions need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessSpec {
    pub definition: FairnessDefinition,
    pub protected: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanatory: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxies: Option<BTreeSet<String>>,
}

impl FairnessSpec {
    pub fn new(definition: FairnessDefinition, protected: &str, target: &str) -> Self {
        Self {
            definition,
            protected: protected.to_string(),
            target: target.to_string(),
            explanatory: None,
            proxies: None,
        }
    }

    pub fn with_explanatory<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.explanatory = Some(names.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_proxies<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.proxies = Some(names.into_iter().map(Into::into).collect());
        self
    }

    /// Checks the definition's own requirements and that every name exists in `dag`.
    pub fn validate(&self, dag: &CausalDag) -> Result<()> {
        let mismatch = |m: String| Err(GraphError::SpecMismatch(m));
        if self.protected == self.target {
            return mismatch("protected attribute and target coincide".into());
        }
        for name in [&self.protected, &self.target] {
            if !dag.contains(name) {
                return mismatch(format!("`{name}` is not a node"));
            }
        }
        let def = self.definition;
        match (&self.explanatory, def.needs_explanatory()) {
            (None, true) => return mismatch(format!("{def} requires an explanatory set")),
            (Some(_), false) => return mismatch(format!("{def} takes no explanatory set")),
            _ => {}
        }
        match (&self.proxies, def.needs_proxies()) {
            (None, true) => return mismatch(format!("{def} requires a proxy set")),
            (Some(_), false) => return mismatch(format!("{def} takes no proxy set")),
            _ => {}
        }
        for name in self.explanatory.iter().chain(&self.proxies).flatten() {
            if name == &self.protected || name == &self.target {
                return mismatch(format!("`{name}` cannot be explanatory or a proxy"));
            }
            if !dag.contains(name) {
                return mismatch(format!("`{name}` is not a node"));
            }
        }
        Ok(())
    }

    /// Every column this requirement names.
    pub fn referenced(&self) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = [self.protected.as_str(), self.target.as_str()].into();
        out.extend(self.explanatory.iter().flatten().map(String::as_str));
        out.extend(self.proxies.iter().flatten().map(String::as_str));
        out
    }
}

/// Why an edge was scheduled for removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rationale {
    /// FTU: edge between protected attribute and target.
    FtuDirectEdge,
    /// FTU: target-side edge into a child shared with the protected attribute.
    FtuSharedChild,
    /// CF/DP: boundary parent of the target dependent on the protected attribute.
    BoundaryParent,
    /// CF/DP: target edge into a boundary child dependent on the protected attribute.
    BoundaryChild,
    /// CF/DP: target edge into a child whose other parent depends on the protected attribute.
    BoundarySpouse,
    DirectDiscrimination,
    IndirectPath,
    UnresolvedPath,
    ProxyPath,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RemovedEdge {
    from: String,
    to: String,
    rationale: Rationale,
}

/// Edges to cut at generation time, each tagged with the rule that demanded it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<RemovedEdge>", into = "Vec<RemovedEdge>")]
pub struct EdgeRemovalSet {
    removed: BTreeMap<(String, String), Rationale>,
}

impl From<Vec<RemovedEdge>> for EdgeRemovalSet {
    fn from(v: Vec<RemovedEdge>) -> Self {
        Self {
            removed: v.into_iter().map(|e| ((e.from, e.to), e.rationale)).collect(),
        }
    }
}

impl From<EdgeRemovalSet> for Vec<RemovedEdge> {
    fn from(s: EdgeRemovalSet) -> Self {
        s.removed
            .into_iter()
            .map(|((from, to), rationale)| RemovedEdge { from, to, rationale })
            .collect()
    }
}

impl EdgeRemovalSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps the first rationale recorded for an edge.
    pub fn insert(&mut self, from: &str, to: &str, rationale: Rationale) {
        self.removed
            .entry((from.to_string(), to.to_string()))
            .or_insert(rationale);
    }

    pub fn contains(&self, from: &str, to: &str) -> bool {
        self.removed.contains_key(&(from.to_string(), to.to_string()))
    }

    pub fn rationale(&self, from: &str, to: &str) -> Option<Rationale> {
        self.removed.get(&(from.to_string(), to.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.removed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.removed.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.removed.keys().map(|(f, t)| (f.as_str(), t.as_str()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, Rationale)> {
        self.removed
            .iter()
            .map(|((f, t), r)| (f.as_str(), t.as_str(), *r))
    }

    /// The bare edge set, without rationale tags.
    pub fn edge_set(&self) -> BTreeSet<(String, String)> {
        self.removed.keys().cloned().collect()
    }
}

/// Edges to remove from `dag` so that data generated along the remaining
/// graph satisfies `spec`, with fairness judged against `dag` itself.
pub fn edges_to_remove(dag: &CausalDag, spec: &FairnessSpec) -> Result<EdgeRemovalSet> {
    edges_to_remove_against(dag, dag, spec)
}

/// Like [`edges_to_remove`], but dependence on the protected attribute is
/// judged in a separate evaluation graph over the same node names.
pub fn edges_to_remove_against(
    training: &CausalDag,
    evaluation: &CausalDag,
    spec: &FairnessSpec,
) -> Result<EdgeRemovalSet> {
    spec.validate(training)?;
    for node in training.nodes() {
        if !evaluation.contains(&node.name) {
            return Err(GraphError::SpecMismatch(format!(
                "evaluation graph lacks node `{}`",
                node.name
            )));
        }
    }
    let a = training.id(&spec.protected)?;
    let y = training.id(&spec.target)?;
    let names = |set: &Option<BTreeSet<String>>| -> Result<BTreeSet<usize>> {
        set.iter().flatten().map(|n| training.id(n)).collect()
    };

    let mut out = EdgeRemovalSet::new();
    match spec.definition {
        FairnessDefinition::Ftu => {
            let name = |i| training.name(i);
            if training.has_edge(a, y) {
                out.insert(name(a), name(y), Rationale::FtuDirectEdge);
            }
            if training.has_edge(y, a) {
                out.insert(name(y), name(a), Rationale::FtuDirectEdge);
            }
            for &c in training.children(y) {
                if training.has_edge(a, c) {
                    out.insert(name(y), name(c), Rationale::FtuSharedChild);
                }
            }
        }
        FairnessDefinition::Dp => {
            boundary_removals(training, evaluation, a, y, &BTreeSet::new(), &mut out)?;
        }
        FairnessDefinition::Cf => {
            let r = names(&spec.explanatory)?;
            boundary_removals(training, evaluation, a, y, &r, &mut out)?;
        }
        FairnessDefinition::NoDirectDiscrimination => {
            if training.has_edge(a, y) {
                out.insert(training.name(a), training.name(y), Rationale::DirectDiscrimination);
            }
        }
        FairnessDefinition::NoIndirectDiscrimination => {
            path_removals(training, a, y, Rationale::IndirectPath, |_| true, &mut out);
        }
        FairnessDefinition::NoUnresolvedDiscrimination => {
            let r = names(&spec.explanatory)?;
            let unresolved = |inner: &[usize]| inner.iter().all(|v| !r.contains(v));
            path_removals(training, a, y, Rationale::UnresolvedPath, unresolved, &mut out);
        }
        FairnessDefinition::NoProxyDiscrimination => {
            let p = names(&spec.proxies)?;
            let via_proxy = |inner: &[usize]| inner.iter().any(|v| p.contains(v));
            path_removals(training, a, y, Rationale::ProxyPath, via_proxy, &mut out);
        }
    }
    Ok(out)
}

/// Cuts every edge that keeps an `A`-dependent node in the Markov boundary of
/// `Y`: edges from dependent parents, and edges into children that are
/// dependent themselves or have a dependent co-parent.
fn boundary_removals(
    training: &CausalDag,
    evaluation: &CausalDag,
    a: usize,
    y: usize,
    explanatory: &BTreeSet<usize>,
    out: &mut EdgeRemovalSet,
) -> Result<()> {
    let eval_a = evaluation.id(training.name(a))?;
    let eval_r: Vec<usize> = explanatory
        .iter()
        .map(|&r| evaluation.id(training.name(r)))
        .collect::<Result<_>>()?;
    let mut cache: HashMap<usize, bool> = HashMap::new();
    let mut dependent = |b: usize| -> Result<bool> {
        if b == a {
            return Ok(true);
        }
        if explanatory.contains(&b) {
            return Ok(false);
        }
        if let Some(&d) = cache.get(&b) {
            return Ok(d);
        }
        let eb = evaluation.id(training.name(b))?;
        let d = !evaluation.d_separated(&[eval_a], &[eb], &eval_r)?;
        cache.insert(b, d);
        Ok(d)
    };

    for &p in training.parents(y) {
        if dependent(p)? {
            out.insert(training.name(p), training.name(y), Rationale::BoundaryParent);
        }
    }
    for &c in training.children(y) {
        if dependent(c)? {
            out.insert(training.name(y), training.name(c), Rationale::BoundaryChild);
            continue;
        }
        for &s in training.parents(c) {
            if s != y && dependent(s)? {
                out.insert(training.name(y), training.name(c), Rationale::BoundarySpouse);
                break;
            }
        }
    }
    Ok(())
}

/// Removes the final edge of every directed `A`-to-`Y` path whose interior
/// nodes satisfy `select`.
fn path_removals(
    dag: &CausalDag,
    a: usize,
    y: usize,
    rationale: Rationale,
    select: impl Fn(&[usize]) -> bool,
    out: &mut EdgeRemovalSet,
) {
    for path in dag.directed_paths(a, y) {
        let inner = &path[1..path.len() - 1];
        if select(inner) {
            let last = path[path.len() - 2];
            out.insert(dag.name(last), dag.name(y), rationale);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Remove,
    Add,
    Reverse,
}

impl fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Remove => "remove",
            Self::Add => "add",
            Self::Reverse => "reverse",
        })
    }
}

const PERTURB_RETRIES: usize = 1000;

/// Randomly removes, adds or reverses `count` edges, keeping the graph acyclic.
///
/// Added edges never run from the guard's protected attribute into the
/// target or one of its ancestors.
pub fn perturb_dag(
    dag: &CausalDag,
    mode: PerturbMode,
    count: usize,
    guard: &FairnessSpec,
    seed: u64,
) -> Result<CausalDag> {
    if count == 0 {
        return Err(GraphError::InvalidQuery("perturbation count must be >= 1".into()));
    }
    let a = dag.id(&guard.protected)?;
    let y = dag.id(&guard.target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = dag.clone();
    // reversed edges, in their new orientation; each edge flips at most once
    let mut flipped = BTreeSet::new();
    for step in 0..count {
        let mut edges = current.edge_names();
        let next = match mode {
            PerturbMode::Remove => {
                if edges.is_empty() {
                    return Err(GraphError::Infeasible(format!(
                        "cannot remove edge {} of {count}: graph has no edges left",
                        step + 1
                    )));
                }
                let i = rng.random_range(0..edges.len());
                edges.remove(i);
                CausalDag::new(current.nodes.clone(), edges)?
            }
            PerturbMode::Add => add_random_edge(&current, a, y, &mut rng).ok_or_else(|| {
                GraphError::Infeasible(format!(
                    "no admissible edge to add after {PERTURB_RETRIES} attempts"
                ))
            })?,
            PerturbMode::Reverse => {
                let (next, edge) = reverse_random_edge(&current, &flipped, &mut rng).ok_or_else(|| {
                    GraphError::Infeasible(format!(
                        "no reversible edge left for reversal {} of {count}",
                        step + 1
                    ))
                })?;
                flipped.insert(edge);
                next
            }
        };
        current = next;
    }
    Ok(current)
}

fn add_random_edge(dag: &CausalDag, a: usize, y: usize, rng: &mut ChaCha8Rng) -> Option<CausalDag> {
    let n = dag.len();
    if n < 2 {
        return None;
    }
    let mut forbidden = dag.ancestors(y);
    forbidden.insert(y);
    for _ in 0..PERTURB_RETRIES {
        let from = rng.random_range(0..n);
        let to = rng.random_range(0..n);
        if from == to || dag.has_edge(from, to) || dag.has_edge(to, from) {
            continue;
        }
        if from == a && forbidden.contains(&to) {
            continue;
        }
        if let Ok(next) = dag.with_edge(dag.name(from), dag.name(to)) {
            return Some(next);
        }
    }
    None
}

fn reverse_random_edge(
    dag: &CausalDag,
    already: &BTreeSet<(String, String)>,
    rng: &mut ChaCha8Rng,
) -> Option<(CausalDag, (String, String))> {
    let edges = dag.edge_names();
    let candidates: Vec<&(String, String)> = edges.iter().filter(|e| !already.contains(*e)).collect();
    for _ in 0..PERTURB_RETRIES {
        let (from, to) = *candidates.choose(rng)?;
        let flipped: Vec<(String, String)> = edges
            .iter()
            .map(|(f, t)| {
                if f == from && t == to {
                    (t.clone(), f.clone())
                } else {
                    (f.clone(), t.clone())
                }
            })
            .collect();
        if let Ok(next) = CausalDag::new(dag.nodes.clone(), flipped) {
            return Some((next, (to.clone(), from.clone())));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dag(nodes: &[&str], edges: &[(&str, &str)]) -> CausalDag {
        CausalDag::new(
            nodes
                .iter()
                .map(|n| NodeSpec::new(*n, NodeKind::Continuous))
                .collect(),
            edges.to_vec(),
        )
        .unwrap()
    }

    fn edge_set(pairs: &[(&str, &str)]) -> BTreeSet<(String, String)> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn chain_order_is_forced() {
        let g = dag(&["Y", "B", "A"], &[("A", "B"), ("B", "Y")]);
        assert_eq!(g.topological_names(), ["A", "B", "Y"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let g = dag(&["B", "A"], &[]);
        assert_eq!(g.topological_names(), ["A", "B"]);
    }

    #[test]
    fn cycle_is_reported_with_members() {
        let err = CausalDag::new(
            ["A", "B", "C"]
                .iter()
                .map(|n| NodeSpec::new(*n, NodeKind::Binary))
                .collect(),
            vec![("A", "B"), ("B", "C"), ("C", "A")],
        )
        .unwrap_err();
        match err {
            GraphError::Cycle(c) => {
                assert_eq!(c.len(), 4);
                assert_eq!(c.first(), c.last());
                for n in ["A", "B", "C"] {
                    assert!(c.iter().any(|x| x == n));
                }
            }
            other => panic!("expected cycle, got {other}"),
        }
    }

    #[test]
    fn rejects_bad_structure() {
        let nodes = || vec![NodeSpec::new("A", NodeKind::Binary), NodeSpec::new("B", NodeKind::Binary)];
        assert!(matches!(
            CausalDag::new(nodes(), vec![("A", "A")]),
            Err(GraphError::SelfLoop(_))
        ));
        assert!(matches!(
            CausalDag::new(nodes(), vec![("A", "B"), ("A", "B")]),
            Err(GraphError::DuplicateEdge(..))
        ));
        assert!(matches!(
            CausalDag::new(nodes(), vec![("A", "Q")]),
            Err(GraphError::UnknownNode(_))
        ));
        let mut dup = nodes();
        dup.push(NodeSpec::new("A", NodeKind::Continuous));
        assert!(matches!(
            CausalDag::new(dup, Vec::<(&str, &str)>::new()),
            Err(GraphError::DuplicateNode(_))
        ));
    }

    #[test]
    fn json_is_strict() {
        let ok = r#"{"nodes":[{"name":"A","kind":"binary"},{"name":"Y","kind":"continuous"}],"edges":[["A","Y"]]}"#;
        let g = CausalDag::from_json_str(ok).unwrap();
        assert_eq!(g.edge_count(), 1);
        let back = CausalDag::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(g, back);

        let extra = r#"{"nodes":[],"edges":[],"weights":[]}"#;
        assert!(CausalDag::from_json_str(extra).is_err());
        let bad_kind = r#"{"nodes":[{"name":"A","kind":"ordinal"}],"edges":[]}"#;
        assert!(CausalDag::from_json_str(bad_kind).is_err());
    }

    #[test]
    fn chain_and_collider_rules() {
        let chain = dag(&["A", "B", "Y"], &[("A", "B"), ("B", "Y")]);
        assert!(chain.d_separated_names(&["A"], &["Y"], &["B"]).unwrap());
        assert!(!chain.d_separated_names(&["A"], &["Y"], &[]).unwrap());

        let collider = dag(&["A", "C", "Y"], &[("A", "C"), ("Y", "C")]);
        assert!(collider.d_separated_names(&["A"], &["Y"], &[]).unwrap());
        assert!(!collider.d_separated_names(&["A"], &["Y"], &["C"]).unwrap());
    }

    #[test]
    fn collider_descendant_opens_path() {
        let g = dag(&["A", "C", "D", "Y"], &[("A", "C"), ("Y", "C"), ("C", "D")]);
        assert!(!g.d_separated_names(&["A"], &["Y"], &["D"]).unwrap());
    }

    #[test]
    fn conditioned_nodes_are_separated_by_convention() {
        let g = dag(&["A", "B"], &[("A", "B")]);
        assert!(g.d_separated_names(&["A"], &["B"], &["B"]).unwrap());
        assert!(matches!(
            g.d_separated_names(&["A"], &["A"], &[]),
            Err(GraphError::InvalidQuery(_))
        ));
    }

    #[test]
    fn markov_boundary_examples() {
        let g = dag(&["A", "Y", "B"], &[("A", "Y"), ("Y", "B")]);
        assert_eq!(
            g.markov_boundary_names("Y").unwrap(),
            ["A", "B"].iter().map(|s| s.to_string()).collect()
        );
        let g = dag(&["Y", "C", "A"], &[("Y", "C"), ("A", "C")]);
        assert_eq!(
            g.markov_boundary_names("Y").unwrap(),
            ["A", "C"].iter().map(|s| s.to_string()).collect()
        );
        assert!(g.markov_boundary_names("Q").is_err());
    }

    #[test]
    fn directed_path_enumeration() {
        let g = dag(&["A", "Y"], &[("A", "Y")]);
        assert_eq!(g.directed_paths(0, 1), vec![vec![0, 1]]);
        let g = dag(&["A", "B", "Y"], &[("A", "B"), ("B", "Y"), ("A", "Y")]);
        let mut paths = g.directed_paths(0, 2);
        paths.sort();
        assert_eq!(paths, vec![vec![0, 1, 2], vec![0, 2]]);
        assert!(g.directed_paths(2, 0).is_empty());
    }

    #[test]
    fn ftu_removes_direct_edge() {
        let g = dag(&["A", "Y"], &[("A", "Y")]);
        let spec = FairnessSpec::new(FairnessDefinition::Ftu, "A", "Y");
        let r = edges_to_remove(&g, &spec).unwrap();
        assert_eq!(r.edge_set(), edge_set(&[("A", "Y")]));
        assert_eq!(r.rationale("A", "Y"), Some(Rationale::FtuDirectEdge));
    }

    #[test]
    fn ftu_cuts_target_side_of_shared_child() {
        let g = dag(&["A", "Y", "C"], &[("A", "C"), ("Y", "C"), ("Y", "A")]);
        let spec = FairnessSpec::new(FairnessDefinition::Ftu, "A", "Y");
        let r = edges_to_remove(&g, &spec).unwrap();
        assert_eq!(r.edge_set(), edge_set(&[("Y", "A"), ("Y", "C")]));
    }

    #[test]
    fn dp_hand_example() {
        let g = dag(
            &["A", "B", "C", "Y"],
            &[("A", "C"), ("Y", "C"), ("A", "B"), ("B", "Y")],
        );
        let spec = FairnessSpec::new(FairnessDefinition::Dp, "A", "Y");
        let r = edges_to_remove(&g, &spec).unwrap();
        assert_eq!(r.edge_set(), edge_set(&[("B", "Y"), ("Y", "C")]));
    }

    #[test]
    fn cf_respects_explanatory_set() {
        // A -> B -> Y with B explanatory: nothing to remove
        let g = dag(&["A", "B", "Y"], &[("A", "B"), ("B", "Y")]);
        let cf = FairnessSpec::new(FairnessDefinition::Cf, "A", "Y").with_explanatory(["B"]);
        assert!(edges_to_remove(&g, &cf).unwrap().is_empty());
        let dp = FairnessSpec::new(FairnessDefinition::Dp, "A", "Y");
        assert_eq!(edges_to_remove(&g, &dp).unwrap().edge_set(), edge_set(&[("B", "Y")]));
    }

    #[test]
    fn spouse_dependence_cuts_child_edge() {
        // Y -> C <- A with C explanatory: A is a spouse, so Y -> C must go
        let g = dag(&["A", "C", "Y"], &[("A", "C"), ("Y", "C")]);
        let cf = FairnessSpec::new(FairnessDefinition::Cf, "A", "Y").with_explanatory(["C"]);
        let r = edges_to_remove(&g, &cf).unwrap();
        assert_eq!(r.edge_set(), edge_set(&[("Y", "C")]));
        assert_eq!(r.rationale("Y", "C"), Some(Rationale::BoundarySpouse));
    }

    #[test]
    fn path_based_definitions() {
        let g = dag(
            &["A", "B", "P", "Y"],
            &[("A", "Y"), ("A", "B"), ("B", "Y"), ("A", "P"), ("P", "Y")],
        );
        let dd = FairnessSpec::new(FairnessDefinition::NoDirectDiscrimination, "A", "Y");
        assert_eq!(edges_to_remove(&g, &dd).unwrap().edge_set(), edge_set(&[("A", "Y")]));

        let id = FairnessSpec::new(FairnessDefinition::NoIndirectDiscrimination, "A", "Y");
        assert_eq!(
            edges_to_remove(&g, &id).unwrap().edge_set(),
            edge_set(&[("A", "Y"), ("B", "Y"), ("P", "Y")])
        );

        let ud = FairnessSpec::new(FairnessDefinition::NoUnresolvedDiscrimination, "A", "Y")
            .with_explanatory(["B"]);
        assert_eq!(
            edges_to_remove(&g, &ud).unwrap().edge_set(),
            edge_set(&[("A", "Y"), ("P", "Y")])
        );

        let pd = FairnessSpec::new(FairnessDefinition::NoProxyDiscrimination, "A", "Y")
            .with_proxies(["P"]);
        assert_eq!(edges_to_remove(&g, &pd).unwrap().edge_set(), edge_set(&[("P", "Y")]));
    }

    #[test]
    fn spec_validation() {
        let g = dag(&["A", "B", "Y"], &[("A", "B"), ("B", "Y")]);
        let same = FairnessSpec::new(FairnessDefinition::Ftu, "A", "A");
        assert!(edges_to_remove(&g, &same).is_err());
        let missing_r = FairnessSpec::new(FairnessDefinition::Cf, "A", "Y");
        assert!(edges_to_remove(&g, &missing_r).is_err());
        let stray_r = FairnessSpec::new(FairnessDefinition::Dp, "A", "Y").with_explanatory(["B"]);
        assert!(edges_to_remove(&g, &stray_r).is_err());
        let r_has_target =
            FairnessSpec::new(FairnessDefinition::Cf, "A", "Y").with_explanatory(["Y"]);
        assert!(edges_to_remove(&g, &r_has_target).is_err());
        let unknown = FairnessSpec::new(FairnessDefinition::Ftu, "Q", "Y");
        assert!(matches!(
            edges_to_remove(&g, &unknown),
            Err(GraphError::SpecMismatch(_))
        ));
    }

    #[test]
    fn removal_set_json_carries_rationale() {
        let g = dag(&["A", "Y"], &[("A", "Y")]);
        let r = edges_to_remove(&g, &FairnessSpec::new(FairnessDefinition::Ftu, "A", "Y")).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"[{"from":"A","to":"Y","rationale":"ftu_direct_edge"}]"#);
        let back: EdgeRemovalSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn perturb_remove_only_edge() {
        let g = dag(&["A", "Y"], &[("A", "Y")]);
        let guard = FairnessSpec::new(FairnessDefinition::Ftu, "A", "Y");
        let out = perturb_dag(&g, PerturbMode::Remove, 1, &guard, 3).unwrap();
        assert_eq!(out.edge_count(), 0);
        assert!(matches!(
            perturb_dag(&g, PerturbMode::Remove, 2, &guard, 3),
            Err(GraphError::Infeasible(_))
        ));
    }

    #[test]
    fn perturb_add_respects_guard() {
        let g = dag(&["A", "B", "C", "Y"], &[("B", "Y")]);
        let guard = FairnessSpec::new(FairnessDefinition::Ftu, "A", "Y");
        for seed in 0..200 {
            let out = perturb_dag(&g, PerturbMode::Add, 1, &guard, seed).unwrap();
            let a = out.id("A").unwrap();
            assert!(!out.has_edge(a, out.id("B").unwrap()));
            assert!(!out.has_edge(a, out.id("Y").unwrap()));
        }
    }

    #[test]
    fn perturb_is_seeded() {
        let g = dag(
            &["A", "B", "C", "D", "Y"],
            &[("A", "B"), ("B", "C"), ("C", "Y"), ("D", "Y"), ("A", "D")],
        );
        let guard = FairnessSpec::new(FairnessDefinition::Ftu, "A", "Y");
        for mode in [PerturbMode::Remove, PerturbMode::Add, PerturbMode::Reverse] {
            let x = perturb_dag(&g, mode, 2, &guard, 11).unwrap();
            let y = perturb_dag(&g, mode, 2, &guard, 11).unwrap();
            assert_eq!(x, y);
            assert_ne!(x, g);
        }
    }
}
