//! Independent oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use decaf::graph::{CausalDag, FairnessDefinition, FairnessSpec, NodeKind, NodeSpec};
use decaf::sem::{Mechanism, SemSpec};
use decaf::table::Table;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn node_name(i: usize) -> String {
    format!("V{i}")
}

/// Random DAG: nodes get a hidden random order and each forward pair is an
/// edge with probability `p`.
pub fn random_dag(rng: &mut impl Rng, n: usize, p: f64) -> CausalDag {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let nodes = (0..n)
        .map(|i| {
            let kind = if rng.random_bool(0.5) {
                NodeKind::Binary
            } else {
                NodeKind::Continuous
            };
            NodeSpec::new(node_name(i), kind)
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((node_name(order[a]), node_name(order[b])));
            }
        }
    }
    CausalDag::new(nodes, edges).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn adjacency(dag: &CausalDag) -> Vec<Vec<bool>> {
    let n = dag.len();
    let mut adj = vec![vec![false; n]; n];
    for (a, b) in dag.edges() {
        adj[a][b] = true;
    }
    adj
}

fn descendants_by_search(adj: &[Vec<bool>], v: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut stack = vec![v];
    while let Some(u) = stack.pop() {
        for (w, &e) in adj[u].iter().enumerate() {
            if e && out.insert(w) {
                stack.push(w);
            }
        }
    }
    out
}

/// d-separation by enumerating every simple path of the skeleton and
/// checking each interior node against the collider rules.
pub fn brute_force_d_separated(dag: &CausalDag, xs: &[usize], ys: &[usize], zs: &[usize]) -> bool {
    let adj = adjacency(dag);
    let n = dag.len();
    let z: BTreeSet<usize> = zs.iter().copied().collect();
    let xs: Vec<usize> = xs.iter().copied().filter(|x| !z.contains(x)).collect();
    let ys: BTreeSet<usize> = ys.iter().copied().filter(|y| !z.contains(y)).collect();
    let collider_open: Vec<bool> = (0..n)
        .map(|v| z.contains(&v) || descendants_by_search(&adj, v).iter().any(|d| z.contains(d)))
        .collect();

    fn open_path_exists(
        adj: &[Vec<bool>],
        path: &mut Vec<usize>,
        ys: &BTreeSet<usize>,
        z: &BTreeSet<usize>,
        collider_open: &[bool],
    ) -> bool {
        let v = *path.last().unwrap();
        if path.len() > 1 && ys.contains(&v) {
            return true;
        }
        for w in 0..adj.len() {
            if !(adj[v][w] || adj[w][v]) || path.contains(&w) {
                continue;
            }
            if path.len() >= 2 {
                let u = path[path.len() - 2];
                let collider = adj[u][v] && adj[w][v];
                let blocked = if collider { !collider_open[v] } else { z.contains(&v) };
                if blocked {
                    continue;
                }
            }
            path.push(w);
            let found = open_path_exists(adj, path, ys, z, collider_open);
            path.pop();
            if found {
                return true;
            }
        }
        false
    }

    !xs.iter().any(|&x| open_path_exists(&adj, &mut vec![x], &ys, &z, &collider_open))
}

/// Number of directed paths from `a` to `b` as the sum of adjacency-matrix
/// powers.
pub fn path_count_by_matrix_powers(dag: &CausalDag, a: usize, b: usize) -> u64 {
    let n = dag.len();
    let adj = Array2::from_shape_fn((n, n), |(i, j)| u64::from(dag.has_edge(i, j)));
    let mut power = adj.clone();
    let mut total = 0;
    for _ in 0..n {
        total += power[[a, b]];
        power = power.dot(&adj);
    }
    total
}

/// A random spec of the given definition on `dag`, or `None` when the graph
/// has fewer than two nodes.
pub fn random_spec(rng: &mut impl Rng, dag: &CausalDag, definition: FairnessDefinition) -> Option<FairnessSpec> {
    if dag.len() < 2 {
        return None;
    }
    let mut ids: Vec<usize> = (0..dag.len()).collect();
    ids.shuffle(rng);
    let (a, y) = (dag.name(ids[0]), dag.name(ids[1]));
    let rest: Vec<String> = ids[2..].iter().map(|&i| dag.name(i).to_string()).collect();
    let mut spec = FairnessSpec::new(definition, a, y);
    if definition.needs_explanatory() {
        spec.explanatory = Some(rest.iter().filter(|_| rng.random_bool(0.4)).cloned().collect());
    }
    if definition.needs_proxies() {
        spec.proxies = Some(rest.iter().filter(|_| rng.random_bool(0.4)).cloned().collect());
    }
    Some(spec)
}

fn weights(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

pub fn linear(pairs: &[(&str, f64)], intercept: f64, sigma: f64) -> Mechanism {
    Mechanism::Linear {
        weights: weights(pairs),
        intercept,
        sigma,
    }
}

pub fn logistic(pairs: &[(&str, f64)], intercept: f64) -> Mechanism {
    Mechanism::Logistic {
        weights: weights(pairs),
        intercept,
    }
}

pub fn sem(nodes: &[(&str, NodeKind)], mechanisms: Vec<(&str, Mechanism)>) -> SemSpec {
    let specs = nodes.iter().map(|(n, k)| NodeSpec::new(*n, *k)).collect();
    let mut edges = Vec::new();
    for (child, m) in &mechanisms {
        let w = match m {
            Mechanism::Linear { weights, .. } | Mechanism::Logistic { weights, .. } => weights,
        };
        edges.extend(w.keys().map(|p| (p.clone(), child.to_string())));
    }
    let dag = CausalDag::new(specs, edges).unwrap();
    SemSpec::new(dag, mechanisms.into_iter().map(|(k, m)| (k.to_string(), m)).collect()).unwrap()
}

/// Six continuous nodes, linear-Gaussian.
pub fn six_node_linear_sem() -> SemSpec {
    use NodeKind::Continuous as C;
    sem(
        &[("X1", C), ("X2", C), ("X3", C), ("X4", C), ("X5", C), ("X6", C)],
        vec![
            ("X1", linear(&[], 0.0, 1.0)),
            ("X2", linear(&[], 1.0, 0.5)),
            ("X3", linear(&[("X1", 0.8), ("X2", -0.6)], 0.0, 0.6)),
            ("X4", linear(&[("X3", 1.2)], 0.5, 0.5)),
            ("X5", linear(&[("X1", -0.7)], 0.0, 0.7)),
            ("X6", linear(&[("X4", 0.5), ("X5", 0.8)], -1.0, 0.4)),
        ],
    )
}

/// Six nodes: binary protected `A`, covariates `X1`, `X2`, mediators
/// `M1 -> M2`, and a binary target `Y` with a direct edge from `A` of
/// weight `direct`.
pub fn fairness_sem(direct: f64) -> SemSpec {
    use NodeKind::{Binary as B, Continuous as C};
    sem(
        &[("A", B), ("X1", C), ("X2", C), ("M1", C), ("M2", C), ("Y", B)],
        vec![
            ("A", logistic(&[], 0.0)),
            ("X1", linear(&[], 0.0, 1.0)),
            ("X2", linear(&[("X1", 0.6)], 0.0, 0.8)),
            ("M1", linear(&[("A", 0.8), ("X1", 0.5)], 0.0, 0.7)),
            ("M2", linear(&[("M1", 0.7)], 0.0, 0.7)),
            ("Y", logistic(&[("A", direct), ("M2", 0.8), ("X2", 1.2)], -0.3)),
        ],
    )
}

/// `Y` depends on `A` only through the direct edge, which carries no
/// weight; covariates `X1`, `X2`, `X3` carry the signal.
pub fn sweep_sem() -> SemSpec {
    use NodeKind::{Binary as B, Continuous as C};
    sem(
        &[("A", B), ("X1", C), ("X2", C), ("X3", C), ("Y", B)],
        vec![
            ("A", logistic(&[], 0.0)),
            ("X1", linear(&[], 0.0, 1.0)),
            ("X2", linear(&[("X1", 0.5)], 0.0, 0.8)),
            ("X3", linear(&[], 0.0, 1.0)),
            ("Y", logistic(&[("A", 0.0), ("X1", 1.0), ("X2", 1.0), ("X3", 0.8)], 0.5)),
        ],
    )
}

/// `A` drives a strong proxy `P` that feeds `Y`; `X` is an independent
/// covariate.
pub fn confounded_sem() -> SemSpec {
    use NodeKind::{Binary as B, Continuous as C};
    sem(
        &[("A", B), ("P", C), ("X", C), ("Y", B)],
        vec![
            ("A", logistic(&[], 0.0)),
            ("P", linear(&[("A", 2.0)], -1.0, 0.6)),
            ("X", linear(&[], 0.0, 1.0)),
            ("Y", logistic(&[("A", 0.5), ("P", 1.5), ("X", 1.0)], 0.0)),
        ],
    )
}

pub fn column_means(t: &Table) -> Vec<f64> {
    t.data().mean_axis(Axis(0)).unwrap().to_vec()
}

pub fn correlation_matrix(t: &Table) -> Array2<f64> {
    let x = t.data();
    let n = x.nrows() as f64;
    let centered = x - &x.mean_axis(Axis(0)).unwrap();
    let cov = centered.t().dot(&centered) / n;
    let sd = cov.diag().mapv(f64::sqrt);
    Array2::from_shape_fn(cov.raw_dim(), |(i, j)| cov[[i, j]] / (sd[i] * sd[j]))
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Average ranks, ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}
