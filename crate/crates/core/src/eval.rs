//! Data-quality and downstream-fairness metrics.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::NodeKind;
use crate::nn::{sigmoid, softplus, Activation, Adam, AdamConfig, Mlp};
use crate::table::{Table, TableError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("column `{0}` must be binary")]
    NotBinary(String),
    #[error("target `{0}` has a single class")]
    DegenerateLabels(String),
    #[error("no rows with `{column}` = {value}")]
    EmptyGroup { column: String, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Anything that maps feature rows to a positive-class probability.
pub trait Predictor {
    /// Feature names, in the column order expected by [`Predictor::predict_rows`].
    fn features(&self) -> &[String];

    /// Probabilities for rows given in raw units, one column per feature.
    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64>;

    fn predict_proba(&self, table: &Table) -> Result<Array1<f64>> {
        let names: Vec<&str> = self.features().iter().map(String::as_str).collect();
        let x = table.select_columns(&names)?;
        Ok(self.predict_rows(x.data().view()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after `patience` epochs without the loss improving by `tolerance`.
    pub tolerance: f64,
    pub patience: usize,
    pub l2: f64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            hidden_units: 100,
            learning_rate: 1e-3,
            batch_size: 200,
            max_epochs: 200,
            tolerance: 1e-4,
            patience: 10,
            l2: 1e-4,
        }
    }
}

/// One-hidden-layer ReLU network with a sigmoid output, trained on
/// standardized inputs with cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    features: Vec<String>,
    mean: Array1<f64>,
    std: Array1<f64>,
    net: Mlp,
}

impl Predictor for Classifier {
    fn features(&self) -> &[String] {
        &self.features
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let z = (&x - &self.mean) / &self.std;
        self.net.forward(z.view()).column(0).mapv(sigmoid)
    }
}

fn binary_labels(table: &Table, target: &str) -> Result<Array1<f64>> {
    if table.kind(target)? != NodeKind::Binary {
        return Err(EvalError::NotBinary(target.to_string()));
    }
    let y = table.column(target)?.to_owned();
    let positives = y.sum();
    if positives == 0.0 || positives == y.len() as f64 {
        return Err(EvalError::DegenerateLabels(target.to_string()));
    }
    Ok(y)
}

/// Trains a classifier for `target` on every other column of `train`.
pub fn train_downstream(train: &Table, target: &str, config: &DownstreamConfig, seed: u64) -> Result<Classifier> {
    let y = binary_labels(train, target)?;
    let features: Vec<String> = train.names().filter(|n| *n != target).map(String::from).collect();
    if features.is_empty() {
        return Err(EvalError::InvalidArgument("no feature columns".into()));
    }
    let names: Vec<&str> = features.iter().map(String::as_str).collect();
    let x = train.select_columns(&names)?.data().clone();
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    let z = (&x - &mean) / &std;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(
        &[features.len(), config.hidden_units, 1],
        Activation::Relu,
        Activation::Identity,
        &mut rng,
    );
    let mut opt = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        l2: config.l2,
        ..AdamConfig::default()
    });
    let batch = config.batch_size.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut best, mut stale) = (f64::INFINITY, 0);
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(batch) {
            let xb = z.select(Axis(0), rows);
            let cache = net.forward_train(xb.view());
            let scale = 1.0 / rows.len() as f64;
            let mut g = Array2::zeros((rows.len(), 1));
            for (i, (&l, &r)) in cache.output().column(0).iter().zip(rows).enumerate() {
                let t = y[r];
                total += t * softplus(-l) + (1.0 - t) * softplus(l);
                g[[i, 0]] = (sigmoid(l) - t) * scale;
            }
            let mut grad = net.zero_grad();
            net.backward(&cache, g, Some(&mut grad));
            opt.step(net.slots(&grad));
        }
        let loss = total / n as f64;
        if loss > best - config.tolerance {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(loss);
    }
    Ok(Classifier {
        features,
        mean,
        std,
        net,
    })
}

fn binary_column(table: &Table, column: &str) -> Result<usize> {
    let j = table.column_index(column)?;
    if table.schema()[j].kind != NodeKind::Binary {
        return Err(EvalError::NotBinary(column.to_string()));
    }
    Ok(j)
}

/// Per-row `|p(row, A=0) - p(row, A=1)|`. Zero when the predictor does not
/// read the protected column.
pub fn ftu_gaps<P: Predictor + ?Sized>(predictor: &P, table: &Table, protected: &str) -> Result<Array1<f64>> {
    binary_column(table, protected)?;
    let Some(slot) = predictor.features().iter().position(|f| f == protected) else {
        return Ok(Array1::zeros(table.nrows()));
    };
    let names: Vec<&str> = predictor.features().iter().map(String::as_str).collect();
    let mut x = table.select_columns(&names)?.data().clone();
    x.column_mut(slot).fill(0.0);
    let p0 = predictor.predict_rows(x.view());
    x.column_mut(slot).fill(1.0);
    let p1 = predictor.predict_rows(x.view());
    Ok((p0 - p1).mapv(f64::abs))
}

/// Mean absolute change in predicted probability when only the protected
/// attribute is flipped between its two values.
pub fn ftu_metric<P: Predictor + ?Sized>(predictor: &P, table: &Table, protected: &str) -> Result<f64> {
    let gaps = ftu_gaps(predictor, table, protected)?;
    Ok(gaps.mean().unwrap_or(0.0))
}

/// `|P(Ŷ=1 | A=0) - P(Ŷ=1 | A=1)|` with `Ŷ = [p >= threshold]`.
pub fn dp_metric<P: Predictor + ?Sized>(
    predictor: &P,
    table: &Table,
    protected: &str,
    threshold: f64,
) -> Result<f64> {
    let a = binary_column(table, protected)?;
    let p = predictor.predict_proba(table)?;
    let mut counts = [[0usize; 2]; 2];
    for (&g, &pr) in table.data().column(a).iter().zip(p.iter()) {
        counts[g as usize][usize::from(pr >= threshold)] += 1;
    }
    let mut rates = [0.0; 2];
    for g in 0..2 {
        let total = counts[g][0] + counts[g][1];
        if total == 0 {
            return Err(EvalError::EmptyGroup {
                column: protected.to_string(),
                value: g as f64,
            });
        }
        rates[g] = counts[g][1] as f64 / total as f64;
    }
    Ok((rates[0] - rates[1]).abs())
}

/// Area under the ROC curve by the rank-sum statistic, ties averaged.
pub fn auroc_scores(scores: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::InvalidArgument("scores and labels differ in length".into()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(EvalError::InvalidArgument(format!("score {s} cannot be ranked")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; the tied block i..=j shares their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1.0 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l == 1.0).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(EvalError::InvalidArgument("AUROC needs both classes".into()));
    }
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

pub fn auroc<P: Predictor + ?Sized>(predictor: &P, table: &Table, target: &str) -> Result<f64> {
    let y = binary_labels(table, target)
        .map_err(|e| match e {
            EvalError::DegenerateLabels(t) => EvalError::InvalidArgument(format!("`{t}` has a single class")),
            other => other,
        })?;
    let p = predictor.predict_proba(table)?;
    auroc_scores(p.view(), y.view())
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each row to its k-th nearest other row.
fn knn_radii(x: &Array2<f64>, k: usize) -> Vec<f64> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..x.nrows())
                .filter(|&j| j != i)
                .map(|j| sq_dist(x.row(i), x.row(j)))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Fraction of `probe` rows inside some `support` row's k-NN ball.
fn coverage(probe: &Array2<f64>, support: &Array2<f64>, radii: &[f64]) -> f64 {
    let inside = (0..probe.nrows())
        .into_par_iter()
        .filter(|&i| {
            (0..support.nrows()).any(|j| sq_dist(probe.row(i), support.row(j)) <= radii[j])
        })
        .count();
    inside as f64 / probe.nrows() as f64
}

/// k-NN manifold precision and recall. Both tables are standardized with
/// the real table's column statistics before Euclidean distances.
pub fn precision_recall(real: &Table, synth: &Table, k: usize) -> Result<(f64, f64)> {
    let real_names: Vec<&str> = real.names().collect();
    let synth = synth.select_columns(&real_names)?;
    if synth.ncols() != real.ncols() || synth.schema() != real.schema() {
        return Err(TableError::SchemaMismatch("real and synthetic schemas differ".into()).into());
    }
    if k == 0 || k >= real.nrows() || k >= synth.nrows() {
        return Err(EvalError::InvalidArgument(format!(
            "k = {k} needs 1 <= k < table size ({} real, {} synthetic rows)",
            real.nrows(),
            synth.nrows()
        )));
    }
    let mean = real.data().mean_axis(Axis(0)).expect("non-empty");
    let std = real.data().std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    let r = (real.data() - &mean) / &std;
    let s = (synth.data() - &mean) / &std;
    let real_radii = knn_radii(&r, k);
    let synth_radii = knn_radii(&s, k);
    Ok((coverage(&s, &r, &real_radii), coverage(&r, &s, &synth_radii)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub auroc: f64,
    pub ftu: f64,
    /// Largest single-row FTU gap, a secondary diagnostic.
    pub ftu_max: f64,
    pub dp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub fingerprint: String,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub precision: Summary,
    pub recall: Summary,
    pub auroc: Summary,
    pub ftu: Summary,
    pub dp: Summary,
    pub runs: Vec<RunMetrics>,
}

impl EvalReport {
    pub fn aggregate(variant: &str, fingerprint: &str, runs: Vec<RunMetrics>) -> Self {
        assert!(!runs.is_empty(), "a report needs at least one run");
        let col = |f: fn(&RunMetrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            variant: variant.to_string(),
            fingerprint: fingerprint.to_string(),
            n_runs: runs.len(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            precision: col(|r| r.precision),
            recall: col(|r| r.recall),
            auroc: col(|r| r.auroc),
            ftu: col(|r| r.ftu),
            dp: col(|r| r.dp),
            runs,
        }
    }
}
