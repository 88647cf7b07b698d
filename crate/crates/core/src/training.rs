//! Preprocessing and adversarial fitting of the sequential generator.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::generator::network::binary_draw;
use crate::generator::{GeneratorError, GeneratorModel, GeneratorNet, Mechanisms};
use crate::graph::{CausalDag, NodeKind, NodeSpec};
use crate::nn::{softplus, sigmoid, Activation, Adam, AdamConfig, Mlp};
use crate::table::{Table, TableError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("continuous column `{0}` has zero variance")]
    DegenerateColumn(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(
        "discriminator loss stayed below {threshold} for all of epoch {epoch} \
         (max {max_d_loss:.3e}, mean generator loss {g_loss:.3})"
    )]
    Diverged {
        epoch: usize,
        threshold: f64,
        max_d_loss: f64,
        g_loss: f64,
    },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Standardization statistics of one column. Binary columns keep mean 0
/// and std 1 so that the transform leaves them untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub kind: NodeKind,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    columns: Vec<ColumnStats>,
}

impl Preprocessing {
    pub fn identity(schema: &[NodeSpec]) -> Self {
        Self {
            columns: schema
                .iter()
                .map(|c| ColumnStats {
                    name: c.name.clone(),
                    kind: c.kind,
                    mean: 0.0,
                    std: 1.0,
                })
                .collect(),
        }
    }

    pub fn from_columns(columns: Vec<ColumnStats>) -> Result<Self> {
        for c in &columns {
            if !(c.std > 0.0) || !c.mean.is_finite() || !c.std.is_finite() {
                return Err(TrainError::DegenerateColumn(c.name.clone()));
            }
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[ColumnStats] {
        &self.columns
    }

    pub fn transform_value(&self, col: usize, v: f64) -> f64 {
        let c = &self.columns[col];
        (v - c.mean) / c.std
    }

    pub fn invert_value(&self, col: usize, v: f64) -> f64 {
        let c = &self.columns[col];
        v * c.std + c.mean
    }

    fn check_schema(&self, table: &Table) -> Result<()> {
        let same = table.ncols() == self.columns.len()
            && table
                .schema()
                .iter()
                .zip(&self.columns)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind);
        if same {
            Ok(())
        } else {
            Err(TableError::SchemaMismatch("table does not match preprocessing statistics".into()).into())
        }
    }

    pub fn transform(&self, table: &Table) -> Result<Table> {
        self.check_schema(table)?;
        let mut data = table.data().clone();
        for (j, mut col) in data.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| self.transform_value(j, v));
        }
        Ok(Table::new(table.schema().to_vec(), data)?)
    }

    pub fn invert(&self, table: &Table) -> Result<Table> {
        self.check_schema(table)?;
        let mut data = table.data().clone();
        for (j, mut col) in data.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| self.invert_value(j, v));
        }
        Ok(Table::new(table.schema().to_vec(), data)?)
    }

    /// Maps generator output back to raw units: continuous columns are
    /// de-standardized, binary columns already hold 0/1 draws.
    pub(crate) fn invert_generated(&self, mut data: Array2<f64>, schema: &[NodeSpec]) -> Result<Table, TableError> {
        for (j, mut col) in data.columns_mut().into_iter().enumerate() {
            if self.columns[j].kind == NodeKind::Continuous {
                col.mapv_inplace(|v| self.invert_value(j, v));
            }
        }
        Table::new(schema.to_vec(), data)
    }
}

/// Standardizes continuous columns to zero mean and unit (population)
/// variance; binary columns pass through.
pub fn preprocess(data: &Table) -> Result<(Table, Preprocessing)> {
    let n = data.nrows() as f64;
    let mut columns = Vec::with_capacity(data.ncols());
    for (spec, col) in data.schema().iter().zip(data.data().columns()) {
        let (mean, std) = match spec.kind {
            NodeKind::Binary => (0.0, 1.0),
            NodeKind::Continuous => {
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                if !(var > 0.0) {
                    return Err(TrainError::DegenerateColumn(spec.name.clone()));
                }
                (mean, var.sqrt())
            }
        };
        columns.push(ColumnStats {
            name: spec.name.clone(),
            kind: spec.kind,
            mean,
            std,
        });
    }
    let stats = Preprocessing { columns };
    Ok((stats.transform(data)?, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// First-moment decay of both optimizers.
    pub beta1: f64,
    /// Discriminator updates per generator update.
    pub discriminator_steps: usize,
    pub hidden_layers: usize,
    /// Hidden width; `None` means twice the number of columns.
    pub hidden_width: Option<usize>,
    pub batch_size: usize,
    /// Coefficient of the L2 weight penalty on both networks.
    pub regularization: f64,
    /// Training aborts when every discriminator loss of an epoch is below this.
    pub collapse_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            beta1: 0.5,
            discriminator_steps: 10,
            hidden_layers: 2,
            hidden_width: None,
            batch_size: 64,
            regularization: 1e-4,
            collapse_threshold: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1 must lie in [0, 1)");
        }
        if self.discriminator_steps == 0 {
            return bad("discriminator_steps must be >= 1");
        }
        if self.hidden_layers == 0 {
            return bad("hidden_layers must be >= 1");
        }
        if self.hidden_width == Some(0) {
            return bad("hidden_width must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.regularization >= 0.0) {
            return bad("regularization must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Generator forward pass on a batch of noise, keeping every node's cache.
fn sweep(
    net: &GeneratorNet,
    dag: &CausalDag,
    noise: &Array2<f64>,
) -> (Array2<f64>, Vec<Option<crate::generator::network::NodeCache>>) {
    let b = noise.nrows();
    let mut out = Array2::<f64>::zeros((b, dag.len()));
    let mut caches: Vec<_> = (0..dag.len()).map(|_| None).collect();
    for &j in dag.topological_order() {
        let parents = dag.parents(j);
        let mut input = Array2::<f64>::zeros((b, parents.len() + 1));
        for (k, &p) in parents.iter().enumerate() {
            input.column_mut(k).assign(&out.column(p));
        }
        input.column_mut(parents.len()).assign(&noise.column(j));
        let cache = net.forward_train(j, input);
        out.column_mut(j).assign(&cache.output().column(0));
        if dag.kind(j) == NodeKind::Binary {
            // straight-through: the hard draw goes forward, its gradient is
            // taken as the gradient of the probability
            let z = noise.column(j);
            out.column_mut(j).zip_mut_with(&z, |p, &z| *p = binary_draw(*p, z));
        }
        caches[j] = Some(cache);
    }
    (out, caches)
}

/// Fits a generator to `data` along `dag`.
///
/// An epoch is `ceil(n / batch_size)` generator updates, each preceded by
/// `discriminator_steps` discriminator updates on consecutive batches of a
/// reshuffled stream of real rows. Losses are the standard minimax pair
/// with the non-saturating generator objective `-log D(G(z))`.
pub fn fit(data: &Table, dag: &CausalDag, config: &TrainConfig) -> Result<(GeneratorModel, TrainLog)> {
    config.validate()?;
    let aligned = data.aligned_to(dag)?;
    let (standardized, preprocessing) = preprocess(&aligned)?;
    let x = standardized.data();
    let (n, d) = (x.nrows(), x.ncols());
    if n == 0 {
        return Err(TrainError::InvalidConfig("training data is empty".into()));
    }
    let width = config.hidden_width.unwrap_or(2 * d);
    let batch = config.batch_size.min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gen = GeneratorNet::new(dag, width, config.hidden_layers, &mut rng);
    let mut sizes = vec![d];
    sizes.extend(std::iter::repeat_n(width, config.hidden_layers));
    sizes.push(1);
    let mut disc = Mlp::new(&sizes, Activation::LeakyRelu(0.2), Activation::Identity, &mut rng);

    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        l2: config.regularization,
        beta1: config.beta1,
        ..AdamConfig::default()
    };
    let mut opt_g = Adam::new(adam);
    let mut opt_d = Adam::new(adam);

    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut next_batch = |rng: &mut ChaCha8Rng| -> Array2<f64> {
        if cursor + batch > n {
            order.shuffle(rng);
            cursor = 0;
        }
        let rows = &order[cursor..cursor + batch];
        cursor += batch;
        x.select(Axis(0), rows)
    };
    let noise = |rng: &mut ChaCha8Rng| Array2::from_shape_simple_fn((batch, d), || rng.sample(StandardNormal));

    let mut log = TrainLog {
        seed: config.seed,
        epochs: Vec::with_capacity(config.epochs),
    };
    let steps = n.div_ceil(batch);
    let start = Instant::now();
    let inv_b = 1.0 / batch as f64;
    for epoch in 0..config.epochs {
        let (mut d_sum, mut d_max, mut g_sum) = (0.0, f64::NEG_INFINITY, 0.0);
        for _ in 0..steps {
            for _ in 0..config.discriminator_steps {
                let real = next_batch(&mut rng);
                let z = noise(&mut rng);
                let (fake, _) = sweep(&gen, dag, &z);
                let mut both = Array2::zeros((2 * batch, d));
                both.slice_mut(s![..batch, ..]).assign(&real);
                both.slice_mut(s![batch.., ..]).assign(&fake);
                let cache = disc.forward_train(both.view());
                let logits = cache.output().column(0).to_owned();
                let mut loss = 0.0;
                let mut g = Array2::zeros((2 * batch, 1));
                for i in 0..2 * batch {
                    let l = logits[i];
                    if i < batch {
                        loss += softplus(-l);
                        g[[i, 0]] = (sigmoid(l) - 1.0) * inv_b;
                    } else {
                        loss += softplus(l);
                        g[[i, 0]] = sigmoid(l) * inv_b;
                    }
                }
                loss *= inv_b;
                let mut grad = disc.zero_grad();
                disc.backward(&cache, g, Some(&mut grad));
                opt_d.step(disc.slots(&grad));
                d_sum += loss;
                d_max = d_max.max(loss);
            }

            let z = noise(&mut rng);
            let (fake, caches) = sweep(&gen, dag, &z);
            let cache = disc.forward_train(fake.view());
            let mut loss = 0.0;
            let mut g = Array2::zeros((batch, 1));
            for (i, &l) in cache.output().column(0).iter().enumerate() {
                loss += softplus(-l);
                g[[i, 0]] = (sigmoid(l) - 1.0) * inv_b;
            }
            g_sum += loss * inv_b;
            let mut grad_x = disc.backward(&cache, g, None);
            let mut grad = gen.zero_grad();
            for &j in dag.topological_order().iter().rev() {
                let gj = grad_x.slice(s![.., j..j + 1]).to_owned();
                let node_cache = caches[j].as_ref().expect("every node generated");
                let gin = gen.backward(j, node_cache, gj, &mut grad);
                for (k, &p) in dag.parents(j).iter().enumerate() {
                    let mut col = grad_x.column_mut(p);
                    col += &gin.column(k);
                }
            }
            opt_g.step(gen.slots(&grad));
        }
        let d_steps = (steps * config.discriminator_steps) as f64;
        let entry = EpochLog {
            epoch,
            d_loss: d_sum / d_steps,
            g_loss: g_sum / steps as f64,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if d_max < config.collapse_threshold {
            return Err(TrainError::Diverged {
                epoch,
                threshold: config.collapse_threshold,
                max_d_loss: d_max,
                g_loss: entry.g_loss,
            });
        }
        log.epochs.push(entry);
    }

    let model = GeneratorModel::new(dag.clone(), Mechanisms::Network(gen), preprocessing)?;
    Ok((model, log))
}
