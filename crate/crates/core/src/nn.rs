//! Minimal dense networks with hand-written backpropagation and Adam.
//!
//! Everything is `f64` and row-major: a batch is an `Array2` with one sample
//! per row. Networks emit raw scores; losses that need probabilities work on
//! logits directly for numerical stability.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: &mut Array2<f64>) {
        match self {
            Self::Identity => {}
            Self::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Self::LeakyRelu(slope) => x.mapv_inplace(|v| if v > 0.0 { v } else { slope * v }),
            Self::Sigmoid => x.mapv_inplace(sigmoid),
        }
    }

    /// Multiplies `grad` in place by the derivative, given the activation output.
    pub fn backprop(self, output: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Self::Identity => {}
            Self::Relu => Zip::from(grad)
                .and(output)
                .for_each(|g, &o| if o <= 0.0 { *g = 0.0 }),
            Self::LeakyRelu(slope) => Zip::from(grad)
                .and(output)
                .for_each(|g, &o| if o <= 0.0 { *g *= slope }),
            Self::Sigmoid => Zip::from(grad).and(output).for_each(|g, &o| *g *= o * (1.0 - o)),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Fully connected layer `y = x W + b`, with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
        let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, grad_out: &Array2<f64>, grad: &mut DenseGrad) -> Array2<f64> {
        grad.weight += &x.t().dot(grad_out);
        grad.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight.t())
    }

    pub fn zero_grad(&self) -> DenseGrad {
        DenseGrad {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// One parameter tensor paired with its gradient, as seen by the optimizer.
pub struct ParamSlot<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
    /// Whether the L2 penalty applies (weights yes, biases no).
    pub decay: bool,
}

pub fn dense_slots<'a>(layer: &'a mut Dense, grad: &'a DenseGrad) -> [ParamSlot<'a>; 2] {
    [
        ParamSlot {
            value: layer.weight.as_slice_mut().expect("standard layout"),
            grad: grad.weight.as_slice().expect("standard layout"),
            decay: true,
        },
        ParamSlot {
            value: layer.bias.as_slice_mut().expect("standard layout"),
            grad: grad.bias.as_slice().expect("standard layout"),
            decay: false,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coefficient `λ` of the penalty `λ/2 · ‖w‖²`.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 0.0,
        }
    }
}

/// Adaptive-moment gradient descent. Moment buffers are created lazily on
/// the first step and matched to parameter slots by position.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step<'a>(&mut self, slots: impl IntoIterator<Item = ParamSlot<'a>>) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            l2,
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (i, slot) in slots.into_iter().enumerate() {
            if self.first.len() <= i {
                self.first.push(vec![0.0; slot.value.len()]);
                self.second.push(vec![0.0; slot.value.len()]);
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            debug_assert_eq!(m.len(), slot.value.len());
            for k in 0..slot.value.len() {
                let mut g = slot.grad[k];
                if slot.decay {
                    g += l2 * slot.value[k];
                }
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                slot.value[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

/// Stack of dense layers with a shared hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Per-layer inputs and outputs recorded by [`Mlp::forward_train`].
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

pub struct MlpGrad {
    pub layers: Vec<DenseGrad>,
}

impl Mlp {
    /// `sizes` lists every width from input to output.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = self.layers[0].forward(x);
        self.activation(0).apply(&mut h);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(h.view());
            self.activation(i).apply(&mut h);
        }
        h
    }

    pub fn forward_train(&self, x: ArrayView2<f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = layer.forward(h.view());
            self.activation(i).apply(&mut next);
            inputs.push(h);
            h = next;
        }
        MlpCache { inputs, output: h }
    }

    pub fn zero_grad(&self) -> MlpGrad {
        MlpGrad {
            layers: self.layers.iter().map(Dense::zero_grad).collect(),
        }
    }

    /// Backpropagates `grad_output` (w.r.t. the activated output). Parameter
    /// gradients are accumulated into `grad` when given; returns `dL/dx`.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_output: Array2<f64>,
        mut grad: Option<&mut MlpGrad>,
    ) -> Array2<f64> {
        let mut g = grad_output;
        for i in (0..self.layers.len()).rev() {
            let out = if i + 1 == self.layers.len() {
                &cache.output
            } else {
                &cache.inputs[i + 1]
            };
            self.activation(i).backprop(out, &mut g);
            let layer = &self.layers[i];
            let x = cache.inputs[i].view();
            g = match grad.as_deref_mut() {
                Some(acc) => layer.backward(x, &g, &mut acc.layers[i]),
                None => g.dot(&layer.weight.t()),
            };
        }
        g
    }

    pub fn slots<'a>(&'a mut self, grad: &'a MlpGrad) -> impl Iterator<Item = ParamSlot<'a>> {
        self.layers
            .iter_mut()
            .zip(&grad.layers)
            .flat_map(|(l, g)| dense_slots(l, g))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }
}
