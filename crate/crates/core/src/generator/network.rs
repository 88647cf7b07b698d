//! Per-node generator networks with a shared hidden block.
//!
//! Node `j` maps `[parents..., z_j]` through a private input projection, the
//! shared hidden layers, and a private one-unit head. Binary nodes squash the
//! head through a sigmoid to a probability `p` and emit `1[Φ(z_j) < p]`, the
//! same draw the structural equations use; during training the gradient of
//! the hard draw is passed straight through to `p`. Continuous nodes keep
//! the head linear.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::graph::{CausalDag, NodeKind};
use crate::nn::{dense_slots, Activation, Dense, DenseGrad, ParamSlot};
use crate::sem::normal_cdf;

const HIDDEN: Activation = Activation::LeakyRelu(0.2);

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub(crate) kinds: Vec<NodeKind>,
    pub(crate) inputs: Vec<Dense>,
    pub(crate) shared: Vec<Dense>,
    pub(crate) heads: Vec<Dense>,
}

pub struct NodeCache {
    /// Layer inputs in order, followed by the activated output.
    acts: Vec<Array2<f64>>,
}

impl NodeCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("non-empty cache")
    }
}

pub struct GeneratorGrad {
    inputs: Vec<DenseGrad>,
    shared: Vec<DenseGrad>,
    heads: Vec<DenseGrad>,
}

impl GeneratorNet {
    /// `hidden_layers` counts the private projection plus the shared layers.
    pub fn new<R: Rng + ?Sized>(dag: &CausalDag, width: usize, hidden_layers: usize, rng: &mut R) -> Self {
        assert!(hidden_layers >= 1 && width >= 1);
        let d = dag.len();
        let inputs = (0..d)
            .map(|j| Dense::init(dag.parents(j).len() + 1, width, rng))
            .collect();
        let shared = (1..hidden_layers).map(|_| Dense::init(width, width, rng)).collect();
        let heads = (0..d).map(|_| Dense::init(width, 1, rng)).collect();
        Self {
            kinds: dag.nodes().iter().map(|n| n.kind).collect(),
            inputs,
            shared,
            heads,
        }
    }

    pub fn width(&self) -> usize {
        self.heads.first().map_or(0, |h| h.fan_in())
    }

    pub fn arity(&self, node: usize) -> usize {
        self.inputs[node].fan_in()
    }

    fn output_activation(&self, node: usize) -> Activation {
        match self.kinds[node] {
            NodeKind::Binary => Activation::Sigmoid,
            NodeKind::Continuous => Activation::Identity,
        }
    }

    pub fn forward(&self, node: usize, input: ArrayView2<f64>) -> Array1<f64> {
        let mut h = self.inputs[node].forward(input);
        HIDDEN.apply(&mut h);
        for layer in &self.shared {
            h = layer.forward(h.view());
            HIDDEN.apply(&mut h);
        }
        let mut out = self.heads[node].forward(h.view());
        self.output_activation(node).apply(&mut out);
        out.remove_axis(Axis(1))
    }

    /// Node values: the head output for continuous nodes, the hard draw
    /// against the node's own noise (last input column) for binary ones.
    pub fn emit(&self, node: usize, input: ArrayView2<f64>) -> Array1<f64> {
        let mut out = self.forward(node, input);
        if self.kinds[node] == NodeKind::Binary {
            let z = input.column(input.ncols() - 1);
            out.zip_mut_with(&z, |p, &z| *p = binary_draw(*p, z));
        }
        out
    }

    pub fn forward_train(&self, node: usize, input: Array2<f64>) -> NodeCache {
        let mut acts = Vec::with_capacity(self.shared.len() + 3);
        let mut h = self.inputs[node].forward(input.view());
        HIDDEN.apply(&mut h);
        acts.push(input);
        for layer in &self.shared {
            let mut next = layer.forward(h.view());
            HIDDEN.apply(&mut next);
            acts.push(h);
            h = next;
        }
        let mut out = self.heads[node].forward(h.view());
        self.output_activation(node).apply(&mut out);
        acts.push(h);
        acts.push(out);
        NodeCache { acts }
    }

    /// Backpropagates `grad_out` (batch × 1) and returns the gradient with
    /// respect to the node input (batch × arity).
    pub fn backward(
        &self,
        node: usize,
        cache: &NodeCache,
        mut grad_out: Array2<f64>,
        grad: &mut GeneratorGrad,
    ) -> Array2<f64> {
        let acts = &cache.acts;
        let last = acts.len() - 1;
        self.output_activation(node).backprop(&acts[last], &mut grad_out);
        let mut g = self.heads[node].backward(acts[last - 1].view(), &grad_out, &mut grad.heads[node]);
        for (k, layer) in self.shared.iter().enumerate().rev() {
            HIDDEN.backprop(&acts[k + 2], &mut g);
            g = layer.backward(acts[k + 1].view(), &g, &mut grad.shared[k]);
        }
        HIDDEN.backprop(&acts[1], &mut g);
        self.inputs[node].backward(acts[0].view(), &g, &mut grad.inputs[node])
    }

    pub fn zero_grad(&self) -> GeneratorGrad {
        GeneratorGrad {
            inputs: self.inputs.iter().map(Dense::zero_grad).collect(),
            shared: self.shared.iter().map(Dense::zero_grad).collect(),
            heads: self.heads.iter().map(Dense::zero_grad).collect(),
        }
    }

    pub fn slots<'a>(&'a mut self, grad: &'a GeneratorGrad) -> impl Iterator<Item = ParamSlot<'a>> {
        let inputs = self.inputs.iter_mut().zip(&grad.inputs);
        let shared = self.shared.iter_mut().zip(&grad.shared);
        let heads = self.heads.iter_mut().zip(&grad.heads);
        inputs
            .chain(shared)
            .chain(heads)
            .flat_map(|(l, g)| dense_slots(l, g))
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.inputs.iter().chain(&self.shared).chain(&self.heads)
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }
}

pub(crate) fn binary_draw(p: f64, z: f64) -> f64 {
    if normal_cdf(z) < p {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binary_emission_thresholds_noise_quantile() {
        let dag = CausalDag::new(
            vec![NodeSpec::new("A", NodeKind::Binary), NodeSpec::new("B", NodeKind::Continuous)],
            vec![("A", "B")],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = GeneratorNet::new(&dag, 4, 2, &mut rng);
        let z = Array2::from_shape_fn((200, 1), |(i, _)| -3.0 + 0.03 * i as f64);
        let p = net.forward(0, z.view());
        let a = net.emit(0, z.view());
        for i in 0..200 {
            let expected = if normal_cdf(z[[i, 0]]) < p[i] { 1.0 } else { 0.0 };
            assert_eq!(a[i], expected);
        }
        let x = Array2::from_shape_simple_fn((5, 2), || rng.random_range(-1.0..1.0));
        assert_eq!(net.emit(1, x.view()), net.forward(1, x.view()));
    }

    #[test]
    fn node_gradients_match_finite_differences() {
        let dag = CausalDag::new(
            vec![
                NodeSpec::new("A", NodeKind::Binary),
                NodeSpec::new("B", NodeKind::Continuous),
                NodeSpec::new("Y", NodeKind::Binary),
            ],
            vec![("A", "Y"), ("B", "Y")],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = GeneratorNet::new(&dag, 6, 3, &mut rng);
        let y = dag.id("Y").unwrap();
        let x = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
        let loss = |net: &GeneratorNet| net.forward(y, x.view()).sum();

        let cache = net.forward_train(y, x.clone());
        let mut grad = net.zero_grad();
        let gx = net.backward(y, &cache, Array2::ones((4, 1)), &mut grad);

        let h = 1e-6;
        for k in 0..net.shared.len() {
            let orig = net.shared[k].weight[[1, 2]];
            net.shared[k].weight[[1, 2]] = orig + h;
            let up = loss(&net);
            net.shared[k].weight[[1, 2]] = orig - h;
            let down = loss(&net);
            net.shared[k].weight[[1, 2]] = orig;
            assert!(((up - down) / (2.0 * h) - grad.shared[k].weight[[1, 2]]).abs() < 1e-6);
        }
        let orig = net.inputs[y].weight[[2, 0]];
        net.inputs[y].weight[[2, 0]] = orig + h;
        let up = loss(&net);
        net.inputs[y].weight[[2, 0]] = orig - h;
        let down = loss(&net);
        net.inputs[y].weight[[2, 0]] = orig;
        assert!(((up - down) / (2.0 * h) - grad.inputs[y].weight[[2, 0]]).abs() < 1e-6);

        let mut xp = x.clone();
        xp[[3, 1]] += h;
        let up = net.forward(y, xp.view()).sum();
        xp[[3, 1]] -= 2.0 * h;
        let down = net.forward(y, xp.view()).sum();
        assert!(((up - down) / (2.0 * h) - gx[[3, 1]]).abs() < 1e-6);
    }

    #[test]
    fn arity_follows_parents() {
        let dag = CausalDag::new(
            vec![
                NodeSpec::new("A", NodeKind::Continuous),
                NodeSpec::new("B", NodeKind::Continuous),
                NodeSpec::new("C", NodeKind::Continuous),
            ],
            vec![("A", "C"), ("B", "C")],
        )
        .unwrap();
        let net = GeneratorNet::new(&dag, 4, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(net.arity(0), 1);
        assert_eq!(net.arity(2), 3);
        assert_eq!(net.width(), 4);
    }
}
