//! Taped reverse-mode differentiation over a fixed set of primitives:
//! affine layers, ReLU, concatenation, mean over a set, log-softmax and a few
//! scalar reductions. Enough for the aggregation GNN and the PPO losses; no
//! general expression graphs.

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Affine { weight: String, bias: String, input: NodeId },
    Relu(NodeId),
    Concat(Vec<NodeId>),
    MeanStack(Vec<NodeId>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Square(NodeId),
    Sum(NodeId),
    Select(NodeId, usize),
    LogSoftmax(NodeId),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// A forward computation recorded for one backward sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        debug_assert!(value.iter().all(|x| x.is_finite()), "non-finite activation");
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// `W x + b` with `W` and `b` looked up in the store by name.
    pub fn affine(&mut self, store: &ParamStore, weight: &str, bias: &str, input: NodeId) -> NodeId {
        let w = store.param(weight);
        let b = store.param(bias);
        let x = &self.nodes[input.0].value;
        assert_eq!(w.cols, x.len(), "affine input width mismatch for {weight}");
        assert_eq!(b.rows, w.rows, "bias shape mismatch for {bias}");
        let mut y = b.value.clone();
        for o in 0..w.rows {
            let row = &w.value[o * w.cols..(o + 1) * w.cols];
            y[o] += row.iter().zip(x.iter()).map(|(wi, xi)| wi * xi).sum::<f64>();
        }
        self.push(
            y,
            Op::Affine {
                weight: weight.to_string(),
                bias: bias.to_string(),
                input,
            },
        )
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let y = self.nodes[input.0].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(y, Op::Relu(input))
    }

    /// True when some recorded ReLU was evaluated within `margin` of its
    /// kink (pre-activation 0.0). The composite is not differentiable at
    /// the kink itself, so finite-difference comparisons against `backward`
    /// are meaningless at or near such points; callers running those checks
    /// should redraw the instance.
    pub fn near_relu_kink(&self, margin: f64) -> bool {
        self.nodes.iter().any(|node| match node.op {
            Op::Relu(input) => self.nodes[input.0].value.iter().any(|&x| x.abs() <= margin),
            _ => false,
        })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut y = Vec::new();
        for &part in parts {
            y.extend_from_slice(&self.nodes[part.0].value);
        }
        self.push(y, Op::Concat(parts.to_vec()))
    }

    /// Elementwise mean of same-length vectors; the empty-set convention is
    /// handled by callers (a zero input node).
    pub fn mean_stack(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let len = self.nodes[parts[0].0].value.len();
        let mut y = vec![0.0; len];
        for &part in parts {
            for (acc, x) in y.iter_mut().zip(&self.nodes[part.0].value) {
                *acc += x;
            }
        }
        let scale = 1.0 / parts.len() as f64;
        y.iter_mut().for_each(|x| *x *= scale);
        self.push(y, Op::MeanStack(parts.to_vec()))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, z)| x + z)
            .collect();
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, z)| x - z)
            .collect();
        self.push(y, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let y = self.nodes[a.0].value.iter().map(|x| x * factor).collect();
        self.push(y, Op::Scale(a, factor))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let y = self.nodes[a.0].value.iter().map(|x| x * x).collect();
        self.push(y, Op::Square(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let y = vec![self.nodes[a.0].value.iter().sum()];
        self.push(y, Op::Sum(a))
    }

    pub fn select(&mut self, a: NodeId, index: usize) -> NodeId {
        let y = vec![self.nodes[a.0].value[index]];
        self.push(y, Op::Select(a, index))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let z = &self.nodes[a.0].value;
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let y = z.iter().map(|x| x - lse).collect();
        self.push(y, Op::LogSoftmax(a))
    }

    /// Reverse sweep from `output` with cotangent `seed`, accumulating into
    /// the store's gradient slots.
    pub fn backward(&self, store: &mut ParamStore, output: NodeId, seed: &[f64]) {
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|node| vec![0.0; node.value.len()])
            .collect();
        assert_eq!(seed.len(), self.nodes[output.0].value.len());
        grads[output.0].copy_from_slice(seed);

        for id in (0..=output.0).rev() {
            let gy = std::mem::take(&mut grads[id]);
            if gy.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Affine { weight, bias, input } => {
                    let x = &self.nodes[input.0].value;
                    let cols = x.len();
                    {
                        let w = store.param(weight);
                        let gx = &mut grads[input.0];
                        for (o, &g) in gy.iter().enumerate() {
                            if g != 0.0 {
                                let row = &w.value[o * cols..(o + 1) * cols];
                                for (slot, &wi) in gx.iter_mut().zip(row) {
                                    *slot += g * wi;
                                }
                            }
                        }
                    }
                    {
                        let gw = &mut store.param_mut(weight).grad;
                        for (o, &g) in gy.iter().enumerate() {
                            if g != 0.0 {
                                let row = &mut gw[o * cols..(o + 1) * cols];
                                for (slot, &xi) in row.iter_mut().zip(x) {
                                    *slot += g * xi;
                                }
                            }
                        }
                    }
                    let gb = &mut store.param_mut(bias).grad;
                    for (slot, g) in gb.iter_mut().zip(&gy) {
                        *slot += g;
                    }
                }
                Op::Relu(input) => {
                    // ReLU subgradient at exactly zero is zero.
                    let x = &self.nodes[input.0].value;
                    let gx = &mut grads[input.0];
                    for i in 0..x.len() {
                        if x[i] > 0.0 {
                            gx[i] += gy[i];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &part in parts {
                        let len = self.nodes[part.0].value.len();
                        for (slot, g) in grads[part.0].iter_mut().zip(&gy[offset..offset + len]) {
                            *slot += g;
                        }
                        offset += len;
                    }
                }
                Op::MeanStack(parts) => {
                    let scale = 1.0 / parts.len() as f64;
                    for &part in parts {
                        for (slot, g) in grads[part.0].iter_mut().zip(&gy) {
                            *slot += g * scale;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (slot, g) in grads[a.0].iter_mut().zip(&gy) {
                        *slot += g;
                    }
                    for (slot, g) in grads[b.0].iter_mut().zip(&gy) {
                        *slot += g;
                    }
                }
                Op::Sub(a, b) => {
                    for (slot, g) in grads[a.0].iter_mut().zip(&gy) {
                        *slot += g;
                    }
                    for (slot, g) in grads[b.0].iter_mut().zip(&gy) {
                        *slot -= g;
                    }
                }
                Op::Scale(a, factor) => {
                    for (slot, g) in grads[a.0].iter_mut().zip(&gy) {
                        *slot += g * factor;
                    }
                }
                Op::Square(a) => {
                    let x = &self.nodes[a.0].value;
                    for i in 0..x.len() {
                        grads[a.0][i] += gy[i] * 2.0 * x[i];
                    }
                }
                Op::Sum(a) => {
                    let g = gy[0];
                    for slot in grads[a.0].iter_mut() {
                        *slot += g;
                    }
                }
                Op::Select(a, index) => {
                    grads[a.0][*index] += gy[0];
                }
                Op::LogSoftmax(a) => {
                    // d log_softmax: gx = gy - softmax * sum(gy)
                    let total: f64 = gy.iter().sum();
                    let logp = &self.nodes[id].value;
                    for i in 0..logp.len() {
                        grads[a.0][i] += gy[i] - logp[i].exp() * total;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use approx::assert_relative_eq;

    #[test]
    fn gradient_of_linear_form_is_input() {
        let mut store = ParamStore::new();
        store.insert("w", 1, 3, vec![0.5, -1.0, 2.0]);
        store.insert("b", 1, 1, vec![0.0]);
        let mut tape = Tape::new();
        let x = tape.input(vec![1.0, 2.0, 3.0]);
        let y = tape.affine(&store, "w", "b", x);
        assert_relative_eq!(tape.scalar(y), 0.5 - 2.0 + 6.0);
        tape.backward(&mut store, y, &[1.0]);
        assert_eq!(store.param("w").grad, vec![1.0, 2.0, 3.0]);
        assert_eq!(store.param("b").grad, vec![1.0]);
    }

    #[test]
    fn relu_subgradient_zero_at_zero() {
        let mut store = ParamStore::new();
        store.insert("w", 1, 1, vec![1.0]);
        store.insert("b", 1, 1, vec![0.0]);
        let mut tape = Tape::new();
        let x = tape.input(vec![0.0]);
        let h = tape.affine(&store, "w", "b", x);
        let y = tape.relu(h);
        tape.backward(&mut store, y, &[1.0]);
        assert_eq!(store.param("w").grad, vec![0.0]);
        assert_eq!(store.param("b").grad, vec![0.0]);
    }

    #[test]
    fn log_softmax_matches_finite_differences() {
        let z = vec![0.3, -1.2, 0.7, 0.1];
        let mut store = ParamStore::new();
        store.insert("w", 4, 4, {
            let mut identity = vec![0.0; 16];
            for i in 0..4 {
                identity[i * 4 + i] = 1.0;
            }
            identity
        });
        store.insert("b", 4, 1, vec![0.0; 4]);
        let mut tape = Tape::new();
        let x = tape.input(z.clone());
        let h = tape.affine(&store, "w", "b", x);
        let logp = tape.log_softmax(h);
        let picked = tape.select(logp, 2);
        tape.backward(&mut store, picked, &[1.0]);
        let grad = store.param("b").grad.clone();

        let f = |z: &[f64]| {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            z[2] - lse
        };
        let eps = 1e-6;
        for i in 0..4 {
            let mut plus = z.clone();
            let mut minus = z.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            assert_relative_eq!(grad[i], fd, epsilon = 1e-6);
        }
    }
}
