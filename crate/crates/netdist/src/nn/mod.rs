//! Minimal dense neural-network kernel: named parameter arrays with gradient
//! slots, multi-layer perceptrons, a reverse-mode tape, the Adam optimizer
//! with a stepped decay schedule, and a self-describing checkpoint format.

mod tape;

pub use tape::{NodeId, Tape};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One named parameter array with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub rows: usize,
    /// 1 for bias vectors.
    pub cols: usize,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
    #[serde(skip)]
    moment1: Vec<f64>,
    #[serde(skip)]
    moment2: Vec<f64>,
}

/// Named, shaped trainable arrays shared by a policy or value network.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, rows: usize, cols: usize, value: Vec<f64>) {
        assert_eq!(value.len(), rows * cols, "shape mismatch for {name}");
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name {name}"
        );
        let len = value.len();
        self.params.insert(
            name.to_string(),
            Param {
                rows,
                cols,
                value,
                grad: vec![0.0; len],
                moment1: vec![0.0; len],
                moment2: vec![0.0; len],
            },
        );
    }

    pub fn param(&self, name: &str) -> &Param {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn n_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for param in self.params.values_mut() {
            param.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params
            .values()
            .all(|p| p.grad.iter().all(|g| g.is_finite()))
    }

    /// Flattened copy of all parameter values, in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.values().flat_map(|p| p.value.iter().copied()).collect()
    }

    /// Overwrites parameter values from a flat vector in name order.
    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for param in self.params.values_mut() {
            let len = param.value.len();
            param.value.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len());
    }

    /// Flattened copy of all gradients, in name order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.values().flat_map(|p| p.grad.iter().copied()).collect()
    }
}

/// Learning-rate schedule: `base * decay^(step / interval)` with an integer
/// division, so the rate drops in steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
    pub interval: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 1e-4,
            decay: 0.95,
            interval: 500,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        self.base * self.decay.powi((step / self.interval) as i32)
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One Adam update over every parameter in the store using the accumulated
/// gradients; gradients are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, schedule: &LrSchedule) {
    let lr = schedule.at(store.step);
    store.step += 1;
    let t = store.step as i32;
    let correction1 = 1.0 - ADAM_BETA1.powi(t);
    let correction2 = 1.0 - ADAM_BETA2.powi(t);
    for param in store.params.values_mut() {
        for i in 0..param.value.len() {
            let g = param.grad[i];
            param.moment1[i] = ADAM_BETA1 * param.moment1[i] + (1.0 - ADAM_BETA1) * g;
            param.moment2[i] = ADAM_BETA2 * param.moment2[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = param.moment1[i] / correction1;
            let v_hat = param.moment2[i] / correction2;
            param.value[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            param.grad[i] = 0.0;
        }
    }
}

/// A dense network: affine layers with ReLU after every layer but the last.
/// `widths` runs input → hidden… → output; two entries make a plain linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub name: String,
    pub widths: Vec<usize>,
}

impl Mlp {
    /// Registers freshly initialized parameters in the store: weights uniform
    /// in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init<R: Rng>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2);
        for layer in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            store.insert(&format!("{name}.w{layer}"), fan_out, fan_in, weight);
            store.insert(&format!("{name}.b{layer}"), fan_out, 1, vec![0.0; fan_out]);
        }
        Mlp {
            name: name.to_string(),
            widths: widths.to_vec(),
        }
    }

    /// References existing parameters (after a checkpoint load).
    pub fn attach(name: &str, widths: &[usize]) -> Self {
        Mlp {
            name: name.to_string(),
            widths: widths.to_vec(),
        }
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: NodeId) -> NodeId {
        let layers = self.widths.len() - 1;
        let mut h = input;
        for layer in 0..layers {
            h = tape.affine(
                store,
                &format!("{}.w{layer}", self.name),
                &format!("{}.b{layer}", self.name),
                h,
            );
            if layer + 1 < layers {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Expected parameter shapes, for checkpoint validation.
    pub fn shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = Vec::new();
        for layer in 0..self.widths.len() - 1 {
            let (fan_in, fan_out) = (self.widths[layer], self.widths[layer + 1]);
            shapes.push((format!("{}.w{layer}", self.name), fan_out, fan_in));
            shapes.push((format!("{}.b{layer}", self.name), fan_out, 1));
        }
        shapes
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Self-describing checkpoint: version, shape metadata and parameter arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub shapes: Vec<(String, usize, usize)>,
    pub params: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            shapes: store
                .params
                .iter()
                .map(|(name, p)| (name.clone(), p.rows, p.cols))
                .collect(),
            params: store
                .params
                .iter()
                .map(|(name, p)| (name.clone(), p.value.clone()))
                .collect(),
            step: store.step,
        }
    }

    /// Rebuilds a store, validating every shape against `expected` when given.
    pub fn into_store(self, expected: Option<&[(String, usize, usize)]>) -> Result<ParamStore, Error> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if let Some(expected) = expected {
            if expected.len() != self.shapes.len() {
                return Err(Error::Checkpoint(format!(
                    "expected {} parameter arrays, found {}",
                    expected.len(),
                    self.shapes.len()
                )));
            }
            let mut sorted = expected.to_vec();
            sorted.sort();
            let mut actual = self.shapes.clone();
            actual.sort();
            for (want, have) in sorted.iter().zip(&actual) {
                if want != have {
                    return Err(Error::Checkpoint(format!(
                        "shape mismatch: expected {want:?}, found {have:?}"
                    )));
                }
            }
        }
        let mut store = ParamStore::new();
        store.step = self.step;
        for (name, rows, cols) in &self.shapes {
            let value = self
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
            if value.len() != rows * cols {
                return Err(Error::Checkpoint(format!("array {name} has wrong length")));
            }
            store.insert(name, *rows, *cols, value.clone());
        }
        Ok(store)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), Error> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lr_schedule_reference_points() {
        let schedule = LrSchedule::default();
        assert_relative_eq!(schedule.at(0), 1e-4);
        assert_relative_eq!(schedule.at(499), 1e-4);
        assert_relative_eq!(schedule.at(500), 9.5e-5);
        assert_relative_eq!(schedule.at(1000), 9.025e-5);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let before = store.param("w").value.clone();
        adam_step(&mut store, &LrSchedule::default());
        assert_eq!(store.param("w").value, before);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let mut store = ParamStore::new();
        store.insert("x", 2, 1, vec![3.0, -2.0]);
        let schedule = LrSchedule {
            base: 0.05,
            decay: 1.0,
            interval: 500,
        };
        for _ in 0..10_000 {
            let x = store.param("x").value.clone();
            let grad = vec![2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)];
            store.param_mut("x").grad = grad;
            adam_step(&mut store, &schedule);
        }
        let x = &store.param("x").value;
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] + 0.5).abs() < 1e-6, "x = {x:?}");
    }

    #[test]
    fn mlp_zero_params_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::init(&mut store, "f", &[3, 4, 4, 2], &mut rng);
        for name in ["f.w0", "f.w1", "f.w2"] {
            store.param_mut(name).value.iter_mut().for_each(|w| *w = 0.0);
        }
        let mut tape = Tape::new();
        let x = tape.input(vec![1.0, -2.0, 0.5]);
        let y = mlp.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y), &[0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer_is_identity() {
        let mut store = ParamStore::new();
        store.insert("f.w0", 3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        store.insert("f.b0", 3, 1, vec![0.0; 3]);
        let mlp = Mlp::attach("f", &[3, 3]);
        let mut tape = Tape::new();
        let x = tape.input(vec![0.3, -0.7, 2.0]);
        let y = mlp.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y), &[0.3, -0.7, 2.0]);
    }

    #[test]
    fn mlp_forward_matches_straight_line_oracle() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mlp = Mlp::init(&mut store, "f", &[2, 3, 3, 1], &mut rng);
        let input = [0.4, -1.1];

        // Independent straight-line evaluation.
        let layer = |store: &ParamStore, name: &str, layer: usize, x: &[f64]| -> Vec<f64> {
            let w = store.param(&format!("{name}.w{layer}"));
            let b = store.param(&format!("{name}.b{layer}"));
            (0..w.rows)
                .map(|o| {
                    b.value[o]
                        + (0..w.cols).map(|i| w.value[o * w.cols + i] * x[i]).sum::<f64>()
                })
                .collect()
        };
        let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let h0 = relu(layer(&store, "f", 0, &input));
        let h1 = relu(layer(&store, "f", 1, &h0));
        let expected = layer(&store, "f", 2, &h1);

        let mut tape = Tape::new();
        let x = tape.input(input.to_vec());
        let y = mlp.forward(&mut tape, &store, x);
        assert_relative_eq!(tape.value(y)[0], expected[0], epsilon = 1e-12);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let mlp = Mlp::init(&mut store, "f", &[3, 5, 1], &mut rng);
        let input = vec![0.2, -0.8, 1.3];

        let mut tape = Tape::new();
        let x = tape.input(input.clone());
        let y = mlp.forward(&mut tape, &store, x);
        tape.backward(&mut store, y, &[1.0]);
        let analytic = store.flat_grads();

        let flat = store.flatten();
        let eps = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let eval = |values: &[f64], store: &mut ParamStore| -> f64 {
                store.unflatten(values);
                let mut tape = Tape::new();
                let x = tape.input(input.clone());
                let y = mlp.forward(&mut tape, store, x);
                tape.scalar(y)
            };
            let fd = (eval(&plus, &mut store) - eval(&minus, &mut store)) / (2.0 * eps);
            store.unflatten(&flat);
            let denominator = analytic[i].abs().max(fd.abs()).max(1e-8);
            max_rel = max_rel.max((analytic[i] - fd).abs() / denominator);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn checkpoint_round_trip_and_shape_validation() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::init(&mut store, "f", &[2, 3, 1], &mut rng);
        let checkpoint = Checkpoint::from_store(&store);
        let restored = checkpoint.clone().into_store(Some(&mlp.shapes())).unwrap();
        assert_eq!(restored.param("f.w0").value, store.param("f.w0").value);

        let wrong = Mlp::attach("f", &[2, 4, 1]);
        assert!(checkpoint.into_store(Some(&wrong.shapes())).is_err());
    }
}
