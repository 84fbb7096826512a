//! Named parameters with optimizer state.

use super::{Precision, TensorError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

pub type GradMap = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    XavierUniform,
}

#[derive(Debug, Clone, Copy)]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    SgdMomentum {
        lr: f64,
        momentum: f64,
    },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Optimizer {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> Optimizer {
        Optimizer::SgdMomentum { lr, momentum }
    }
}

/// Per-parameter optimizer slots. Adam uses both buffers; momentum uses the
/// first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    precision: Precision,
    params: BTreeMap<String, Tensor>,
    opt: BTreeMap<String, OptState>,
    step: u64,
}

impl ParameterStore {
    pub fn new(precision: Precision) -> ParameterStore {
        ParameterStore {
            precision,
            params: BTreeMap::new(),
            opt: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_coords(&self) -> usize {
        self.params.values().map(|t| t.data.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn opt_state(&self, name: &str) -> Option<&OptState> {
        self.opt.get(name)
    }

    pub fn insert(&mut self, name: &str, mut tensor: Tensor) {
        self.precision.round(&mut tensor.data);
        self.params.insert(name.to_string(), tensor);
    }

    pub fn add_param(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) {
        let data = match init {
            Init::Zeros => vec![0.0; rows * cols],
            Init::Const(v) => vec![v; rows * cols],
            Init::XavierUniform => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                (0..rows * cols).map(|_| rng.random_range(-a..a)).collect()
            }
        };
        self.insert(name, Tensor { rows, cols, data });
    }

    /// Copy of the store converted to the given precision (used to run
    /// gradient checks in 64-bit on stores trained in 32-bit).
    pub fn with_precision(&self, precision: Precision) -> ParameterStore {
        let mut out = self.clone();
        out.precision = precision;
        out
    }

    /// One optimizer step. `grads` must cover exactly the parameter set.
    pub fn optimizer_step(&mut self, grads: &GradMap, opt: &Optimizer) -> Result<(), TensorError> {
        if grads.is_empty() {
            return Err(TensorError::Usage("optimizer_step without gradients".into()));
        }
        for name in grads.keys() {
            if !self.params.contains_key(name) {
                return Err(TensorError::Usage(format!(
                    "gradient for unknown parameter {name:?}"
                )));
            }
        }
        for name in self.params.keys() {
            if !grads.contains_key(name) {
                return Err(TensorError::Usage(format!(
                    "missing gradient for parameter {name:?}"
                )));
            }
        }

        self.step += 1;
        let t = self.step;
        for (name, grad) in grads {
            let tensor = self.params.get_mut(name).expect("checked above");
            if grad.len() != tensor.data.len() {
                return Err(TensorError::Shape(format!(
                    "gradient for {name:?} has {} entries, parameter has {}",
                    grad.len(),
                    tensor.data.len()
                )));
            }
            let slot = self.opt.entry(name.clone()).or_default();
            match *opt {
                Optimizer::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    if slot.m.is_empty() {
                        slot.m = vec![0.0; grad.len()];
                        slot.v = vec![0.0; grad.len()];
                    }
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    for ((w, g), (m, v)) in tensor
                        .data
                        .iter_mut()
                        .zip(grad)
                        .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                    self.precision.round(&mut slot.m);
                    self.precision.round(&mut slot.v);
                }
                Optimizer::SgdMomentum { lr, momentum } => {
                    if slot.m.is_empty() {
                        slot.m = vec![0.0; grad.len()];
                    }
                    for ((w, g), m) in tensor.data.iter_mut().zip(grad).zip(slot.m.iter_mut()) {
                        *m = momentum * *m + g;
                        *w -= lr * *m;
                    }
                    self.precision.round(&mut slot.m);
                }
            }
            self.precision.round(&mut tensor.data);
        }
        Ok(())
    }

    pub(super) fn records(&self) -> (&BTreeMap<String, Tensor>, &BTreeMap<String, OptState>, u64) {
        (&self.params, &self.opt, self.step)
    }

    pub(super) fn from_records(
        precision: Precision,
        params: BTreeMap<String, Tensor>,
        opt: BTreeMap<String, OptState>,
        step: u64,
    ) -> ParameterStore {
        ParameterStore {
            precision,
            params,
            opt,
            step,
        }
    }
}
