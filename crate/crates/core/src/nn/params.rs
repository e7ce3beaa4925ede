//! Named parameter arrays, Adam state and checkpoint files.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeds::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    /// `(inputs, outputs)` for weights, `(1, outputs)` for biases.
    pub shape: (usize, usize),
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
    #[serde(skip)]
    m: Vec<f64>,
    #[serde(skip)]
    v: Vec<f64>,
    /// Multiplies the optimizer step size for this array.
    #[serde(skip, default = "unit")]
    pub lr_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Param {
    fn new(name: &str, shape: (usize, usize), value: Vec<f64>) -> Self {
        let n = value.len();
        Self { name: name.to_string(), shape, value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n], lr_scale: 1.0 }
    }

    fn restore_buffers(&mut self) {
        let n = self.value.len();
        self.grad = vec![0.0; n];
        self.m = vec![0.0; n];
        self.v = vec![0.0; n];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied to weight matrices, not biases.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
    #[serde(skip)]
    step: u64,
}

/// A dense layer `y = x·W + b` with `W` stored input-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: (usize, usize), value: Vec<f64>) -> Result<ParamId> {
        if value.len() != shape.0 * shape.1 {
            return Err(Error::Shape { expected: format!("{}", shape.0 * shape.1), got: format!("{}", value.len()) });
        }
        self.params.push(Param::new(name, shape, value));
        Ok(ParamId(self.params.len() - 1))
    }

    /// Adds a dense layer with Glorot-normal weights and zero bias.
    pub fn linear(&mut self, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Linear {
        let std = (2.0 / (inputs + outputs) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let w: Vec<f64> = (0..inputs * outputs).map(|_| normal.sample(rng)).collect();
        let w = self.add(&format!("{name}.w"), (inputs, outputs), w).expect("shape by construction");
        let b = self.add(&format!("{name}.b"), (1, outputs), vec![0.0; outputs]).expect("shape by construction");
        Linear { w, b, inputs, outputs }
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Multiplies every accumulated gradient by `k` (e.g. batch averaging).
    pub fn scale_grad(&mut self, k: f64) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= k);
        }
    }

    /// Adds another store's gradients into this one. Both stores must share a
    /// layout.
    pub fn accumulate_grad(&mut self, other: &ParamStore) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            p.grad.iter_mut().zip(&q.grad).for_each(|(a, b)| *a += b);
        }
    }

    /// One bias-corrected Adam update, then clears gradients.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let lr = lr * p.lr_scale;
            let decay = if p.shape.0 > 1 { 1.0 - lr * cfg.weight_decay } else { 1.0 };
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = p.m[i] / c1;
                let vh = p.v[i] / c2;
                p.value[i] = decay * p.value[i] - lr * mh / (vh.sqrt() + cfg.eps);
                p.grad[i] = 0.0;
            }
        }
    }

    /// Copies values from another store with the same layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        self.check_layout(other)?;
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            p.value.clone_from(&q.value);
        }
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.params.len()),
                got: format!("{} parameters", other.params.len()),
            });
        }
        for (p, q) in self.params.iter().zip(&other.params) {
            if p.name != q.name || p.shape != q.shape || q.value.len() != q.shape.0 * q.shape.1 {
                return Err(Error::Shape {
                    expected: format!("{} {:?}", p.name, p.shape),
                    got: format!("{} {:?} ({} values)", q.name, q.shape, q.value.len()),
                });
            }
        }
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn random_perturbation(&mut self, std: f64, rng: &mut Rng) {
        for p in &mut self.params {
            p.value.iter_mut().for_each(|v| *v += std * rng.gen_range(-1.0..1.0));
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "trackcast-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of a value's JSON form with object keys sorted.
pub fn config_digest<T: Serialize>(cfg: &T) -> Result<String> {
    // serde_json::Value keeps object keys in a BTreeMap, so this is canonical
    let v = serde_json::to_value(cfg)?;
    let bytes = serde_json::to_vec(&v)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Versioned container of named parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub format: String,
    pub version: u32,
    pub config: C,
    pub config_digest: String,
    pub params: ParamStore,
}

impl<C: Serialize + serde::de::DeserializeOwned> Checkpoint<C> {
    pub fn new(config: C, params: ParamStore) -> Result<Self> {
        let config_digest = config_digest(&config)?;
        Ok(Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, config, config_digest, params })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a checkpoint and validates it against `template`, a freshly
    /// built store for the model definition.
    pub fn from_json(s: &str, template: impl FnOnce(&C) -> ParamStore) -> Result<Self> {
        let mut ck: Self = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        if config_digest(&ck.config)? != ck.config_digest {
            return Err(Error::Format("checkpoint config digest mismatch".into()));
        }
        template(&ck.config).check_layout(&ck.params)?;
        for p in &mut ck.params.params {
            p.restore_buffers();
        }
        Ok(ck)
    }
}
