//! CVAE trajectory predictor conditioned on offset histories and dynamic maps,
//! plus a deterministic regressor and a constant-velocity baseline.
//!
//! Condition encoder: each of the `T` observed maps is flattened and passed
//! through a shared affine + tanh layer; the `T` map features and the `T − 1`
//! observed offsets are concatenated and mapped by affine + tanh to the
//! hidden width. The recognition branch sees the condition and the encoded
//! future and emits `(μ, log σ²)`; the decoder sees the condition and `z`.
//! The decoder's output layer also reads the raw observed offsets, so a
//! linear extrapolation is representable exactly.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamic_map::{DynamicMap, GridGeometry, CHANNELS};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::nn::{AdamConfig, Checkpoint, Linear, ParamStore, Tape, Var};
use crate::seeds::{self, Rng};

/// Observed frames per window.
pub const OBS_LEN: usize = 5;
/// Predicted frames per window.
pub const PRED_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Gt,
    Mot,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Gt => "gt",
            Source::Mot => "mot",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Ok(Source::Gt),
            "mot" => Ok(Source::Mot),
            _ => Err(Error::InvalidConfig(format!("unknown source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub subject: u64,
    /// `OBS_LEN − 1` displacements between consecutive observed positions.
    pub offsets: Vec<Point2>,
    /// One map per observed frame.
    pub maps: Vec<DynamicMap>,
    pub last_position: Point2,
}

impl ObservationWindow {
    pub fn validate(&self) -> Result<()> {
        if self.offsets.len() != OBS_LEN - 1 {
            return Err(Error::Shape { expected: format!("{} offsets", OBS_LEN - 1), got: self.offsets.len().to_string() });
        }
        if self.maps.len() != OBS_LEN {
            return Err(Error::Shape { expected: format!("{OBS_LEN} maps"), got: self.maps.len().to_string() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureWindow {
    /// `PRED_LEN` displacements, the first one from the last observed position.
    pub offsets: Vec<Point2>,
}

impl FutureWindow {
    /// Absolute positions reached from `start`.
    pub fn positions(&self, start: Point2) -> Vec<Point2> {
        cumulative(start, &self.offsets)
    }
}

fn cumulative(start: Point2, offsets: &[Point2]) -> Vec<Point2> {
    let mut p = start;
    offsets
        .iter()
        .map(|d| {
            p = p + *d;
            p
        })
        .collect()
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Seed of the scene the window was cut from; splits never separate a scene.
    pub scene: u64,
    /// Frame index of the last observed step.
    pub frame: usize,
    pub source: Source,
    /// Ground-truth agent behind the window; equals `window.subject` for GT
    /// windows and is the held-out label for tracker windows.
    pub gt_agent: u64,
    pub window: ObservationWindow,
    pub future: FutureWindow,
}

/// `K` absolute trajectories of `PRED_LEN` points each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub trajectories: Vec<Vec<Point2>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Cvae,
    /// Same encoder, no latent, pure MSE.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvaeConfig {
    pub kind: ModelKind,
    pub z_dim: usize,
    pub hidden: usize,
    pub map_features: usize,
    pub kl_weight: f64,
    pub k_samples: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decoupled weight decay on weight matrices.
    pub weight_decay: f64,
    /// Step-size multiplier for the map encoder. Its per-cell weights see
    /// few examples each and memorize training scenes at the full rate.
    pub map_lr_scale: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub grid: GridGeometry,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Cvae,
            z_dim: 32,
            hidden: 128,
            map_features: 64,
            kl_weight: 0.5,
            k_samples: 10,
            max_epochs: 200,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 0.0,
            map_lr_scale: 1.0,
            lr_decay: 0.5,
            lr_decay_every: 20,
            patience: 10,
            val_fraction: 0.1,
            grid: GridGeometry::default(),
        }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.z_dim, self.hidden, self.map_features, self.k_samples, self.max_epochs, self.batch_size, self.lr_decay_every];
        if positive.contains(&0) {
            return Err(Error::InvalidConfig("predictor sizes must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) || !(self.kl_weight >= 0.0) || !(self.weight_decay >= 0.0) || !(self.map_lr_scale > 0.0) {
            return Err(Error::InvalidConfig("learning rate, decay and kl weight must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig("val_fraction must be in [0, 1)".into()));
        }
        self.grid.validate()
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Layers {
    map_enc: Linear,
    cond: Linear,
    fut_enc: Option<Linear>,
    recog: Option<Linear>,
    dec_hidden: Linear,
    dec_out: Linear,
}

/// Window inputs in the form the network consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    maps: Vec<(Vec<usize>, Vec<f64>)>,
    offsets: Vec<f64>,
    target: Vec<f64>,
}

impl Encoded {
    pub fn new(window: &ObservationWindow, future: Option<&FutureWindow>) -> Self {
        Self {
            maps: window.maps.iter().map(DynamicMap::sparse_features).collect(),
            offsets: window.offsets.iter().flat_map(|p| [p.x, p.y]).collect(),
            target: future.map_or_else(Vec::new, |f| f.offsets.iter().flat_map(|p| [p.x, p.y]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    pub cfg: CvaeConfig,
    pub store: ParamStore,
    layers: Layers,
}

impl CvaeModel {
    pub fn new(cfg: CvaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeds::stream(seed, "predictor-init", 0);
        let mut store = ParamStore::new();
        let map_in = CHANNELS * cfg.grid.cells();
        let off = 2 * (OBS_LEN - 1);
        let fut = 2 * PRED_LEN;
        let map_enc = store.linear("map_enc", map_in, cfg.map_features, &mut rng);
        store.get_mut(map_enc.w).lr_scale = cfg.map_lr_scale;
        store.get_mut(map_enc.b).lr_scale = cfg.map_lr_scale;
        let cond = store.linear("cond", OBS_LEN * cfg.map_features + off, cfg.hidden, &mut rng);
        let (fut_enc, recog, dec_in) = match cfg.kind {
            ModelKind::Cvae => (
                Some(store.linear("fut_enc", fut, cfg.hidden, &mut rng)),
                Some(store.linear("recog", 2 * cfg.hidden, 2 * cfg.z_dim, &mut rng)),
                cfg.hidden + cfg.z_dim,
            ),
            ModelKind::Deterministic => (None, None, cfg.hidden),
        };
        let dec_hidden = store.linear("dec_hidden", dec_in, cfg.hidden, &mut rng);
        let dec_out = store.linear("dec_out", cfg.hidden + off, fut, &mut rng);
        // the skip path from the observed offsets starts as constant-velocity
        // extrapolation of the last offset
        let w = &mut store.get_mut(dec_out.w).value;
        w[cfg.hidden * fut..].iter_mut().for_each(|v| *v = 0.0);
        for step in 0..PRED_LEN {
            for axis in 0..2 {
                w[(cfg.hidden + off - 2 + axis) * fut + 2 * step + axis] = 1.0;
            }
        }
        Ok(Self { cfg, store, layers: Layers { map_enc, cond, fut_enc, recog, dec_hidden, dec_out } })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<CvaeConfig>> {
        Checkpoint::new(self.cfg.clone(), self.store.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint<CvaeConfig>) -> Result<Self> {
        let mut model = Self::new(ck.config.clone(), 0)?;
        model.store.load_values(&ck.params)?;
        Ok(model)
    }

    pub fn load_json(s: &str) -> Result<Self> {
        let ck = Checkpoint::from_json(s, |c: &CvaeConfig| {
            Self::new(c.clone(), 0).map(|m| m.store).unwrap_or_default()
        })?;
        Self::from_checkpoint(&ck)
    }

    fn check(&self, e: &Encoded) -> Result<()> {
        if e.maps.len() != OBS_LEN || e.offsets.len() != 2 * (OBS_LEN - 1) {
            return Err(Error::Shape {
                expected: format!("{OBS_LEN} maps and {} offset values", 2 * (OBS_LEN - 1)),
                got: format!("{} maps and {} offset values", e.maps.len(), e.offsets.len()),
            });
        }
        Ok(())
    }

    fn condition(&self, t: &mut Tape, e: &Encoded) -> Result<(Var, Var)> {
        self.check(e)?;
        let mut parts = Vec::with_capacity(OBS_LEN + 1);
        for (idx, val) in &e.maps {
            let a = t.sparse_affine(&self.store, self.layers.map_enc, idx.clone(), val.clone())?;
            parts.push(t.tanh(a));
        }
        let offsets = t.input(e.offsets.clone());
        parts.push(offsets);
        let joined = t.concat(&parts);
        let c = t.affine(&self.store, self.layers.cond, joined)?;
        Ok((t.tanh(c), offsets))
    }

    fn decode(&self, t: &mut Tape, cond: Var, offsets: Var, z: Option<Var>) -> Result<Var> {
        let input = match z {
            Some(z) => t.concat(&[cond, z]),
            None => cond,
        };
        let h = t.affine(&self.store, self.layers.dec_hidden, input)?;
        let h = t.tanh(h);
        let joined = t.concat(&[h, offsets]);
        t.affine(&self.store, self.layers.dec_out, joined)
    }

    /// Condition feature vector of a window.
    pub fn encode_condition(&self, window: &ObservationWindow) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let (c, _) = self.condition(&mut t, &Encoded::new(window, None))?;
        Ok(t.value(c).to_vec())
    }

    /// Builds the training loss; returns `(tape, loss, reconstruction)`.
    /// `eps` is the reparameterization noise (ignored by the deterministic
    /// model).
    fn loss(&self, e: &Encoded, eps: &[f64]) -> Result<(Tape, Var, f64)> {
        let mut t = Tape::new();
        let (cond, offsets) = self.condition(&mut t, e)?;
        let target = t.input(e.target.clone());
        match (self.layers.fut_enc, self.layers.recog) {
            (Some(fut_enc), Some(recog)) => {
                let f = t.affine(&self.store, fut_enc, target)?;
                let f = t.tanh(f);
                let q_in = t.concat(&[cond, f]);
                let q = t.affine(&self.store, recog, q_in)?;
                let mu = t.slice(q, 0, self.cfg.z_dim)?;
                let logvar = t.slice(q, self.cfg.z_dim, self.cfg.z_dim)?;
                let z = t.reparameterize(mu, logvar, eps.to_vec())?;
                let out = self.decode(&mut t, cond, offsets, Some(z))?;
                let diff = t.sub(out, target)?;
                let sse = t.sum_squares(diff);
                let kl = t.gaussian_kl(mu, logvar)?;
                let kl = t.scale(kl, self.cfg.kl_weight);
                let loss = t.add(sse, kl)?;
                let rec = t.value(sse)[0];
                Ok((t, loss, rec))
            }
            _ => {
                let out = self.decode(&mut t, cond, offsets, None)?;
                let diff = t.sub(out, target)?;
                let sse = t.sum_squares(diff);
                let rec = t.value(sse)[0];
                Ok((t, sse, rec))
            }
        }
    }

    /// Decoded future offsets for one latent draw (`None` for the
    /// deterministic model or the prior mean).
    fn decode_offsets(&self, e: &Encoded, z: Option<Vec<f64>>) -> Result<Vec<Point2>> {
        let mut t = Tape::new();
        let (cond, offsets) = self.condition(&mut t, e)?;
        let z = match self.cfg.kind {
            ModelKind::Cvae => Some(t.input(z.unwrap_or_else(|| vec![0.0; self.cfg.z_dim]))),
            ModelKind::Deterministic => None,
        };
        let out = self.decode(&mut t, cond, offsets, z)?;
        Ok(t.value(out).chunks(2).map(|c| Point2::new(c[0], c[1])).collect())
    }

    /// `k` future trajectories in absolute coordinates. Sample 0 decodes the
    /// prior mean `z = 0`; the rest draw `z ~ N(0, I)` from `rng`. The
    /// deterministic model repeats its single output.
    pub fn sample_predictions(&self, window: &ObservationWindow, k: usize, rng: &mut Rng) -> Result<PredictionSet> {
        window.validate()?;
        let e = Encoded::new(window, None);
        let mut trajectories = Vec::with_capacity(k);
        let first = cumulative(window.last_position, &self.decode_offsets(&e, None)?);
        for i in 0..k {
            if i == 0 || self.cfg.kind == ModelKind::Deterministic {
                trajectories.push(first.clone());
                continue;
            }
            let z: Vec<f64> = (0..self.cfg.z_dim).map(|_| StandardNormal.sample(rng)).collect();
            trajectories.push(cumulative(window.last_position, &self.decode_offsets(&e, Some(z))?));
        }
        Ok(PredictionSet { trajectories })
    }

    /// Per-tensor Frobenius norms, an upper bound on each operator norm.
    pub fn frobenius(&self, which: &str) -> f64 {
        let l = match which {
            "map_enc" => self.layers.map_enc,
            "cond" => self.layers.cond,
            _ => panic!("unknown layer {which}"),
        };
        self.store.get(l.w).value.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Stops training after `patience` epochs without a new best validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stale,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            Progress::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Progress::Stop
            } else {
                Progress::Stale
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Mean per-example reconstruction error (sum of squares) on the
    /// training split at the best epoch's parameters.
    pub train_reconstruction: f64,
    pub train_scenes: Vec<u64>,
    pub val_scenes: Vec<u64>,
}

/// Splits scene ids into `(train, validation)` deterministically. With fewer
/// than two scenes the validation split reuses the training scenes.
pub fn split_scenes(samples: &[Sample], val_fraction: f64, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut scenes: Vec<u64> = samples.iter().map(|s| s.scene).collect();
    scenes.sort_unstable();
    scenes.dedup();
    if scenes.len() < 2 || val_fraction == 0.0 {
        return (scenes.clone(), scenes);
    }
    let mut rng = seeds::stream(seed, "scene-split", 0);
    rand::seq::SliceRandom::shuffle(scenes.as_mut_slice(), &mut rng);
    let n_val = ((scenes.len() as f64 * val_fraction).round() as usize).clamp(1, scenes.len() - 1);
    let mut val = scenes.split_off(scenes.len() - n_val);
    scenes.sort_unstable();
    val.sort_unstable();
    (scenes, val)
}

fn epsilon(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Mean loss over a set; noise comes from a fixed stream so repeated calls
/// agree.
fn evaluate_loss(model: &CvaeModel, data: &[Encoded], seed: u64) -> Result<(f64, f64)> {
    let mut rng = seeds::stream(seed, "val-noise", 0);
    let (mut loss, mut rec) = (0.0, 0.0);
    for e in data {
        let eps = epsilon(&mut rng, model.cfg.z_dim);
        let (t, l, r) = model.loss(e, &eps)?;
        loss += t.value(l)[0];
        rec += r;
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, rec / n))
}

/// Trains a model on `samples` and returns the best-validation parameters.
pub fn train(samples: &[Sample], cfg: &CvaeConfig, seed: u64) -> Result<(CvaeModel, TrainReport)> {
    train_with(samples, cfg, seed, |_, _| {})
}

/// [`train`] with a per-epoch callback `(epoch, validation loss)`.
pub fn train_with(
    samples: &[Sample],
    cfg: &CvaeConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(CvaeModel, TrainReport)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for s in samples {
        s.window.validate()?;
        if s.future.offsets.len() != PRED_LEN {
            return Err(Error::Shape { expected: format!("{PRED_LEN} future offsets"), got: s.future.offsets.len().to_string() });
        }
    }
    let mut model = CvaeModel::new(cfg.clone(), seed)?;
    let (train_scenes, val_scenes) = split_scenes(samples, cfg.val_fraction, seed);
    let encode = |scenes: &[u64]| -> Vec<Encoded> {
        samples
            .iter()
            .filter(|s| scenes.binary_search(&s.scene).is_ok())
            .map(|s| Encoded::new(&s.window, Some(&s.future)))
            .collect()
    };
    let train_set = encode(&train_scenes);
    let val_set = encode(&val_scenes);

    let adam = AdamConfig { weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let mut rng = seeds::stream(seed, "train-epoch", epoch as u64);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                let eps = epsilon(&mut rng, cfg.z_dim);
                let (t, l, _) = model.loss(&train_set[i], &eps)?;
                let v = t.value(l)[0];
                if !v.is_finite() {
                    return Err(Error::Diverged { epoch, detail: format!("loss {v} on training example {i}") });
                }
                total += v;
                t.backward(l, &mut model.store)?;
            }
            model.store.scale_grad(1.0 / batch.len() as f64);
            model.store.adam_step(lr, &adam);
        }
        train_loss.push(total / train_set.len() as f64);
        let (v, _) = evaluate_loss(&model, &val_set, seed)?;
        if !v.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("validation loss {v}") });
        }
        val_loss.push(v);
        on_epoch(epoch, v);
        match stopper.observe(epoch, v) {
            Progress::Improved => best.clone_from(&model.store),
            Progress::Stale => {}
            Progress::Stop => break,
        }
    }
    model.store.load_values(&best)?;
    let (_, train_reconstruction) = evaluate_loss(&model, &train_set, seed)?;
    let report = TrainReport {
        epochs_run: val_loss.len(),
        best_epoch: stopper.best_epoch,
        train_loss,
        val_loss,
        train_reconstruction,
        train_scenes,
        val_scenes,
    };
    Ok((model, report))
}

/// Extrapolates the mean of the last two observed offsets.
pub fn cv_baseline(window: &ObservationWindow) -> Vec<Point2> {
    let n = window.offsets.len();
    let step = match n {
        0 => Point2::default(),
        1 => window.offsets[0],
        _ => (window.offsets[n - 1] + window.offsets[n - 2]).scale(0.5),
    };
    cumulative(window.last_position, &vec![step; PRED_LEN])
}

/// Gradient of one training example, for diagnostics.
pub fn example_gradient(model: &CvaeModel, sample: &Sample, seed: u64) -> Result<ParamStore> {
    let mut store = model.store.clone();
    store.zero_grad();
    let mut rng = seeds::stream(seed, "grad-probe", 0);
    let eps = epsilon(&mut rng, model.cfg.z_dim);
    let (t, l, _) = model.loss(&Encoded::new(&sample.window, Some(&sample.future)), &eps)?;
    t.backward(l, &mut store)?;
    Ok(store)
}
