//! End-to-end pipeline: scene simulation, detection, tracking, dataset
//! construction from ground-truth or tracker trajectories, and the ablation
//! harness.

pub mod io;
pub mod render;
pub mod tables;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::{detect_scene, DetectionLog, NoiseModel};
use crate::dynamic_map::{map_sequence, AgentView, GridGeometry, MapMode, Snapshot};
use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point2};
use crate::metrics::{best_of_k, eval_frames, EvalFrame};
use crate::nn::config_digest;
use crate::predictor::{
    cv_baseline, CvaeConfig, CvaeModel, FutureWindow, ObservationWindow, PredictionSet, Sample, Source, OBS_LEN,
    PRED_LEN,
};
use crate::scene::{simulate, AgentClass, GroundTruthLog, ScenarioConfig};
use crate::seeds;
use crate::tracker::{track_scene, MeasurementNoise, TrackerConfig, TrackingResult};

pub const SCHEMA_VERSION: u32 = 1;
/// Observed plus predicted frames per window.
pub const WINDOW_LEN: usize = OBS_LEN + PRED_LEN;
/// Sample counts at which best-of-K errors are reported.
pub const K_VALUES: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Regime {
    pub train: Source,
    pub test: Source,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime { train: Source::Gt, test: Source::Gt },
        Regime { train: Source::Gt, test: Source::Mot },
        Regime { train: Source::Mot, test: Source::Gt },
        Regime { train: Source::Mot, test: Source::Mot },
    ];

    pub fn label(&self) -> String {
        format!("{}->{}", self.train.name(), self.test.name())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    /// Parses `train:test`, e.g. `gt:mot`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once([':', '-', '>'])
            .ok_or_else(|| Error::InvalidConfig(format!("regime must look like gt:mot, got {s:?}")))?;
        Ok(Regime { train: a.parse()?, test: b.trim_start_matches(['-', '>']).parse()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub noise: NoiseModel,
    pub tracker: TrackerConfig,
    pub predictor: CvaeConfig,
    pub map_mode: MapMode,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Independent repetitions (sub-seeds) of each experiment.
    pub repetitions: usize,
    pub regimes: Vec<Regime>,
    /// Source of train and test windows in the map and latent ablations.
    pub ablation_source: Source,
    /// IOU for matching tracks to ground truth in tracking evaluation.
    pub eval_iou: f64,
    pub iou_sweep: Vec<f64>,
    pub z_dims: Vec<usize>,
    /// Caps the number of training windows (uniformly subsampled); 0 keeps all.
    pub max_train_windows: usize,
    /// Caps the number of test windows per source (uniformly subsampled); 0 keeps all.
    pub max_test_windows: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            scenario: ScenarioConfig::default(),
            noise: NoiseModel::default(),
            tracker: TrackerConfig::default(),
            predictor: CvaeConfig::default(),
            map_mode: MapMode::ShapePose,
            train_scenes: 60,
            test_scenes: 20,
            repetitions: 3,
            regimes: Regime::ALL.to_vec(),
            ablation_source: Source::Gt,
            eval_iou: 0.3,
            iou_sweep: vec![0.4, 0.5, 0.7],
            z_dims: vec![2, 32, 64],
            max_train_windows: 0,
            max_test_windows: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.scenario.validate()?;
        self.noise.validate()?;
        self.tracker.validate()?;
        self.predictor.validate()?;
        if self.regimes.is_empty() {
            return Err(Error::InvalidConfig("at least one train/test regime is required".into()));
        }
        if self.train_scenes == 0 || self.test_scenes == 0 || self.repetitions == 0 {
            return Err(Error::InvalidConfig("scene counts and repetitions must be positive".into()));
        }
        if !(self.eval_iou > 0.0 && self.eval_iou < 1.0) {
            return Err(Error::InvalidConfig("eval_iou must be in (0, 1)".into()));
        }
        if self.iou_sweep.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("iou_sweep values must be in [0, 1]".into()));
        }
        if self.z_dims.contains(&0) {
            return Err(Error::InvalidConfig("z_dims must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn digest(&self) -> Result<String> {
        config_digest(self)
    }

    /// Tracker configuration with the measurement model matched to the
    /// detector noise.
    pub fn effective_tracker(&self) -> TrackerConfig {
        TrackerConfig {
            measurement_noise: MeasurementNoise {
                pos: self.noise.sigma_pos,
                yaw: self.noise.sigma_yaw,
                dim: self.noise.sigma_dim,
            },
            ..self.tracker.clone()
        }
    }

    /// Scene seeds of a split. Train and test seeds come from different
    /// stage names and are checked for overlap by the harness.
    pub fn scene_seeds(&self, split: Split, repetition: usize) -> Vec<u64> {
        let (stage, n) = match split {
            Split::Train => ("scene-train", self.train_scenes),
            Split::Test => ("scene-test", self.test_scenes),
        };
        let rep_seed = seeds::derive_seed(self.seed, "repetition", repetition as u64);
        (0..n as u64).map(|i| seeds::derive_seed(rep_seed, stage, i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Everything produced for one simulated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRun {
    pub seed: u64,
    pub gt: GroundTruthLog,
    pub detections: DetectionLog,
    pub tracking: TrackingResult,
}

impl SceneRun {
    pub fn eval_frames(&self) -> Vec<EvalFrame> {
        eval_frames(&self.gt, &self.tracking)
    }
}

/// Simulates, detects and tracks one scene.
pub fn run_scene(cfg: &ExperimentConfig, scene_seed: u64) -> Result<SceneRun> {
    run_scene_with(&cfg.scenario, &cfg.noise, &cfg.effective_tracker(), scene_seed)
}

pub fn run_scene_with(scenario: &ScenarioConfig, noise: &NoiseModel, tracker: &TrackerConfig, scene_seed: u64) -> Result<SceneRun> {
    let gt = simulate(&ScenarioConfig { seed: scene_seed, ..scenario.clone() })?;
    let detections = detect_scene(&gt, noise, seeds::derive_seed(scene_seed, "detector", 0))?;
    let ego: Vec<_> = gt.frames.iter().map(|f| f.ego).collect();
    let tracking = track_scene(&detections, &ego, tracker)?;
    Ok(SceneRun { seed: scene_seed, gt, detections, tracking })
}

pub fn run_scenes(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<SceneRun>> {
    seeds.iter().map(|&s| run_scene(cfg, s)).collect()
}

/// Velocity by finite differences over a per-object sequence of
/// `(frame, box)`: backward where a previous entry exists, forward at the
/// first entry, zero for a single entry.
fn differenced(seq: &[(usize, OrientedBox)], dt: f64) -> Vec<Point2> {
    let diff = |a: &(usize, OrientedBox), b: &(usize, OrientedBox)| {
        (b.1.center() - a.1.center()).scale(1.0 / (dt * (b.0 - a.0) as f64))
    };
    (0..seq.len())
        .map(|k| match (k.checked_sub(1), seq.get(k + 1)) {
            (Some(p), _) => diff(&seq[p], &seq[k]),
            (None, Some(next)) => diff(&seq[k], next),
            (None, None) => Point2::default(),
        })
        .collect()
}

fn snapshots_from(
    n_frames: usize,
    dt: f64,
    objects: BTreeMap<u64, (AgentClass, Vec<(usize, OrientedBox)>)>,
) -> Vec<Snapshot> {
    let mut snaps: Vec<Snapshot> = (0..n_frames).map(|frame| Snapshot { frame, agents: Vec::new() }).collect();
    for (id, (class, seq)) in objects {
        let vel = differenced(&seq, dt);
        for ((frame, bbox), velocity) in seq.into_iter().zip(vel) {
            if let Some(s) = snaps.get_mut(frame) {
                s.agents.push(AgentView { id, class, bbox, velocity });
            }
        }
    }
    snaps
}

/// Per-frame agent states from ground truth.
pub fn gt_snapshots(log: &GroundTruthLog) -> Vec<Snapshot> {
    let mut objects: BTreeMap<u64, (AgentClass, Vec<(usize, OrientedBox)>)> = BTreeMap::new();
    for f in &log.frames {
        for a in &f.agents {
            objects.entry(a.id).or_insert((a.class, Vec::new())).1.push((f.frame, a.bbox));
        }
    }
    snapshots_from(log.frames.len(), log.dt(), objects)
}

/// Per-frame agent states from tracker output (every emitted box, coasted
/// ones included).
pub fn mot_snapshots(tracking: &TrackingResult, n_frames: usize, dt: f64) -> Vec<Snapshot> {
    let objects = tracking
        .trajectories
        .iter()
        .map(|t| (t.track_id, (t.class, t.history.iter().map(|e| (e.frame, e.bbox)).collect())))
        .collect();
    snapshots_from(n_frames, dt, objects)
}

fn offsets(points: &[Point2]) -> Vec<Point2> {
    points.windows(2).map(|w| w[1] - w[0]).collect()
}

fn make_sample(
    run: &SceneRun,
    source: Source,
    subject: u64,
    gt_agent: u64,
    observed: &[Point2],
    future: &[Point2],
    snaps: &[Snapshot],
    mode: MapMode,
    grid: &GridGeometry,
) -> Result<Sample> {
    let last = observed[OBS_LEN - 1];
    let mut chain = vec![last];
    chain.extend_from_slice(future);
    Ok(Sample {
        scene: run.seed,
        frame: snaps[OBS_LEN - 1].frame,
        source,
        gt_agent,
        window: ObservationWindow {
            subject,
            offsets: offsets(observed),
            maps: map_sequence(subject, snaps, mode, grid)?,
            last_position: last,
        },
        future: FutureWindow { offsets: offsets(&chain) },
    })
}

/// Stride-1 windows of `OBS_LEN` observed and `PRED_LEN` future frames.
///
/// Ground-truth windows follow each agent. Tracker windows follow each track
/// over frames where it was matched (not coasted) to one and the same
/// ground-truth agent throughout; the future targets are that agent's true
/// positions. Maps come from the same source as the trajectory.
pub fn build_dataset(runs: &[SceneRun], source: Source, mode: MapMode, grid: &GridGeometry) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for run in runs {
        let n = run.gt.frames.len();
        if n < WINDOW_LEN {
            return Err(Error::SceneTooShort { frames: n, needed: WINDOW_LEN });
        }
        let dt = run.gt.dt();
        let gt_pos = |frame: usize, id: u64| run.gt.frames.get(frame).and_then(|f| f.agent(id)).map(|a| a.bbox.center());
        match source {
            Source::Gt => {
                let snaps = gt_snapshots(&run.gt);
                let mut ids: Vec<u64> = run.gt.frames.iter().flat_map(|f| f.agents.iter().map(|a| a.id)).collect();
                ids.sort_unstable();
                ids.dedup();
                for s in 0..=n - WINDOW_LEN {
                    for &id in &ids {
                        let pts: Option<Vec<Point2>> = (s..s + WINDOW_LEN).map(|f| gt_pos(f, id)).collect();
                        let Some(pts) = pts else { continue };
                        out.push(make_sample(
                            run,
                            source,
                            id,
                            id,
                            &pts[..OBS_LEN],
                            &pts[OBS_LEN..],
                            &snaps[s..s + OBS_LEN],
                            mode,
                            grid,
                        )?);
                    }
                }
            }
            Source::Mot => {
                let snaps = mot_snapshots(&run.tracking, n, dt);
                for s in 0..=n - WINDOW_LEN {
                    for t in &run.tracking.trajectories {
                        let by_frame: BTreeMap<usize, _> =
                            t.history.iter().filter(|e| !e.coasted).map(|e| (e.frame, e)).collect();
                        let entries: Option<Vec<_>> = (s..s + WINDOW_LEN).map(|f| by_frame.get(&f).copied()).collect();
                        let Some(entries) = entries else { continue };
                        let Some(agent) = entries[0].source_id else { continue };
                        if entries.iter().any(|e| e.source_id != Some(agent)) {
                            continue;
                        }
                        let future: Option<Vec<Point2>> = (s + OBS_LEN..s + WINDOW_LEN).map(|f| gt_pos(f, agent)).collect();
                        let Some(future) = future else { continue };
                        let observed: Vec<Point2> = entries[..OBS_LEN].iter().map(|e| e.bbox.center()).collect();
                        out.push(make_sample(
                            run,
                            source,
                            t.track_id,
                            agent,
                            &observed,
                            &future,
                            &snaps[s..s + OBS_LEN],
                            mode,
                            grid,
                        )?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Keeps at most `cap` samples, evenly spaced; `0` keeps everything.
pub fn subsample(samples: Vec<Sample>, cap: usize) -> Vec<Sample> {
    if cap == 0 || samples.len() <= cap {
        return samples;
    }
    let n = samples.len();
    let keep: std::collections::BTreeSet<usize> = (0..cap).map(|i| i * n / cap).collect();
    samples.into_iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, s)| s).collect()
}

/// Mean best-of-K errors for `K ∈ K_VALUES`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionScores {
    pub windows: usize,
    pub min_ade: [f64; 3],
    pub min_fde: [f64; 3],
}

impl PredictionScores {
    fn from_sets<'a>(items: impl Iterator<Item = (PredictionSet, &'a Sample)>) -> Result<Self> {
        let mut s = PredictionScores::default();
        for (pred, sample) in items {
            let gt = sample.future.positions(sample.window.last_position);
            for (k, (a, f)) in best_of_k(&pred, &gt, &K_VALUES)?.into_iter().enumerate() {
                s.min_ade[k] += a;
                s.min_fde[k] += f;
            }
            s.windows += 1;
        }
        if s.windows > 0 {
            let n = s.windows as f64;
            s.min_ade.iter_mut().chain(s.min_fde.iter_mut()).for_each(|v| *v /= n);
        }
        Ok(s)
    }

    pub fn ade10(&self) -> f64 {
        self.min_ade[2]
    }

    pub fn fde10(&self) -> f64 {
        self.min_fde[2]
    }
}

/// Draws `max(K_VALUES)` samples per window and scores nested prefixes.
/// Window `i` uses the stream `(seed, "predict", i)`.
pub fn evaluate_model(model: &CvaeModel, samples: &[Sample], seed: u64) -> Result<PredictionScores> {
    let k = *K_VALUES.iter().max().expect("non-empty");
    let sets: Result<Vec<PredictionSet>> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| model.sample_predictions(&s.window, k, &mut seeds::stream(seed, "predict", i as u64)))
        .collect();
    PredictionScores::from_sets(sets?.into_iter().zip(samples))
}

pub fn evaluate_cv_baseline(samples: &[Sample]) -> Result<PredictionScores> {
    PredictionScores::from_sets(samples.iter().map(|s| (PredictionSet { trajectories: vec![cv_baseline(&s.window)] }, s)))
}

/// Trains on one dataset; the model seed is derived from `seed` and `tag`.
pub fn train_model(samples: &[Sample], cfg: &CvaeConfig, seed: u64, tag: &str) -> Result<CvaeModel> {
    let (model, report) = crate::predictor::train_with(samples, cfg, seeds::derive_seed(seed, tag, 0), |e, v| {
        log::debug!("epoch {e}: validation loss {v:.6}")
    })?;
    log::info!(
        "trained {} epochs on {} windows, best epoch {} (validation loss {:.6})",
        report.epochs_run,
        samples.len(),
        report.best_epoch,
        report.val_loss.get(report.best_epoch).copied().unwrap_or(f64::NAN)
    );
    Ok(model)
}
