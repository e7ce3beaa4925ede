//! Study runners and their report tables.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    build_dataset, evaluate_cv_baseline, evaluate_model, run_scene_with, run_scenes, subsample, train_model,
    ExperimentConfig, PredictionScores, Regime, SceneRun, Split, K_VALUES,
};
use crate::dynamic_map::MapMode;
use crate::error::{Error, Result};
use crate::geometry::IouScale;
use crate::metrics::amota_amotp;
use crate::predictor::{CvaeConfig, Sample, Source};
use crate::seeds;
use crate::tracker::{StateUpdateMode, TrackerConfig};

/// A rectangular report. Every row ends with the producing config digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub config_digest: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, config_digest: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            config_digest: config_digest.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(String::as_str).chain(["config_digest"]))?;
        for r in &self.rows {
            w.write_record(r.iter().map(String::as_str).chain([self.config_digest.as_str()]))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Fixed-precision rendering used in every table.
pub fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// One trained variant evaluated on one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub variant: String,
    pub repetition: usize,
    pub train_windows: usize,
    pub scores: PredictionScores,
}

/// Results of a prediction study: variants × repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionStudy {
    pub name: String,
    pub config_digest: String,
    pub variants: Vec<String>,
    /// Variant the percentage deltas are taken against.
    pub reference: Option<String>,
    pub rows: Vec<PredictionRow>,
}

impl PredictionStudy {
    pub fn runs(&self, variant: &str) -> Vec<&PredictionRow> {
        self.rows.iter().filter(|r| r.variant == variant).collect()
    }

    /// Unweighted mean over repetitions.
    pub fn mean(&self, variant: &str) -> Option<PredictionScores> {
        let runs = self.runs(variant);
        if runs.is_empty() {
            return None;
        }
        let n = runs.len() as f64;
        let mut m = PredictionScores { windows: runs.iter().map(|r| r.scores.windows).sum(), ..Default::default() };
        for r in &runs {
            for k in 0..K_VALUES.len() {
                m.min_ade[k] += r.scores.min_ade[k] / n;
                m.min_fde[k] += r.scores.min_fde[k] / n;
            }
        }
        Some(m)
    }

    fn score_columns() -> Vec<String> {
        K_VALUES
            .iter()
            .map(|k| format!("min_ade_{k}"))
            .chain(K_VALUES.iter().map(|k| format!("min_fde_{k}")))
            .collect()
    }

    fn score_cells(s: &PredictionScores) -> Vec<String> {
        s.min_ade.iter().chain(&s.min_fde).map(|v| fmt(*v)).collect()
    }

    /// Mean over repetitions per variant, with deltas against the reference.
    pub fn summary_table(&self) -> Table {
        let mut cols = vec!["variant".to_string(), "repetitions".into(), "test_windows".into()];
        cols.extend(Self::score_columns());
        if self.reference.is_some() {
            cols.extend(["delta_ade_10_pct".to_string(), "delta_fde_10_pct".into()]);
        }
        let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        let mut t = Table::new(&self.name, &self.config_digest, &refs);
        let reference = self.reference.as_deref().and_then(|r| self.mean(r));
        for v in &self.variants {
            let Some(m) = self.mean(v) else { continue };
            let mut row = vec![v.clone(), self.runs(v).len().to_string(), m.windows.to_string()];
            row.extend(Self::score_cells(&m));
            if self.reference.is_some() {
                let pct = |a: f64, b: f64| if b > 0.0 { fmt(100.0 * (a - b) / b) } else { "nan".into() };
                match reference {
                    Some(r) => row.extend([pct(m.ade10(), r.ade10()), pct(m.fde10(), r.fde10())]),
                    None => row.extend(["nan".to_string(), "nan".into()]),
                }
            }
            t.push(row);
        }
        t
    }

    /// One row per variant and repetition.
    pub fn runs_table(&self) -> Table {
        let mut cols = vec!["variant".to_string(), "repetition".into(), "train_windows".into(), "test_windows".into()];
        cols.extend(Self::score_columns());
        let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        let mut t = Table::new(&format!("{}_runs", self.name), &self.config_digest, &refs);
        for r in &self.rows {
            let mut row =
                vec![r.variant.clone(), r.repetition.to_string(), r.train_windows.to_string(), r.scores.windows.to_string()];
            row.extend(Self::score_cells(&r.scores));
            t.push(row);
        }
        t
    }
}

/// Train and test runs for one repetition.
pub struct RepetitionData {
    pub repetition: usize,
    pub train: Vec<SceneRun>,
    pub test: Vec<SceneRun>,
}

pub fn prepare_repetition(cfg: &ExperimentConfig, repetition: usize) -> Result<RepetitionData> {
    let train_seeds = cfg.scene_seeds(Split::Train, repetition);
    let test_seeds = cfg.scene_seeds(Split::Test, repetition);
    let train_set: BTreeSet<u64> = train_seeds.iter().copied().collect();
    if let Some(s) = test_seeds.iter().find(|s| train_set.contains(s)) {
        return Err(Error::InvalidConfig(format!("scene seed {s} appears in both train and test splits")));
    }
    log::info!("repetition {repetition}: simulating {} train and {} test scenes", train_seeds.len(), test_seeds.len());
    Ok(RepetitionData { repetition, train: run_scenes(cfg, &train_seeds)?, test: run_scenes(cfg, &test_seeds)? })
}

fn rep_seed(cfg: &ExperimentConfig, repetition: usize) -> u64 {
    seeds::derive_seed(cfg.seed, "repetition", repetition as u64)
}

fn dataset(cfg: &ExperimentConfig, runs: &[SceneRun], source: Source, mode: MapMode, cap: usize) -> Result<Vec<Sample>> {
    let samples = build_dataset(runs, source, mode, &cfg.predictor.grid)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(subsample(samples, cap))
}

/// Trains on `train` and evaluates on `test` with seeds shared across
/// variants of the same repetition.
fn fit_and_score(
    cfg: &ExperimentConfig,
    predictor: &CvaeConfig,
    repetition: usize,
    train: &[Sample],
    tests: &[&[Sample]],
) -> Result<Vec<PredictionScores>> {
    let seed = rep_seed(cfg, repetition);
    let model = train_model(train, predictor, seed, "model")?;
    tests.iter().map(|t| evaluate_model(&model, t, seeds::derive_seed(seed, "eval", 0))).collect()
}

/// Train/test source matrix. Variants are labelled `train->test`; the
/// constant-velocity baseline appears as `cv->test`.
pub fn run_table6(cfg: &ExperimentConfig) -> Result<PredictionStudy> {
    cfg.validate()?;
    let digest = cfg.digest()?;
    let train_sources: BTreeSet<Source> = cfg.regimes.iter().map(|r| r.train).collect();
    let test_sources: BTreeSet<Source> = cfg.regimes.iter().map(|r| r.test).collect();
    let mut variants: Vec<String> = cfg.regimes.iter().map(Regime::label).collect();
    variants.extend(test_sources.iter().map(|s| format!("cv->{}", s.name())));
    let reference = Regime { train: Source::Mot, test: Source::Mot };
    let mut rows = Vec::new();
    for rep in 0..cfg.repetitions {
        let data = prepare_repetition(cfg, rep)?;
        let tests: Vec<(Source, Vec<Sample>)> = test_sources
            .iter()
            .map(|&s| Ok((s, dataset(cfg, &data.test, s, cfg.map_mode, cfg.max_test_windows)?)))
            .collect::<Result<_>>()?;
        for &train_src in &train_sources {
            let train = dataset(cfg, &data.train, train_src, cfg.map_mode, cfg.max_train_windows)?;
            log::info!("repetition {rep}: training on {} {} windows", train.len(), train_src.name());
            let wanted: Vec<&(Source, Vec<Sample>)> =
                tests.iter().filter(|(s, _)| cfg.regimes.contains(&Regime { train: train_src, test: *s })).collect();
            let sets: Vec<&[Sample]> = wanted.iter().map(|(_, v)| v.as_slice()).collect();
            let scores = fit_and_score(cfg, &cfg.predictor, rep, &train, &sets)?;
            for ((test_src, _), s) in wanted.iter().zip(scores) {
                let regime = Regime { train: train_src, test: *test_src };
                rows.push(PredictionRow { variant: regime.label(), repetition: rep, train_windows: train.len(), scores: s });
            }
        }
        for (s, set) in &tests {
            rows.push(PredictionRow {
                variant: format!("cv->{}", s.name()),
                repetition: rep,
                train_windows: 0,
                scores: evaluate_cv_baseline(set)?,
            });
        }
    }
    rows.sort_by_key(|r| (variants.iter().position(|v| *v == r.variant), r.repetition));
    Ok(PredictionStudy {
        name: "table6".into(),
        config_digest: digest,
        variants,
        reference: cfg.regimes.contains(&reference).then(|| reference.label()),
        rows,
    })
}

/// One training run per map mode on shared data and seeds.
pub fn run_map_ablation(cfg: &ExperimentConfig) -> Result<PredictionStudy> {
    run_variants(cfg, "table4", MapMode::ALL.iter().map(|m| (m.name().to_string(), *m, cfg.predictor.clone())).collect())
}

/// One training run per latent size on shared data and seeds.
pub fn run_zdim_sweep(cfg: &ExperimentConfig) -> Result<PredictionStudy> {
    run_variants(
        cfg,
        "table3",
        cfg.z_dims
            .iter()
            .map(|&z| (format!("z_{z}"), cfg.map_mode, CvaeConfig { z_dim: z, ..cfg.predictor.clone() }))
            .collect(),
    )
}

fn run_variants(cfg: &ExperimentConfig, name: &str, variants: Vec<(String, MapMode, CvaeConfig)>) -> Result<PredictionStudy> {
    cfg.validate()?;
    let digest = cfg.digest()?;
    let src = cfg.ablation_source;
    let mut rows = Vec::new();
    for rep in 0..cfg.repetitions {
        let data = prepare_repetition(cfg, rep)?;
        for (label, mode, predictor) in &variants {
            predictor.validate()?;
            let train = dataset(cfg, &data.train, src, *mode, cfg.max_train_windows)?;
            let test = dataset(cfg, &data.test, src, *mode, cfg.max_test_windows)?;
            log::info!("repetition {rep}: variant {label}, {} train windows", train.len());
            let scores = fit_and_score(cfg, predictor, rep, &train, &[&test])?;
            rows.push(PredictionRow {
                variant: label.clone(),
                repetition: rep,
                train_windows: train.len(),
                scores: scores[0],
            });
        }
    }
    Ok(PredictionStudy {
        name: name.into(),
        config_digest: digest,
        variants: variants.into_iter().map(|v| v.0).collect(),
        reference: None,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub iou_threshold: f64,
    pub state_update: StateUpdateMode,
    pub iou_scale: IouScale,
    pub amota: f64,
    pub amotp: f64,
    pub mota: f64,
    pub id_switches: usize,
    pub false_positives: usize,
    pub misses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingStudy {
    pub config_digest: String,
    /// Threshold at which the state-update and scale comparison is reported.
    pub reference_iou: f64,
    pub rows: Vec<TrackingRow>,
}

fn state_name(m: StateUpdateMode) -> &'static str {
    match m {
        StateUpdateMode::Lifespan => "lifespan",
        StateUpdateMode::OneTime => "one_time",
    }
}

fn scale_name(s: IouScale) -> &'static str {
    match s {
        IouScale::Raw => "raw",
        IouScale::Normalized => "normalized",
    }
}

impl TrackingStudy {
    pub fn row(&self, iou: f64, state: StateUpdateMode, scale: IouScale) -> Option<&TrackingRow> {
        self.rows.iter().find(|r| r.iou_threshold == iou && r.state_update == state && r.iou_scale == scale)
    }

    fn table<'a>(&self, name: &str, rows: impl Iterator<Item = &'a TrackingRow>) -> Table {
        let mut t = Table::new(
            name,
            &self.config_digest,
            &["iou_threshold", "iou_scale", "state_update", "amota", "amotp", "mota", "id_switches", "false_positives", "misses"],
        );
        for r in rows {
            t.push(vec![
                fmt(r.iou_threshold),
                scale_name(r.iou_scale).into(),
                state_name(r.state_update).into(),
                fmt(r.amota),
                fmt(r.amotp),
                fmt(r.mota),
                r.id_switches.to_string(),
                r.false_positives.to_string(),
                r.misses.to_string(),
            ]);
        }
        t
    }

    /// IOU scale and state update compared at the reference threshold.
    pub fn table1(&self) -> Table {
        self.table("table1", self.rows.iter().filter(|r| r.iou_threshold == self.reference_iou))
    }

    /// Threshold sweep with raw IOU and one-time state update.
    pub fn table2(&self) -> Table {
        self.table(
            "table2",
            self.rows.iter().filter(|r| r.iou_scale == IouScale::Raw && r.state_update == StateUpdateMode::OneTime),
        )
    }

    pub fn grid_table(&self) -> Table {
        self.table("tracking_grid", self.rows.iter())
    }
}

/// Tracker-only sweep over threshold × state update × IOU scale, pooled over
/// the test scenes of every repetition.
pub fn run_iou_sweep(cfg: &ExperimentConfig) -> Result<TrackingStudy> {
    cfg.validate()?;
    if cfg.iou_sweep.is_empty() {
        return Err(Error::InvalidConfig("iou_sweep is empty".into()));
    }
    let digest = cfg.digest()?;
    let seeds: Vec<u64> = (0..cfg.repetitions).flat_map(|r| cfg.scene_seeds(Split::Test, r)).collect();
    let base = cfg.effective_tracker();
    let mut rows = Vec::new();
    for &iou in &cfg.iou_sweep {
        for state in [StateUpdateMode::Lifespan, StateUpdateMode::OneTime] {
            for scale in [IouScale::Raw, IouScale::Normalized] {
                let tracker = TrackerConfig { iou_threshold: iou, state_update: state, iou_scale: scale, ..base.clone() };
                log::info!("tracking sweep: iou {iou}, {}, {}", state_name(state), scale_name(scale));
                let frames: Vec<_> = seeds
                    .iter()
                    .map(|&s| Ok(run_scene_with(&cfg.scenario, &cfg.noise, &tracker, s)?.eval_frames()))
                    .collect::<Result<_>>()?;
                let rep = amota_amotp(&frames, cfg.eval_iou);
                rows.push(TrackingRow {
                    iou_threshold: iou,
                    state_update: state,
                    iou_scale: scale,
                    amota: rep.amota,
                    amotp: rep.amotp,
                    mota: rep.mota,
                    id_switches: rep.counts.idsw,
                    false_positives: rep.counts.fp,
                    misses: rep.counts.fn_,
                });
            }
        }
    }
    let reference_iou = if cfg.iou_sweep.contains(&cfg.tracker.iou_threshold) {
        cfg.tracker.iou_threshold
    } else {
        cfg.iou_sweep[0]
    };
    Ok(TrackingStudy { config_digest: digest, reference_iou, rows })
}
