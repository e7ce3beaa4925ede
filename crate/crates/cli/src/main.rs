use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use trackcast::detector::{detect_scene, DetectionFrame, DetectionLog};
use trackcast::dynamic_map::MapMode;
use trackcast::experiment::io::{read_ndjson, write_ndjson, OutputDir, RunManifest};
use trackcast::experiment::render::{birdseye_svg, BirdseyeScene};
use trackcast::experiment::tables::{run_iou_sweep, run_map_ablation, run_table6, run_zdim_sweep, Table};
use trackcast::experiment::{
    build_dataset, evaluate_model, run_scene, run_scenes, subsample, ExperimentConfig, Regime, Split,
};
use trackcast::metrics::amota_amotp;
use trackcast::predictor::{train_with, CvaeModel, PredictionSet, Sample, Source};
use trackcast::scene::{simulate, GroundTruthLog, GtFrame, ScenarioConfig};
use trackcast::seeds;
use trackcast::tracker::track_scene;

const GT_FORMAT: &str = "trackcast-ground-truth";
const DET_FORMAT: &str = "trackcast-detections";
const DATASET_FORMAT: &str = "trackcast-dataset";
const PRED_FORMAT: &str = "trackcast-predictions";

#[derive(Parser)]
#[command(name = "trackcast", version, about = "Detection, tracking and trajectory prediction on synthetic scenes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the dynamic-map mode.
    #[arg(long, global = true)]
    mode: Option<MapMode>,
    /// Restricts the train/test regimes, e.g. `gt:mot`. Repeatable.
    #[arg(long, global = true)]
    regime: Vec<Regime>,
}

#[derive(Subcommand)]
enum Command {
    /// Prints the default config as TOML.
    DefaultConfig,
    /// Simulates one scene and writes its ground-truth log.
    Simulate,
    /// Runs the detector model over a ground-truth log.
    Detect {
        #[arg(long)]
        input: PathBuf,
    },
    /// Tracks a detection log; the ground-truth log supplies ego poses.
    Track {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Simulates a split and writes its prediction windows.
    BuildDataset {
        #[arg(long, value_enum, default_value_t = SourceArg::Gt)]
        source: SourceArg,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Trains the predictor on a dataset file and writes a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Samples predictions for every window of a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Scores a checkpoint on a dataset, or the tracker on the test split
    /// when no checkpoint is given.
    Evaluate {
        #[arg(long, requires = "dataset")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Runs one of the study tables.
    Experiment {
        #[arg(value_enum)]
        table: TableArg,
    },
    /// Draws a bird's-eye view of one scene instant as SVG.
    Render {
        #[arg(long, default_value_t = 10)]
        frame: usize,
        /// Adds K predicted samples per tracked agent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Gt,
    Mot,
}

impl From<SourceArg> for Source {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Gt => Source::Gt,
            SourceArg::Mot => Source::Mot,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Table1,
    Table2,
    Table3,
    Table4,
    Table6,
}

#[derive(Serialize, Deserialize)]
struct LogMeta {
    frame_rate: f64,
    extent: (f64, f64),
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    source: Source,
    mode: MapMode,
    config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    scene: u64,
    frame: usize,
    subject: u64,
    trajectories: PredictionSet,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.map_mode = m;
    }
    if !common.regime.is_empty() {
        cfg.regimes = common.regime.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn read_gt(path: &Path) -> Result<GroundTruthLog> {
    let (meta, frames): (LogMeta, Vec<GtFrame>) = read_ndjson(open(path)?, GT_FORMAT)?;
    Ok(GroundTruthLog { frame_rate: meta.frame_rate, extent: meta.extent, frames })
}

fn read_dataset(path: &Path) -> Result<(DatasetMeta, Vec<Sample>)> {
    Ok(read_ndjson(open(path)?, DATASET_FORMAT)?)
}

fn write_table(out: &mut OutputDir, t: &Table) -> Result<()> {
    out.write(&format!("{}.csv", t.name), t.to_csv()?.as_bytes())?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli.common)?;
    let digest = cfg.digest()?;
    let mut manifest = RunManifest::new(&std::env::args().skip(1).collect::<Vec<_>>().join(" "), &digest);
    manifest.seeds.insert("master".into(), cfg.seed);

    if let Command::DefaultConfig = cli.command {
        print!("{}", ExperimentConfig::default().to_toml_string()?);
        return Ok(());
    }
    let mut out = OutputDir::create(&cli.common.out)?;
    out.write("config.toml", cfg.to_toml_string()?.as_bytes())?;

    match cli.command {
        Command::DefaultConfig => unreachable!("handled above"),
        Command::Simulate => {
            let scenario = ScenarioConfig { seed: cfg.seed, ..cfg.scenario.clone() };
            let log = manifest.timed("simulate", || simulate(&scenario))?;
            let meta = LogMeta { frame_rate: log.frame_rate, extent: log.extent, seed: cfg.seed };
            let mut buf = Vec::new();
            write_ndjson(&mut buf, GT_FORMAT, &meta, &log.frames)?;
            out.write("gt.ndjson", &buf)?;
            log::info!("{} frames written", log.frames.len());
        }
        Command::Detect { input } => {
            let gt = read_gt(&input)?;
            let seed = seeds::derive_seed(cfg.seed, "detector", 0);
            manifest.seeds.insert("detector".into(), seed);
            let dets = manifest.timed("detect", || detect_scene(&gt, &cfg.noise, seed))?;
            let meta = LogMeta { frame_rate: dets.frame_rate, extent: dets.extent, seed };
            let mut buf = Vec::new();
            write_ndjson(&mut buf, DET_FORMAT, &meta, &dets.frames)?;
            out.write("detections.ndjson", &buf)?;
        }
        Command::Track { input, gt } => {
            let (meta, frames): (LogMeta, Vec<DetectionFrame>) = read_ndjson(open(&input)?, DET_FORMAT)?;
            let dets = DetectionLog { frame_rate: meta.frame_rate, extent: meta.extent, frames };
            let ego: Vec<_> = read_gt(&gt)?.frames.iter().map(|f| f.ego).collect();
            let result = manifest.timed("track", || track_scene(&dets, &ego, &cfg.effective_tracker()))?;
            out.write_json("tracks.json", &result)?;
            log::info!("{} trajectories", result.trajectories.len());
        }
        Command::BuildDataset { source, split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let scene_seeds = cfg.scene_seeds(split, 0);
            let runs = manifest.timed("scenes", || run_scenes(&cfg, &scene_seeds))?;
            let samples = manifest.timed("windows", || build_dataset(&runs, source.into(), cfg.map_mode, &cfg.predictor.grid))?;
            let cap = if matches!(split, Split::Train) { cfg.max_train_windows } else { cfg.max_test_windows };
            let samples = subsample(samples, cap);
            let meta = DatasetMeta { source: source.into(), mode: cfg.map_mode, config_digest: digest.clone() };
            let mut buf = Vec::new();
            write_ndjson(&mut buf, DATASET_FORMAT, &meta, &samples)?;
            out.write("dataset.ndjson", &buf)?;
            log::info!("{} windows from {} scenes", samples.len(), runs.len());
        }
        Command::Train { dataset } => {
            let (_, samples) = read_dataset(&dataset)?;
            let seed = seeds::derive_seed(cfg.seed, "train", 0);
            manifest.seeds.insert("train".into(), seed);
            let (model, report) = manifest.timed("train", || {
                train_with(&samples, &cfg.predictor, seed, |e, v| log::info!("epoch {e}: validation loss {v:.6}"))
            })?;
            out.write("checkpoint.json", model.to_checkpoint()?.to_json()?.as_bytes())?;
            out.write_json("train_report.json", &report)?;
        }
        Command::Predict { checkpoint, dataset, k } => {
            let model = CvaeModel::load_json(&std::fs::read_to_string(&checkpoint)?)?;
            let (_, samples) = read_dataset(&dataset)?;
            let mut recs = Vec::with_capacity(samples.len());
            for (i, s) in samples.iter().enumerate() {
                let set = model.sample_predictions(&s.window, k, &mut seeds::stream(cfg.seed, "predict", i as u64))?;
                recs.push(PredictionRecord { scene: s.scene, frame: s.frame, subject: s.window.subject, trajectories: set });
            }
            let mut buf = Vec::new();
            write_ndjson(&mut buf, PRED_FORMAT, &digest, &recs)?;
            out.write("predictions.ndjson", &buf)?;
        }
        Command::Evaluate { checkpoint, dataset } => match (checkpoint, dataset) {
            (Some(ck), Some(ds)) => {
                let model = CvaeModel::load_json(&std::fs::read_to_string(&ck)?)?;
                let (_, samples) = read_dataset(&ds)?;
                let scores = evaluate_model(&model, &samples, cfg.seed)?;
                out.write_json("prediction_scores.json", &scores)?;
                println!("{}", serde_json::to_string_pretty(&scores)?);
            }
            (None, None) => {
                let runs = run_scenes(&cfg, &cfg.scene_seeds(Split::Test, 0))?;
                let frames: Vec<_> = runs.iter().map(|r| r.eval_frames()).collect();
                let report = amota_amotp(&frames, cfg.eval_iou);
                out.write_json("tracking_scores.json", &report)?;
                println!("amota {:.6} amotp {:.6} mota {:.6}", report.amota, report.amotp, report.mota);
            }
            _ => bail!("--dataset without --checkpoint: nothing to evaluate"),
        },
        Command::Experiment { table } => match table {
            TableArg::Table1 | TableArg::Table2 => {
                let study = manifest.timed("iou_sweep", || run_iou_sweep(&cfg))?;
                let t = if matches!(table, TableArg::Table1) { study.table1() } else { study.table2() };
                write_table(&mut out, &t)?;
                write_table(&mut out, &study.grid_table())?;
                out.write_json(&format!("{}.json", t.name), &study)?;
                print!("{}", t.to_csv()?);
            }
            TableArg::Table3 | TableArg::Table4 | TableArg::Table6 => {
                let study = manifest.timed("study", || match table {
                    TableArg::Table3 => run_zdim_sweep(&cfg),
                    TableArg::Table4 => run_map_ablation(&cfg),
                    _ => run_table6(&cfg),
                })?;
                let summary = study.summary_table();
                write_table(&mut out, &summary)?;
                write_table(&mut out, &study.runs_table())?;
                out.write_json(&format!("{}.json", study.name), &study)?;
                print!("{}", summary.to_csv()?);
            }
        },
        Command::Render { frame, checkpoint, k } => {
            let run = run_scene(&cfg, cfg.seed)?;
            let predictions = match checkpoint {
                Some(ck) => predictions_at(&CvaeModel::load_json(&std::fs::read_to_string(&ck)?)?, &cfg, &run, frame, k)?,
                None => Vec::new(),
            };
            let scene = BirdseyeScene::at_frame(&run, frame, predictions);
            out.write("birdseye.svg", birdseye_svg(&scene).as_bytes())?;
        }
    }
    out.finish(manifest)?;
    Ok(())
}

/// Predictions for tracker windows whose last observed frame is `frame`.
fn predictions_at(
    model: &CvaeModel,
    cfg: &ExperimentConfig,
    run: &trackcast::experiment::SceneRun,
    frame: usize,
    k: usize,
) -> Result<Vec<PredictionSet>> {
    let samples = build_dataset(std::slice::from_ref(run), Source::Mot, cfg.map_mode, &model.cfg.grid)?;
    samples
        .iter()
        .filter(|s| s.frame == frame)
        .enumerate()
        .map(|(i, s)| {
            let mut set = model.sample_predictions(&s.window, k, &mut seeds::stream(cfg.seed, "render", i as u64))?;
            for t in &mut set.trajectories {
                t.insert(0, s.window.last_position);
            }
            Ok(set)
        })
        .collect()
}
