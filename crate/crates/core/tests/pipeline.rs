//! Cross-module properties on simulated scenes.

use proptest::prelude::*;
use trackcast::detector::{detect_scene, l2, NoiseModel};
use trackcast::dynamic_map::{GridGeometry, MapMode};
use trackcast::experiment::{build_dataset, run_scene, ExperimentConfig};
use trackcast::geometry::{iou_oriented, Point2};
use trackcast::metrics::{amota_amotp, best_of_k, evaluate_scenes, EvalFrame, TrackBox};
use trackcast::predictor::{CvaeConfig, CvaeModel, PredictionSet, Source};
use trackcast::scene::{simulate, ScenarioConfig};
use trackcast::seeds;

fn scenario(seed: u64, vehicles: usize, pedestrians: usize, cyclists: usize) -> ScenarioConfig {
    ScenarioConfig { seed, vehicles, pedestrians, cyclists, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn scenes_keep_shape_and_separation(seed in 0u64..10_000, v in 0usize..6, p in 0usize..5, c in 0usize..4) {
        let cfg = scenario(seed, v, p, c);
        let log = simulate(&cfg).unwrap();
        prop_assert_eq!(log.frames.len(), (cfg.duration * cfg.frame_rate).round() as usize + 1);
        let spawn: Vec<_> = log.frames[0].agents.iter().map(|a| a.bbox).collect();
        for (i, a) in spawn.iter().enumerate() {
            for b in &spawn[i + 1..] {
                prop_assert_eq!(iou_oriented(a, b), 0.0);
            }
        }
        let step = cfg.ego_speed * cfg.dt() + 1e-9;
        for w in log.frames.windows(2) {
            let (a, b) = (w[0].ego, w[1].ego);
            prop_assert!(Point2::new(a.x, a.y).dist(Point2::new(b.x, b.y)) <= step);
        }
    }

    #[test]
    fn detections_are_well_formed(seed in 0u64..10_000) {
        let log = simulate(&scenario(seed, 4, 3, 2)).unwrap();
        let dets = detect_scene(&log, &NoiseModel::default(), seed).unwrap();
        prop_assert_eq!(&dets, &detect_scene(&log, &NoiseModel::default(), seed).unwrap());
        for d in dets.frames.iter().flat_map(|f| &f.detections) {
            prop_assert!((0.0..=1.0).contains(&d.confidence));
            prop_assert!((l2(&d.embedding) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tracking_counts_are_consistent(seed in 0u64..10_000) {
        let cfg = ExperimentConfig { scenario: scenario(0, 4, 3, 2), ..Default::default() };
        let run = run_scene(&cfg, seed).unwrap();
        let frames = run.eval_frames();
        for f in &frames {
            let c = evaluate_scenes(std::slice::from_ref(&vec![f.clone()]), cfg.eval_iou, 0.0);
            prop_assert_eq!(c.tp + c.fn_, f.gt.len());
            prop_assert_eq!(c.tp + c.fp, f.tracks.len());
        }
        let all = evaluate_scenes(std::slice::from_ref(&frames), cfg.eval_iou, 0.0);
        prop_assert!(all.mota() <= 1.0);
        prop_assert_eq!(all.mota() == 1.0, all.fp + all.fn_ + all.idsw == 0);
        let rep = amota_amotp(std::slice::from_ref(&frames), cfg.eval_iou);
        prop_assert!((0.0..=1.0).contains(&rep.amota));
    }

    #[test]
    fn least_confident_clutter_never_raises_amota(seed in 0u64..10_000, every in 1usize..4) {
        let cfg = ExperimentConfig { scenario: scenario(0, 3, 2, 1), ..Default::default() };
        let frames = run_scene(&cfg, seed).unwrap().eval_frames();
        let floor = frames.iter().flat_map(|f| f.tracks.iter().map(|t| t.confidence)).fold(1.0, f64::min);
        let cluttered: Vec<EvalFrame> = frames
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let mut f = f.clone();
                if k % every == 0 {
                    let bbox = trackcast::geometry::OrientedBox::new(500.0, 500.0 + k as f64, 4.0, 2.0, 0.0).unwrap();
                    f.tracks.push(TrackBox { id: 9_000 + k as u64, bbox, confidence: 0.5 * floor });
                }
                f
            })
            .collect();
        let before = amota_amotp(std::slice::from_ref(&frames), cfg.eval_iou).amota;
        let after = amota_amotp(std::slice::from_ref(&cluttered), cfg.eval_iou).amota;
        prop_assert!(after <= before);
    }

    #[test]
    fn best_of_k_is_monotone_on_nested_sets(seed in 0u64..10_000) {
        let cfg = ExperimentConfig { scenario: scenario(0, 3, 2, 1), ..Default::default() };
        let run = run_scene(&cfg, seed).unwrap();
        let grid = GridGeometry { side: 9, resolution: 1.0 };
        let samples = build_dataset(&[run], Source::Mot, MapMode::ShapePose, &grid).unwrap();
        let model = CvaeModel::new(CvaeConfig { z_dim: 2, hidden: 8, map_features: 2, grid, ..Default::default() }, seed).unwrap();
        let mut rng = seeds::stream(seed, "property-sampling", 0);
        for s in samples.iter().take(20) {
            let set: PredictionSet = model.sample_predictions(&s.window, 10, &mut rng).unwrap();
            let gt = s.future.positions(s.window.last_position);
            let e = best_of_k(&set, &gt, &[1, 5, 10]).unwrap();
            prop_assert!(e[2].0 <= e[1].0 && e[1].0 <= e[0].0);
            prop_assert!(e[2].1 <= e[1].1 && e[1].1 <= e[0].1);
            prop_assert!(set.trajectories.iter().flatten().all(|p| p.x.is_finite() && p.y.is_finite()));
        }
    }
}

#[test]
fn scene_runs_are_reproducible() {
    let cfg = ExperimentConfig { scenario: scenario(0, 4, 3, 2), ..Default::default() };
    let a = run_scene(&cfg, 17).unwrap();
    let b = run_scene(&cfg, 17).unwrap();
    assert_eq!(a.gt, b.gt);
    assert_eq!(a.tracking, b.tracking);
    assert_ne!(a.gt, run_scene(&cfg, 18).unwrap().gt);
}

#[test]
fn one_window_predicts_the_same_alone_or_among_others() {
    let cfg = ExperimentConfig::default();
    let run = run_scene(&cfg, 3).unwrap();
    let grid = GridGeometry { side: 9, resolution: 1.0 };
    let samples = build_dataset(&[run], Source::Gt, MapMode::ShapePose, &grid).unwrap();
    let model = CvaeModel::new(CvaeConfig { z_dim: 2, hidden: 8, map_features: 2, grid, ..Default::default() }, 1).unwrap();
    let target = &samples[samples.len() / 2];
    let alone = model.encode_condition(&target.window).unwrap();
    for other in samples.iter().take(5) {
        model.encode_condition(&other.window).unwrap();
        assert_eq!(model.encode_condition(&target.window).unwrap(), alone);
    }
}
