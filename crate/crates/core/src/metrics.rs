//! Tracking metrics (MOTA, AMOTA / AMOTP) and best-of-K displacement errors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_oriented, OrientedBox, Point2};
use crate::predictor::PredictionSet;
use crate::scene::GroundTruthLog;
use crate::tracker::{assignment::max_weight_matching, TrackingResult};

/// Number of recall targets in the AMOTA sweep.
pub const RECALL_POINTS: usize = 40;
/// MOTP charged to recall targets the tracker cannot reach (m).
pub const UNREACHED_MOTP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub id: u64,
    pub bbox: OrientedBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackBox {
    pub id: u64,
    pub bbox: OrientedBox,
    pub confidence: f64,
}

/// Ground truth and tracker output of one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalFrame {
    pub gt: Vec<GtBox>,
    pub tracks: Vec<TrackBox>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MotCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    /// Sum of matched center distances (m).
    pub distance: f64,
}

impl MotCounts {
    pub fn add(&mut self, o: &MotCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
        self.distance += o.distance;
    }

    pub fn gt_total(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn recall(&self) -> f64 {
        if self.gt_total() == 0 {
            0.0
        } else {
            self.tp as f64 / self.gt_total() as f64
        }
    }

    /// `1 − (FP + FN + IDSW) / P`.
    pub fn mota(&self) -> f64 {
        let p = self.gt_total();
        if p == 0 {
            return if self.fp == 0 { 1.0 } else { f64::NEG_INFINITY };
        }
        1.0 - (self.fp + self.fn_ + self.idsw) as f64 / p as f64
    }

    /// Mean matched center distance; `None` without matches.
    pub fn motp(&self) -> Option<f64> {
        (self.tp > 0).then(|| self.distance / self.tp as f64)
    }
}

/// Matches one frame. Correspondences from `last_match` (GT id → track id of
/// its most recent match) are kept when still above threshold; remaining
/// objects are paired by maximum-IOU assignment among pairs with
/// `IOU ≥ threshold`. An identity switch is counted when a GT object matches
/// a track other than its most recent one. `last_match` is updated.
pub fn match_frame(
    gt: &[GtBox],
    tracks: &[TrackBox],
    threshold: f64,
    last_match: &mut BTreeMap<u64, u64>,
) -> (MotCounts, Vec<(u64, u64)>) {
    let iou: Vec<Vec<f64>> = gt.iter().map(|g| tracks.iter().map(|t| iou_oriented(&g.bbox, &t.bbox)).collect()).collect();
    let mut gt_used = vec![false; gt.len()];
    let mut tr_used = vec![false; tracks.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (gi, g) in gt.iter().enumerate() {
        if let Some(&tid) = last_match.get(&g.id) {
            if let Some(ti) = tracks.iter().position(|t| t.id == tid) {
                if !tr_used[ti] && iou[gi][ti] >= threshold {
                    gt_used[gi] = true;
                    tr_used[ti] = true;
                    pairs.push((gi, ti));
                }
            }
        }
    }
    let free_g: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let free_t: Vec<usize> = (0..tracks.len()).filter(|&i| !tr_used[i]).collect();
    if !free_g.is_empty() && !free_t.is_empty() {
        // pairs below threshold score 0 and are discarded after assignment
        let score: Vec<Vec<f64>> = free_g
            .iter()
            .map(|&g| free_t.iter().map(|&t| if iou[g][t] >= threshold { iou[g][t] } else { 0.0 }).collect())
            .collect();
        for (a, b) in max_weight_matching(&score) {
            let (g, t) = (free_g[a], free_t[b]);
            if iou[g][t] >= threshold {
                pairs.push((g, t));
            }
        }
    }
    pairs.sort_unstable();
    let mut c = MotCounts { tp: pairs.len(), fp: tracks.len() - pairs.len(), fn_: gt.len() - pairs.len(), ..Default::default() };
    let mut ids = Vec::with_capacity(pairs.len());
    for &(g, t) in &pairs {
        let (gid, tid) = (gt[g].id, tracks[t].id);
        if let Some(prev) = last_match.insert(gid, tid) {
            if prev != tid {
                c.idsw += 1;
            }
        }
        c.distance += gt[g].bbox.center().dist(tracks[t].bbox.center());
        ids.push((gid, tid));
    }
    (c, ids)
}

/// Accumulated counts over scenes, keeping only track boxes with
/// `confidence ≥ min_confidence`.
pub fn evaluate_scenes(scenes: &[Vec<EvalFrame>], threshold: f64, min_confidence: f64) -> MotCounts {
    let mut total = MotCounts::default();
    for frames in scenes {
        let mut last = BTreeMap::new();
        for f in frames {
            let kept: Vec<TrackBox> = f.tracks.iter().filter(|t| t.confidence >= min_confidence).copied().collect();
            let (c, _) = match_frame(&f.gt, &kept, threshold, &mut last);
            total.add(&c);
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub target: f64,
    /// Confidence threshold used; `None` when the target is unreachable.
    pub threshold: Option<f64>,
    pub recall: f64,
    pub motar: f64,
    pub motp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmotaReport {
    pub amota: f64,
    pub amotp: f64,
    /// MOTA over all boxes.
    pub mota: f64,
    pub counts: MotCounts,
    pub points: Vec<RecallPoint>,
}

/// Recall-normalized MOTA at achieved recall `r` over `p` GT objects.
pub fn motar(c: &MotCounts, r: f64, p: usize) -> f64 {
    if r <= 0.0 || p == 0 {
        return 0.0;
    }
    let p = p as f64;
    let v = 1.0 - ((c.fp + c.fn_ + c.idsw) as f64 - (1.0 - r) * p) / (r * p);
    v.clamp(0.0, 1.0)
}

/// Sweeps `RECALL_POINTS` recall targets `r = i / RECALL_POINTS`. For each
/// target the highest confidence threshold whose achieved recall reaches it
/// is located by bisection over the distinct track confidences; MOTAR and
/// MOTP are measured there. Unreachable targets score MOTAR 0 and MOTP
/// [`UNREACHED_MOTP`].
pub fn amota_amotp(scenes: &[Vec<EvalFrame>], threshold: f64) -> AmotaReport {
    let mut levels: Vec<f64> = scenes.iter().flatten().flat_map(|f| f.tracks.iter().map(|t| t.confidence)).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let mut cache: BTreeMap<usize, MotCounts> = BTreeMap::new();
    let mut at = |k: usize| *cache.entry(k).or_insert_with(|| evaluate_scenes(scenes, threshold, levels[k]));
    let all = if levels.is_empty() { evaluate_scenes(scenes, threshold, f64::INFINITY) } else { at(levels.len() - 1) };
    let p = all.gt_total();
    let mut points = Vec::with_capacity(RECALL_POINTS);
    for i in 1..=RECALL_POINTS {
        let target = i as f64 / RECALL_POINTS as f64;
        // tolerate rounding in i / N versus tp / p
        let reaches = |c: &MotCounts| c.recall() + 1e-12 >= target;
        if levels.is_empty() || !reaches(&all) {
            points.push(RecallPoint { target, threshold: None, recall: all.recall(), motar: 0.0, motp: UNREACHED_MOTP });
            continue;
        }
        // smallest index (highest threshold) that reaches the target
        let (mut lo, mut hi) = (0usize, levels.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if reaches(&at(mid)) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let c = at(lo);
        let r = c.recall();
        points.push(RecallPoint {
            target,
            threshold: Some(levels[lo]),
            recall: r,
            motar: motar(&c, r, p),
            motp: c.motp().unwrap_or(UNREACHED_MOTP),
        });
    }
    let n = points.len() as f64;
    AmotaReport {
        amota: points.iter().map(|q| q.motar).sum::<f64>() / n,
        amotp: points.iter().map(|q| q.motp).sum::<f64>() / n,
        mota: all.mota(),
        counts: all,
        points,
    }
}

/// Pairs each ground-truth frame with the tracker output at that frame.
pub fn eval_frames(gt: &GroundTruthLog, tracking: &TrackingResult) -> Vec<EvalFrame> {
    let by_frame: BTreeMap<usize, &crate::tracker::TrackFrame> = tracking.frames.iter().map(|f| (f.frame, f)).collect();
    gt.frames
        .iter()
        .map(|f| EvalFrame {
            gt: f.agents.iter().map(|a| GtBox { id: a.id, bbox: a.bbox }).collect(),
            tracks: by_frame
                .get(&f.frame)
                .map(|tf| tf.tracks.iter().map(|t| TrackBox { id: t.track_id, bbox: t.bbox, confidence: t.confidence }).collect())
                .unwrap_or_default(),
        })
        .collect()
}

/// `(minADE, minFDE)` over the samples of `pred`; the two minima may come
/// from different samples.
pub fn min_ade_fde(pred: &PredictionSet, gt: &[Point2]) -> Result<(f64, f64)> {
    if pred.trajectories.is_empty() || gt.is_empty() {
        return Err(Error::Shape { expected: "non-empty prediction and ground truth".into(), got: "empty".into() });
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for t in &pred.trajectories {
        if t.len() != gt.len() {
            return Err(Error::Shape { expected: format!("{} points", gt.len()), got: format!("{} points", t.len()) });
        }
        let ade = t.iter().zip(gt).map(|(a, b)| a.dist(*b)).sum::<f64>() / gt.len() as f64;
        let fde = t[t.len() - 1].dist(gt[gt.len() - 1]);
        best.0 = best.0.min(ade);
        best.1 = best.1.min(fde);
    }
    Ok(best)
}

/// Best-of-K errors for several `K` on nested prefixes of one sample set.
pub fn best_of_k(pred: &PredictionSet, gt: &[Point2], ks: &[usize]) -> Result<Vec<(f64, f64)>> {
    ks.iter()
        .map(|&k| {
            let k = k.clamp(1, pred.trajectories.len().max(1));
            let prefix = PredictionSet { trajectories: pred.trajectories[..k.min(pred.trajectories.len())].to_vec() };
            min_ade_fde(&prefix, gt)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn gbox(id: u64, x: f64, y: f64) -> GtBox {
        GtBox { id, bbox: OrientedBox::new(x, y, 4.0, 2.0, 0.0).unwrap() }
    }

    fn tbox(id: u64, x: f64, y: f64, c: f64) -> TrackBox {
        TrackBox { id, bbox: OrientedBox::new(x, y, 4.0, 2.0, 0.0).unwrap(), confidence: c }
    }

    #[test]
    fn perfect_frame() {
        let gt: Vec<GtBox> = (0..5).map(|i| gbox(i, 10.0 * i as f64, 0.0)).collect();
        let tr: Vec<TrackBox> = (0..5).map(|i| tbox(100 + i, 10.0 * i as f64, 0.0, 0.9)).collect();
        let (c, ids) = match_frame(&gt, &tr, 0.5, &mut BTreeMap::new());
        assert_eq!((c.tp, c.fp, c.fn_, c.idsw), (5, 0, 0, 0));
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn one_clutter_track() {
        let gt: Vec<GtBox> = (0..10).map(|i| gbox(i, 10.0 * i as f64, 0.0)).collect();
        let mut tr: Vec<TrackBox> = (0..10).map(|i| tbox(i, 10.0 * i as f64, 0.0, 0.9)).collect();
        tr.push(tbox(99, 0.0, 50.0, 0.2));
        let (c, _) = match_frame(&gt, &tr, 0.5, &mut BTreeMap::new());
        assert_eq!(c.fp, 1);
        assert!((c.mota() - 0.9).abs() < 1e-15);
    }

    /// Two agents cross at frame 2; after the crossing the tracker swaps ids.
    fn crossing() -> Vec<EvalFrame> {
        let xs = [-4.0, -2.0, 0.0, 2.0, 4.0];
        xs.iter()
            .enumerate()
            .map(|(k, &x)| {
                let gt = vec![gbox(1, x, 0.5), gbox(2, -x, -0.5)];
                let (a, b) = if k <= 2 { (10, 20) } else { (20, 10) };
                let tracks = vec![tbox(a, x, 0.5, 0.9), tbox(b, -x, -0.5, 0.9)];
                EvalFrame { gt, tracks }
            })
            .collect()
    }

    #[test]
    fn crossing_swap_counts_two_switches() {
        // correspondence table: gt1→10, gt2→20 for k ≤ 2; gt1→20, gt2→10 after
        let c = evaluate_scenes(&[crossing()], 0.5, 0.0);
        assert_eq!(c.idsw, 2);
        assert_eq!((c.tp, c.fp, c.fn_), (10, 0, 0));
    }

    #[test]
    fn persistence_keeps_previous_match() {
        // two tracks both overlap gt 1; the previously matched one wins even
        // though the other has higher IOU
        let mut last = BTreeMap::from([(1u64, 7u64)]);
        let gt = [gbox(1, 0.0, 0.0)];
        let tr = [tbox(7, 0.8, 0.0, 0.9), tbox(8, 0.1, 0.0, 0.9)];
        let (c, ids) = match_frame(&gt, &tr, 0.5, &mut last);
        assert_eq!(ids, vec![(1, 7)]);
        assert_eq!((c.idsw, c.fp), (0, 1));
    }

    #[test]
    fn noiseless_high_threshold() {
        let gt: Vec<GtBox> = (0..4).map(|i| gbox(i, 7.0 * i as f64, 1.0)).collect();
        let tr: Vec<TrackBox> = gt.iter().map(|g| TrackBox { id: g.id + 50, bbox: g.bbox, confidence: 1.0 }).collect();
        let (c, _) = match_frame(&gt, &tr, 0.999, &mut BTreeMap::new());
        assert_eq!((c.fp, c.fn_), (0, 0));
    }

    #[test]
    fn amota_perfect_and_empty() {
        let perfect: Vec<EvalFrame> = (0..6)
            .map(|k| EvalFrame { gt: vec![gbox(1, k as f64, 0.0)], tracks: vec![tbox(3, k as f64, 0.0, 0.5 + 0.05 * k as f64)] })
            .collect();
        let r = amota_amotp(&[perfect.clone()], 0.5);
        assert_eq!(r.amota, 1.0);
        assert_eq!(r.amotp, 0.0);
        let empty: Vec<EvalFrame> = perfect.iter().map(|f| EvalFrame { gt: f.gt.clone(), tracks: vec![] }).collect();
        let r = amota_amotp(&[empty], 0.5);
        assert_eq!(r.amota, 0.0);
        assert_eq!(r.amotp, UNREACHED_MOTP);
    }

    #[test]
    fn amota_eight_of_ten() {
        // one GT agent, tracked in 8 of 10 frames, no false positives, equal
        // confidence: targets up to 0.8 are reached with MOTAR 1 (32 of 40)
        let frames: Vec<EvalFrame> = (0..10)
            .map(|k| EvalFrame {
                gt: vec![gbox(1, k as f64, 0.0)],
                tracks: if k < 8 { vec![tbox(5, k as f64, 0.2, 0.7)] } else { vec![] },
            })
            .collect();
        let r = amota_amotp(&[frames], 0.5);
        assert!((r.amota - 0.8).abs() < 1e-12);
        // reached points: MOTP 0.2; unreached: 2.0
        assert!((r.amotp - (32.0 * 0.2 + 8.0 * 2.0) / 40.0).abs() < 1e-12);
        assert!((r.mota - 0.8).abs() < 1e-12);
    }

    /// Naive reference: for every target scan all thresholds linearly.
    fn naive_amota(scenes: &[Vec<EvalFrame>], thr: f64) -> (f64, f64) {
        let mut levels: Vec<f64> = scenes.iter().flatten().flat_map(|f| f.tracks.iter().map(|t| t.confidence)).collect();
        levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
        levels.dedup();
        let p = evaluate_scenes(scenes, thr, f64::INFINITY).fn_;
        let (mut sa, mut sp) = (0.0, 0.0);
        for i in 1..=40 {
            let target = i as f64 / 40.0;
            let hit = levels.iter().map(|&l| evaluate_scenes(scenes, thr, l)).find(|c| c.tp as f64 / p as f64 + 1e-12 >= target);
            match hit {
                Some(c) => {
                    let r = c.tp as f64 / p as f64;
                    let m = 1.0 - ((c.fp + c.fn_ + c.idsw) as f64 - (1.0 - r) * p as f64) / (r * p as f64);
                    sa += m.max(0.0).min(1.0);
                    sp += c.distance / c.tp as f64;
                }
                None => sp += 2.0,
            }
        }
        (sa / 40.0, sp / 40.0)
    }

    #[test]
    fn amota_matches_naive_sweep() {
        let mut rng = seeds::stream(8, "amota-naive", 0);
        for _ in 0..20 {
            let n_frames = rng.gen_range(3..8);
            let frames: Vec<EvalFrame> = (0..n_frames)
                .map(|k| {
                    let gt: Vec<GtBox> = (0..3).map(|i| gbox(i, 10.0 * i as f64 + k as f64, 0.0)).collect();
                    let mut tracks = Vec::new();
                    for g in &gt {
                        if rng.gen_bool(0.8) {
                            tracks.push(tbox(g.id + 10, g.bbox.cx + rng.gen_range(-0.3..0.3), 0.0, 0.9 - 0.2 * g.id as f64));
                        }
                    }
                    if rng.gen_bool(0.3) {
                        tracks.push(tbox(99, 0.0, 40.0, 0.15));
                    }
                    EvalFrame { gt, tracks }
                })
                .collect();
            let r = amota_amotp(&[frames.clone()], 0.3);
            let (a, p) = naive_amota(&[frames], 0.3);
            assert!((r.amota - a).abs() < 1e-12 && (r.amotp - p).abs() < 1e-12, "{} {} vs {a} {p}", r.amota, r.amotp);
        }
    }

    #[test]
    fn min_confidence_clutter_never_helps() {
        let mut rng = seeds::stream(9, "amota-clutter", 0);
        for _ in 0..20 {
            let frames: Vec<EvalFrame> = (0..6)
                .map(|k| {
                    let gt: Vec<GtBox> = (0..3).map(|i| gbox(i, 10.0 * i as f64 + k as f64, 0.0)).collect();
                    let mut tracks = Vec::new();
                    for g in &gt {
                        if rng.gen_bool(0.7) {
                            tracks.push(tbox(g.id, g.bbox.cx, 0.0, rng.gen_range(0.3..1.0)));
                        }
                    }
                    EvalFrame { gt, tracks }
                })
                .collect();
            let base = amota_amotp(&[frames.clone()], 0.5).amota;
            let mut noisy = frames.clone();
            noisy[2].tracks.push(tbox(77, 0.0, 60.0, 0.01));
            assert!(amota_amotp(&[noisy], 0.5).amota <= base);
        }
    }

    #[test]
    fn mota_bounded() {
        let c = MotCounts { tp: 5, fp: 0, fn_: 0, idsw: 0, distance: 0.0 };
        assert_eq!(c.mota(), 1.0);
        let c = MotCounts { idsw: 1, ..c };
        assert!(c.mota() < 1.0);
    }

    fn traj(pts: &[(f64, f64)]) -> Vec<Point2> {
        pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    #[test]
    fn displacement_examples() {
        let gt = traj(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        let exact = PredictionSet { trajectories: vec![gt.clone()] };
        assert_eq!(min_ade_fde(&exact, &gt).unwrap(), (0.0, 0.0));
        let shifted = PredictionSet { trajectories: vec![gt.iter().map(|p| *p + Point2::new(0.0, 1.0)).collect()] };
        assert_eq!(min_ade_fde(&shifted, &gt).unwrap(), (1.0, 1.0));
        let off = gt.iter().map(|p| *p + Point2::new(5.0, 0.0)).collect::<Vec<_>>();
        let three = PredictionSet { trajectories: vec![off.clone(), gt.clone(), off] };
        assert_eq!(min_ade_fde(&three, &gt).unwrap(), (0.0, 0.0));
        let short = PredictionSet { trajectories: vec![gt[..2].to_vec()] };
        assert!(min_ade_fde(&short, &gt).is_err());
    }

    #[test]
    fn random_sets_match_double_loop() {
        let mut rng = seeds::stream(10, "ade-naive", 0);
        for _ in 0..200 {
            let gt: Vec<Point2> = (0..8).map(|_| Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
            let set: Vec<Vec<Point2>> =
                (0..5).map(|_| (0..8).map(|_| Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect()).collect();
            let mut ade = f64::INFINITY;
            let mut fde = f64::INFINITY;
            for s in &set {
                let mut sum = 0.0;
                for j in 0..8 {
                    sum += ((s[j].x - gt[j].x).powi(2) + (s[j].y - gt[j].y).powi(2)).sqrt();
                }
                ade = ade.min(sum / 8.0);
                fde = fde.min(((s[7].x - gt[7].x).powi(2) + (s[7].y - gt[7].y).powi(2)).sqrt());
            }
            let got = min_ade_fde(&PredictionSet { trajectories: set.clone() }, &gt).unwrap();
            assert_eq!(got, (ade, fde));
            let nested = best_of_k(&PredictionSet { trajectories: set }, &gt, &[1, 3, 5]).unwrap();
            assert!(nested[2].0 <= nested[1].0 && nested[1].0 <= nested[0].0);
        }
    }
}
