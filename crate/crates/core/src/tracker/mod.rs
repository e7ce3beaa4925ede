//! Online tracking-by-detection: Kalman motion model, multi-cue affinity,
//! Hungarian assignment, depth-order gating and track lifecycle.

pub mod assignment;
pub mod kalman;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::{cosine, l2, Detection, DetectionLog, EMBED_DIM};
use crate::error::{Error, Result};
use crate::geometry::{iou_scaled, AngularInterval, IouScale, OrientedBox, Point2, Pose2};
use crate::scene::AgentClass;

pub use assignment::{assign, Assignment};
pub use kalman::{KalmanState, MeasurementNoise, ProcessNoise};

const EMBED_MOMENTUM: f64 = 0.9;

/// What happens to a track's state on frames where it is not matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateUpdateMode {
    /// The prediction is committed every frame and unmatched tracks coast on
    /// it until they die or leave the tracked extent; coasted boxes are
    /// reported.
    Lifespan,
    /// The prediction is only used for that frame's affinity; an unmatched
    /// track keeps its last measured state.
    #[default]
    OneTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Detections overlapping a more confident detection above this IOU are
    /// suppressed before association.
    pub iou_threshold: f64,
    /// Assignment pairs below this affinity are left unmatched.
    pub min_affinity: f64,
    pub w_motion: f64,
    pub w_center: f64,
    pub w_embed: f64,
    /// Length scale (m) of the center-distance cue.
    pub gate_distance: f64,
    pub birth_hits: u32,
    pub death_misses: u32,
    pub depth_overlap: f64,
    pub state_update: StateUpdateMode,
    pub iou_scale: IouScale,
    pub process_noise: ProcessNoise,
    pub measurement_noise: MeasurementNoise,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            min_affinity: 0.3,
            w_motion: 0.5,
            w_center: 0.2,
            w_embed: 0.3,
            gate_distance: 4.0,
            birth_hits: 2,
            death_misses: 3,
            depth_overlap: 0.5,
            state_update: StateUpdateMode::OneTime,
            iou_scale: IouScale::Raw,
            process_noise: ProcessNoise::default(),
            measurement_noise: MeasurementNoise::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_motion, self.w_center, self.w_embed];
        if w.iter().any(|x| *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("affinity weights must be non-negative and sum to 1, got {w:?}")));
        }
        for (name, v) in [
            ("iou_threshold", self.iou_threshold),
            ("min_affinity", self.min_affinity),
            ("depth_overlap", self.depth_overlap),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.gate_distance > 0.0) {
            return Err(Error::InvalidConfig("gate_distance must be positive".into()));
        }
        if self.birth_hits == 0 || self.death_misses == 0 {
            return Err(Error::InvalidConfig("birth_hits and death_misses must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub velocity: Point2,
    pub confidence: f64,
    /// Ground-truth id of the detection that produced this entry (carried
    /// over on coasted entries). Never read by the tracker itself.
    pub source_id: Option<u64>,
    pub coasted: bool,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub track_id: u64,
    pub class: AgentClass,
    pub state: KalmanState,
    pub hits: u32,
    pub consecutive_misses: u32,
    pub age: u32,
    pub confirmed: bool,
    pub embedding_mean: Vec<f64>,
    pub history: Vec<TrackEntry>,
    last_update_frame: usize,
    last_committed_frame: usize,
}

impl Track {
    fn new(track_id: u64, det: &Detection, r: &MeasurementNoise) -> Self {
        let state = KalmanState::from_box(&det.bbox, r);
        let entry = TrackEntry {
            frame: det.frame,
            bbox: det.bbox,
            velocity: state.velocity(),
            confidence: det.confidence,
            source_id: det.source_id,
            coasted: false,
        };
        Self {
            track_id,
            class: det.class,
            state,
            hits: 1,
            consecutive_misses: 0,
            age: 1,
            confirmed: false,
            embedding_mean: det.embedding.clone(),
            history: vec![entry],
            last_update_frame: det.frame,
            last_committed_frame: det.frame,
        }
    }

    fn last_entry(&self) -> &TrackEntry {
        self.history.last().expect("tracks are born with one entry")
    }
}

/// One-step constant-velocity prediction of each track over `dt` seconds.
/// Pure: track state is not modified.
pub fn predict_tracks(tracks: &[Track], dt: f64, q: &ProcessNoise) -> Vec<KalmanState> {
    tracks.iter().map(|t| t.state.predict(dt, q)).collect()
}

/// Track-to-detection affinity in `[0, 1]`: a convex combination of box
/// overlap, center proximity and appearance similarity. Pairs of different
/// classes score 0.
pub fn affinity_matrix(
    predicted: &[(AgentClass, OrientedBox, &[f64])],
    detections: &[&Detection],
    cfg: &TrackerConfig,
    extent: (f64, f64),
) -> Vec<Vec<f64>> {
    predicted
        .iter()
        .map(|(class, pbox, emb)| {
            detections
                .iter()
                .map(|d| {
                    if d.class != *class {
                        return 0.0;
                    }
                    let iou = iou_scaled(pbox, &d.bbox, cfg.iou_scale, extent);
                    let gap = pbox.center().dist(d.bbox.center());
                    let center = (-gap / cfg.gate_distance).exp();
                    let app = cosine(emb, &d.embedding).max(0.0);
                    (cfg.w_motion * iou + cfg.w_center * center + cfg.w_embed * app).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect()
}

/// Flags the farther detection of every pair whose bearing intervals, seen
/// from the ego, overlap by strictly more than `overlap_threshold` of the
/// narrower interval.
pub fn depth_order_gate(detections: &[&Detection], ego: &Pose2, overlap_threshold: f64) -> Vec<bool> {
    let view = ego.position();
    let intervals: Vec<AngularInterval> = detections.iter().map(|d| AngularInterval::of_box(view, &d.bbox)).collect();
    let mut flagged = vec![false; detections.len()];
    for i in 0..detections.len() {
        for j in i + 1..detections.len() {
            let (a, b) = (&intervals[i], &intervals[j]);
            let narrow = a.width().min(b.width());
            if narrow <= 0.0 {
                continue;
            }
            if a.overlap(b) / narrow > overlap_threshold {
                let farther = if a.range > b.range { i } else { j };
                flagged[farther] = true;
            }
        }
    }
    flagged
}

/// Greedy confidence-ordered suppression of detections whose IOU with a more
/// confident kept detection exceeds `threshold`. Returns kept indices.
pub fn suppress_overlaps(detections: &[Detection], threshold: f64, scale: IouScale, extent: (f64, f64)) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].confidence.total_cmp(&detections[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou_scaled(&detections[k].bbox, &detections[i].bbox, scale, extent) <= threshold) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub track_id: u64,
    pub class: AgentClass,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub velocity: Point2,
    pub confidence: f64,
    pub source_id: Option<u64>,
    pub coasted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame: usize,
    pub tracks: Vec<TrackedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub track_id: u64,
    pub class: AgentClass,
    pub history: Vec<TrackEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub births: usize,
    pub deaths: usize,
    pub final_tracks: Vec<u64>,
}

/// Tracker output: confirmed trajectories, the same boxes regrouped per frame,
/// and lifecycle counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub trajectories: Vec<Trajectory>,
    pub frames: Vec<TrackFrame>,
    pub summary: TrackingSummary,
}

impl TrackingResult {
    pub fn trajectory(&self, track_id: u64) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.track_id == track_id)
    }
}

/// Stateful online tracker; feed frames in increasing order.
pub struct Tracker {
    cfg: TrackerConfig,
    dt: f64,
    extent: (f64, f64),
    tracks: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
    deaths: usize,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, frame_rate: f64, extent: (f64, f64)) -> Result<Self> {
        cfg.validate()?;
        if !(frame_rate > 0.0) {
            return Err(Error::InvalidConfig("frame rate must be positive".into()));
        }
        Ok(Self {
            cfg,
            dt: 1.0 / frame_rate,
            extent,
            tracks: Vec::new(),
            finished: Vec::new(),
            next_id: 0,
            last_frame: None,
            deaths: 0,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Processes one frame: predict, gate, associate, update, lifecycle.
    pub fn step(&mut self, frame: usize, detections: &[Detection], ego: &Pose2) -> Result<()> {
        if let Some(prev) = self.last_frame {
            if frame <= prev {
                return Err(Error::FrameOrder { previous: prev, got: frame });
            }
        }
        self.last_frame = Some(frame);
        let cfg = self.cfg.clone();

        // prediction
        let predicted: Vec<KalmanState> = match cfg.state_update {
            StateUpdateMode::Lifespan => {
                for t in self.tracks.iter_mut() {
                    let steps = (frame - t.last_committed_frame) as f64;
                    t.state = t.state.predict(steps * self.dt, &cfg.process_noise);
                    t.last_committed_frame = frame;
                }
                self.tracks.iter().map(|t| t.state.clone()).collect()
            }
            StateUpdateMode::OneTime => self
                .tracks
                .iter()
                .map(|t| t.state.predict((frame - t.last_update_frame) as f64 * self.dt, &cfg.process_noise))
                .collect(),
        };

        let kept = suppress_overlaps(detections, cfg.iou_threshold, cfg.iou_scale, self.extent);
        let dets: Vec<&Detection> = kept.iter().map(|&i| &detections[i]).collect();
        let flags = depth_order_gate(&dets, ego, cfg.depth_overlap);
        let primary: Vec<usize> = (0..dets.len()).filter(|&i| !flags[i]).collect();
        let secondary: Vec<usize> = (0..dets.len()).filter(|&i| flags[i]).collect();

        let cues: Vec<(AgentClass, OrientedBox, &[f64])> = self
            .tracks
            .iter()
            .zip(&predicted)
            .map(|(t, p)| (t.class, p.to_box(), t.embedding_mean.as_slice()))
            .collect();
        let mut det_taken = vec![false; dets.len()];
        let mut matches: Vec<(usize, usize)> = Vec::new();

        let round = |tracks: &[usize], pool: &[usize]| -> Vec<(usize, usize)> {
            let sub_cues: Vec<_> = tracks.iter().map(|&t| cues[t]).collect();
            let sub_dets: Vec<&Detection> = pool.iter().map(|&d| dets[d]).collect();
            let aff = affinity_matrix(&sub_cues, &sub_dets, &cfg, self.extent);
            assign(&aff, sub_dets.len(), cfg.min_affinity)
                .matches
                .into_iter()
                .map(|(t, d)| (tracks[t], pool[d]))
                .collect()
        };
        let all_tracks: Vec<usize> = (0..self.tracks.len()).collect();
        for (t, d) in round(&all_tracks, &primary) {
            matches.push((t, d));
            det_taken[d] = true;
        }
        let mut track_taken = vec![false; self.tracks.len()];
        for &(t, _) in &matches {
            track_taken[t] = true;
        }
        let leftover: Vec<usize> = (0..self.tracks.len()).filter(|&t| !track_taken[t]).collect();
        for (t, d) in round(&leftover, &secondary) {
            matches.push((t, d));
            det_taken[d] = true;
            track_taken[t] = true;
        }

        // measurement update
        for &(t, d) in &matches {
            let det = dets[d];
            let track = &mut self.tracks[t];
            track.state = predicted[t].update(&det.bbox, &cfg.measurement_noise);
            track.last_update_frame = frame;
            track.last_committed_frame = frame;
            track.hits += 1;
            track.age += 1;
            track.consecutive_misses = 0;
            if !track.confirmed && track.hits >= cfg.birth_hits {
                track.confirmed = true;
            }
            let mut emb: Vec<f64> = track
                .embedding_mean
                .iter()
                .zip(&det.embedding)
                .map(|(m, e)| EMBED_MOMENTUM * m + (1.0 - EMBED_MOMENTUM) * e)
                .collect();
            let n = l2(&emb);
            if n > 0.0 {
                emb.iter_mut().for_each(|x| *x /= n);
            }
            track.embedding_mean = emb;
            track.history.push(TrackEntry {
                frame,
                bbox: track.state.to_box(),
                velocity: track.state.velocity(),
                confidence: det.confidence,
                source_id: det.source_id,
                coasted: false,
            });
        }

        // misses and lifecycle
        let mut survivors = Vec::with_capacity(self.tracks.len());
        for (t, mut track) in std::mem::take(&mut self.tracks).into_iter().enumerate() {
            if track_taken[t] {
                survivors.push(track);
                continue;
            }
            track.consecutive_misses += 1;
            track.age += 1;
            let c = track.state.to_box().center();
            let out_of_range = c.x.abs() > 0.5 * self.extent.0 || c.y.abs() > 0.5 * self.extent.1;
            let dead = !track.confirmed || track.consecutive_misses >= cfg.death_misses || out_of_range;
            if dead {
                if track.confirmed {
                    self.deaths += 1;
                    self.finished.push(track);
                }
                continue;
            }
            if cfg.state_update == StateUpdateMode::Lifespan {
                let last = track.last_entry().clone();
                track.history.push(TrackEntry {
                    frame,
                    bbox: track.state.to_box(),
                    velocity: track.state.velocity(),
                    confidence: last.confidence,
                    source_id: last.source_id,
                    coasted: true,
                });
            }
            survivors.push(track);
        }
        self.tracks = survivors;

        // births
        for (d, det) in dets.iter().enumerate() {
            if det_taken[d] {
                continue;
            }
            let mut track = Track::new(self.next_id, det, &cfg.measurement_noise);
            self.next_id += 1;
            if cfg.birth_hits <= 1 {
                track.confirmed = true;
            }
            self.tracks.push(track);
        }
        Ok(())
    }

    /// Closes the scene and collects confirmed tracks with at least two
    /// history entries.
    pub fn finish(mut self) -> TrackingResult {
        let final_tracks: Vec<u64> = self
            .tracks
            .iter()
            .filter(|t| t.confirmed && t.history.len() >= 2)
            .map(|t| t.track_id)
            .collect();
        let mut all: Vec<Track> = std::mem::take(&mut self.finished);
        all.extend(self.tracks.into_iter().filter(|t| t.confirmed));
        all.retain(|t| t.history.len() >= 2);
        all.sort_by_key(|t| t.track_id);

        let mut by_frame: BTreeMap<usize, Vec<TrackedObject>> = BTreeMap::new();
        for t in &all {
            for e in &t.history {
                by_frame.entry(e.frame).or_default().push(TrackedObject {
                    track_id: t.track_id,
                    class: t.class,
                    bbox: e.bbox,
                    velocity: e.velocity,
                    confidence: e.confidence,
                    source_id: e.source_id,
                    coasted: e.coasted,
                });
            }
        }
        let trajectories: Vec<Trajectory> = all
            .into_iter()
            .map(|t| Trajectory { track_id: t.track_id, class: t.class, history: t.history })
            .collect();
        TrackingResult {
            summary: TrackingSummary { births: trajectories.len(), deaths: self.deaths, final_tracks },
            frames: by_frame.into_iter().map(|(frame, tracks)| TrackFrame { frame, tracks }).collect(),
            trajectories,
        }
    }
}

/// Tracks a whole detection stream. `ego` supplies the ego pose per frame
/// for depth-order gating.
pub fn track_scene(log: &DetectionLog, ego: &[Pose2], cfg: &TrackerConfig) -> Result<TrackingResult> {
    let mut tracker = Tracker::new(cfg.clone(), log.frame_rate, log.extent)?;
    for (k, frame) in log.frames.iter().enumerate() {
        let pose = ego.get(k).copied().unwrap_or_default();
        tracker.step(frame.frame, &frame.detections, &pose)?;
    }
    Ok(tracker.finish())
}

/// An empty appearance vector, used by tests and synthetic detections.
pub fn blank_embedding() -> Vec<f64> {
    let mut e = vec![0.0; EMBED_DIM];
    e[0] = 1.0;
    e
}
