//! Parameterized detection-noise model turning ground truth into per-frame
//! noisy detections with appearance embeddings.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point2};
use crate::scene::{occlusion_fraction, AgentClass, GroundTruthLog, GtFrame};
use crate::seeds::{self, Rng};

pub const EMBED_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub class: AgentClass,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub confidence: f64,
    pub embedding: Vec<f64>,
    /// Ground-truth agent behind the detection; `None` for clutter. Only the
    /// metrics and dataset builder read this.
    pub source_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub sigma_pos: f64,
    pub sigma_dim: f64,
    pub sigma_yaw: f64,
    pub miss_base: f64,
    pub miss_occlusion_gain: f64,
    /// Adds `distance / scale` to the miss probability; `0` disables the term.
    pub miss_distance_scale: f64,
    /// Expected false positives per frame.
    pub clutter_rate: f64,
    pub sigma_embed: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_pos: 0.3,
            sigma_dim: 0.1,
            sigma_yaw: 0.05,
            miss_base: 0.05,
            miss_occlusion_gain: 0.3,
            miss_distance_scale: 0.0,
            clutter_rate: 0.5,
            sigma_embed: 0.1,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            sigma_pos: 0.0,
            sigma_dim: 0.0,
            sigma_yaw: 0.0,
            miss_base: 0.0,
            miss_occlusion_gain: 0.0,
            miss_distance_scale: 0.0,
            clutter_rate: 0.0,
            sigma_embed: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma_pos", self.sigma_pos),
            ("sigma_dim", self.sigma_dim),
            ("sigma_yaw", self.sigma_yaw),
            ("miss_base", self.miss_base),
            ("miss_occlusion_gain", self.miss_occlusion_gain),
            ("miss_distance_scale", self.miss_distance_scale),
            ("clutter_rate", self.clutter_rate),
            ("sigma_embed", self.sigma_embed),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("noise {name} must be non-negative, got {v}")));
            }
        }
        if self.miss_base > 1.0 {
            return Err(Error::InvalidConfig("miss_base must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn miss_probability(&self, occlusion: f64, distance: f64) -> f64 {
        let range_term = if self.miss_distance_scale > 0.0 { distance / self.miss_distance_scale } else { 0.0 };
        (self.miss_base + self.miss_occlusion_gain * occlusion + range_term).clamp(0.0, 1.0)
    }
}

pub fn random_unit(rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..EMBED_DIM).map(|_| StandardNormal.sample(rng)).collect();
        let n = l2(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2(a);
    let nb = l2(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Fixed appearance vector of a ground-truth agent.
pub fn anchor_embedding(seed: u64, agent: u64) -> Vec<f64> {
    random_unit(&mut seeds::stream(seed, "embedding-anchor", agent))
}

fn gaussian(rng: &mut Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

/// Detects one ground-truth frame. `seed` keys the per-agent appearance
/// anchors; `rng` is this frame's noise stream.
pub fn detect_frame(
    gt: &GtFrame,
    noise: &NoiseModel,
    extent: (f64, f64),
    seed: u64,
    rng: &mut Rng,
) -> Vec<Detection> {
    let boxes: Vec<OrientedBox> = gt.agents.iter().map(|a| a.bbox).collect();
    let mut out = Vec::new();
    for (i, agent) in gt.agents.iter().enumerate() {
        let others: Vec<OrientedBox> =
            boxes.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, b)| *b).collect();
        let occ = occlusion_fraction(&gt.ego, &agent.bbox, &others);
        let distance = agent.bbox.center().dist(gt.ego.position());
        let p_miss = noise.miss_probability(occ, distance);
        let u: f64 = rng.gen();
        if u < p_miss {
            continue;
        }
        let b = agent.bbox;
        let bbox = OrientedBox::new(
            b.cx + gaussian(rng, noise.sigma_pos),
            b.cy + gaussian(rng, noise.sigma_pos),
            (b.length + gaussian(rng, noise.sigma_dim)).max(0.1),
            (b.width + gaussian(rng, noise.sigma_dim)).max(0.1),
            b.yaw + gaussian(rng, noise.sigma_yaw),
        )
        .expect("perturbed box stays valid");
        let mut embedding = anchor_embedding(seed, agent.id);
        for e in embedding.iter_mut() {
            *e += gaussian(rng, noise.sigma_embed);
        }
        let n = l2(&embedding);
        embedding.iter_mut().for_each(|e| *e /= n);
        out.push(Detection {
            frame: gt.frame,
            class: agent.class,
            bbox,
            confidence: (1.0 - occ).max(0.1),
            embedding,
            source_id: Some(agent.id),
        });
    }
    let clutter = if noise.clutter_rate > 0.0 {
        Poisson::new(noise.clutter_rate).expect("rate validated").sample(rng) as usize
    } else {
        0
    };
    for _ in 0..clutter {
        let class = AgentClass::ALL[rng.gen_range(0..3)];
        let (l, w) = class.default_dims();
        let c = Point2::new(rng.gen_range(-0.5..0.5) * extent.0, rng.gen_range(-0.5..0.5) * extent.1);
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        out.push(Detection {
            frame: gt.frame,
            class,
            bbox: OrientedBox::new(c.x, c.y, l, w, yaw).expect("class dims are positive"),
            confidence: rng.gen_range(0.1..0.6),
            embedding: random_unit(rng),
            source_id: None,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub frame: usize,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLog {
    pub frame_rate: f64,
    pub extent: (f64, f64),
    pub frames: Vec<DetectionFrame>,
}

/// Detects every frame of a scene; frame `t` draws from the stream
/// `(seed, "detect", t)`.
pub fn detect_scene(log: &GroundTruthLog, noise: &NoiseModel, seed: u64) -> Result<DetectionLog> {
    noise.validate()?;
    let frames = log
        .frames
        .iter()
        .map(|f| {
            let mut rng = seeds::stream(seed, "detect", f.frame as u64);
            DetectionFrame { frame: f.frame, detections: detect_frame(f, noise, log.extent, seed, &mut rng) }
        })
        .collect();
    Ok(DetectionLog { frame_rate: log.frame_rate, extent: log.extent, frames })
}
