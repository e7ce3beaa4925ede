//! Ground-truth scene generation: an ego vehicle plus heterogeneous agents
//! moving under closed-form kinematics inside a bounded world.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_oriented, normalize_angle, AngularInterval, OrientedBox, Point2, Pose2};
use crate::seeds::{self, Rng};

/// Minimum simulated span that still admits one observation + prediction
/// window (2.5 s observed, 4 s predicted).
pub const MIN_DURATION: f64 = 6.5;
const SPAWN_CLEARANCE: f64 = 2.0;
const SPAWN_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentClass {
    pub const ALL: [AgentClass; 3] = [AgentClass::Vehicle, AgentClass::Pedestrian, AgentClass::Cyclist];

    /// Default footprint `(length, width)` in meters.
    pub fn default_dims(self) -> (f64, f64) {
        match self {
            AgentClass::Vehicle => (4.5, 1.9),
            AgentClass::Pedestrian => (0.6, 0.6),
            AgentClass::Cyclist => (1.8, 0.6),
        }
    }

    fn speed_range(self) -> (f64, f64) {
        match self {
            AgentClass::Vehicle => (3.0, 9.0),
            AgentClass::Pedestrian => (0.5, 1.8),
            AgentClass::Cyclist => (2.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionModel {
    ConstantVelocity,
    /// Constant speed with heading rotating at `omega` rad/s.
    ConstantTurnRate { omega: f64 },
    /// Drive through `targets` in order at `speed`, then keep going straight.
    Waypoint { targets: Vec<Point2>, speed: f64 },
}

impl MotionModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            MotionModel::ConstantVelocity => Ok(()),
            MotionModel::ConstantTurnRate { omega } if omega.abs() <= 1.0 => Ok(()),
            MotionModel::ConstantTurnRate { omega } => {
                Err(Error::InvalidConfig(format!("turn rate {omega} exceeds 1 rad/s")))
            }
            MotionModel::Waypoint { speed, .. } if *speed >= 0.0 => Ok(()),
            MotionModel::Waypoint { speed, .. } => Err(Error::InvalidConfig(format!("negative waypoint speed {speed}"))),
        }
    }
}

/// Kinematic state of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: Point2,
    pub velocity: Point2,
    pub yaw: f64,
    /// Index of the next waypoint; unused by the other motion models.
    #[serde(default)]
    pub waypoint: usize,
}

impl KinematicState {
    pub fn new(position: Point2, velocity: Point2) -> Self {
        let yaw = if velocity.norm() > 1e-9 { velocity.y.atan2(velocity.x) } else { 0.0 };
        Self { position, velocity, yaw, waypoint: 0 }
    }
}

/// Advances one agent by `dt` seconds with the exact closed-form solution of
/// its motion model. Yaw follows the velocity direction while moving.
pub fn step_agent(state: &KinematicState, model: &MotionModel, dt: f64) -> KinematicState {
    debug_assert!(dt > 0.0);
    let mut next = *state;
    match model {
        MotionModel::ConstantVelocity => {
            next.position = state.position + state.velocity.scale(dt);
        }
        MotionModel::ConstantTurnRate { omega } => {
            let speed = state.velocity.norm();
            if (omega * dt).abs() < 1e-12 || speed == 0.0 {
                next.position = state.position + state.velocity.scale(dt);
            } else {
                let psi = state.velocity.y.atan2(state.velocity.x);
                let psi2 = psi + omega * dt;
                let r = speed / omega;
                next.position = state.position + Point2::new(r * (psi2.sin() - psi.sin()), r * (psi.cos() - psi2.cos()));
                next.velocity = Point2::new(speed * psi2.cos(), speed * psi2.sin());
            }
        }
        MotionModel::Waypoint { targets, speed } => {
            let mut budget = speed * dt;
            let mut pos = state.position;
            let mut idx = state.waypoint;
            let mut dir = state.velocity;
            while budget > 0.0 && idx < targets.len() {
                let to = targets[idx] - pos;
                let d = to.norm();
                if d <= budget {
                    pos = targets[idx];
                    budget -= d;
                    if d > 0.0 {
                        dir = to;
                    }
                    idx += 1;
                } else {
                    dir = to;
                    pos = pos + to.scale(budget / d);
                    budget = 0.0;
                }
            }
            let n = dir.norm();
            let unit = if n > 0.0 { dir.scale(1.0 / n) } else { Point2::new(1.0, 0.0) };
            if budget > 0.0 {
                pos = pos + unit.scale(budget);
            }
            next.position = pos;
            next.velocity = if n > 0.0 { unit.scale(*speed) } else { Point2::default() };
            next.waypoint = idx;
        }
    }
    if next.velocity.norm() > 1e-9 {
        next.yaw = next.velocity.y.atan2(next.velocity.x);
    }
    next
}

/// An explicitly placed agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub class: AgentClass,
    pub position: Point2,
    pub velocity: Point2,
    pub motion: MotionModel,
    /// `(length, width)`; class defaults when absent.
    #[serde(default)]
    pub dims: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub frame_rate: f64,
    pub vehicles: usize,
    pub pedestrians: usize,
    pub cyclists: usize,
    /// World size `(x, y)` in meters, centered on the origin.
    pub extent: (f64, f64),
    pub ego_start: Pose2,
    pub ego_speed: f64,
    pub ego_motion: MotionModel,
    /// Agents brake when another footprint blocks the lane ahead.
    pub interactive: bool,
    /// Probability that an agent permanently vanishes at a uniformly drawn
    /// frame in the middle half of the scene.
    pub vanish_probability: f64,
    /// Explicit agents, placed before the randomly spawned ones.
    pub agents: Vec<AgentSpec>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration: 15.0,
            frame_rate: 2.0,
            vehicles: 4,
            pedestrians: 3,
            cyclists: 2,
            extent: (120.0, 80.0),
            ego_start: Pose2::default(),
            ego_speed: 4.0,
            ego_motion: MotionModel::ConstantVelocity,
            interactive: false,
            vanish_probability: 0.0,
            agents: Vec::new(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) {
            return Err(Error::InvalidConfig(format!("frame_rate must be positive, got {}", self.frame_rate)));
        }
        if !(self.duration >= MIN_DURATION) {
            return Err(Error::InvalidConfig(format!(
                "duration {} s is shorter than the {MIN_DURATION} s observation + prediction window",
                self.duration
            )));
        }
        if !(self.extent.0 > 0.0 && self.extent.1 > 0.0) {
            return Err(Error::InvalidConfig("world extent must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.vanish_probability) {
            return Err(Error::InvalidConfig("vanish_probability must be in [0, 1]".into()));
        }
        if self.ego_speed < 0.0 {
            return Err(Error::InvalidConfig("ego speed must be non-negative".into()));
        }
        self.ego_motion.validate()?;
        for a in &self.agents {
            a.motion.validate()?;
            if let Some((l, w)) = a.dims {
                OrientedBox::new(0.0, 0.0, l, w, 0.0)?;
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize + 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    fn in_extent(&self, p: Point2) -> bool {
        p.x.abs() <= 0.5 * self.extent.0 && p.y.abs() <= 0.5 * self.extent.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtAgent {
    pub id: u64,
    pub class: AgentClass,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub velocity: Point2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtFrame {
    pub frame: usize,
    pub ego: Pose2,
    pub agents: Vec<GtAgent>,
}

impl GtFrame {
    pub fn agent(&self, id: u64) -> Option<&GtAgent> {
        self.agents.iter().find(|a| a.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLog {
    pub frame_rate: f64,
    pub extent: (f64, f64),
    pub frames: Vec<GtFrame>,
}

impl GroundTruthLog {
    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }
}

struct LiveAgent {
    id: u64,
    class: AgentClass,
    dims: (f64, f64),
    motion: MotionModel,
    state: KinematicState,
    cruise: f64,
}

impl LiveAgent {
    fn footprint(&self) -> OrientedBox {
        OrientedBox {
            cx: self.state.position.x,
            cy: self.state.position.y,
            length: self.dims.0,
            width: self.dims.1,
            yaw: normalize_angle(self.state.yaw),
        }
    }

    fn record(&self) -> GtAgent {
        GtAgent { id: self.id, class: self.class, bbox: self.footprint(), velocity: self.state.velocity }
    }
}

fn inflated(b: &OrientedBox, margin: f64) -> OrientedBox {
    OrientedBox { length: b.length + margin, width: b.width + margin, ..*b }
}

fn collides(a: &OrientedBox, b: &OrientedBox) -> bool {
    iou_oriented(&inflated(a, SPAWN_CLEARANCE), &inflated(b, SPAWN_CLEARANCE)) > 0.0
}

fn random_agent(class: AgentClass, cfg: &ScenarioConfig, rng: &mut Rng) -> (KinematicState, MotionModel, (f64, f64)) {
    let (l, w) = class.default_dims();
    let dims = (l * rng.gen_range(0.9..1.1), w * rng.gen_range(0.9..1.1));
    let margin = 5.0;
    let pos = Point2::new(
        rng.gen_range(-0.5 * cfg.extent.0 + margin..0.5 * cfg.extent.0 - margin),
        rng.gen_range(-0.5 * cfg.extent.1 + margin..0.5 * cfg.extent.1 - margin),
    );
    let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let (lo, hi) = class.speed_range();
    let speed = rng.gen_range(lo..hi);
    let velocity = Point2::new(speed * heading.cos(), speed * heading.sin());
    let pick: f64 = rng.gen();
    let motion = if pick < 0.5 {
        MotionModel::ConstantVelocity
    } else if pick < 0.85 {
        MotionModel::ConstantTurnRate { omega: rng.gen_range(-0.25..0.25) }
    } else {
        let targets = (0..2)
            .map(|_| pos + Point2::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)))
            .collect();
        MotionModel::Waypoint { targets, speed }
    };
    (KinematicState::new(pos, velocity), motion, dims)
}

/// Per-agent speed factor for the braking rule: an agent slows down while
/// another footprint occupies the lane ahead of it.
fn blocked(agent: &LiveAgent, others: &[OrientedBox], own: usize) -> bool {
    let speed = agent.state.velocity.norm();
    if speed < 1e-6 {
        return false;
    }
    let dir = agent.state.velocity.scale(1.0 / speed);
    let reach = (1.5 * speed).max(2.0);
    let center = agent.state.position + dir.scale(0.5 * agent.dims.0 + 0.5 * reach);
    let probe = OrientedBox { cx: center.x, cy: center.y, length: reach, width: agent.dims.1, yaw: dir.y.atan2(dir.x) };
    others.iter().enumerate().any(|(i, b)| i != own && iou_oriented(&probe, b) > 0.0)
}

/// Runs a scene to completion. Deterministic in `cfg.seed`.
pub fn simulate(cfg: &ScenarioConfig) -> Result<GroundTruthLog> {
    cfg.validate()?;
    let mut rng = seeds::stream(cfg.seed, "scene", 0);
    let dt = cfg.dt();
    let ego_dims = AgentClass::Vehicle.default_dims();
    let ego_velocity = Point2::new(cfg.ego_speed * cfg.ego_start.yaw.cos(), cfg.ego_speed * cfg.ego_start.yaw.sin());
    let mut ego = KinematicState { yaw: cfg.ego_start.yaw, ..KinematicState::new(cfg.ego_start.position(), ego_velocity) };
    let ego_box = OrientedBox { cx: ego.position.x, cy: ego.position.y, length: ego_dims.0, width: ego_dims.1, yaw: ego.yaw };

    let mut agents: Vec<LiveAgent> = Vec::new();
    for spec in &cfg.agents {
        let dims = spec.dims.unwrap_or_else(|| spec.class.default_dims());
        let state = KinematicState::new(spec.position, spec.velocity);
        let cruise = match &spec.motion {
            MotionModel::Waypoint { speed, .. } => *speed,
            _ => spec.velocity.norm(),
        };
        let agent = LiveAgent { id: agents.len() as u64, class: spec.class, dims, motion: spec.motion.clone(), state, cruise };
        let fp = agent.footprint();
        if agents.iter().any(|a| iou_oriented(&a.footprint(), &fp) > 0.0) {
            return Err(Error::InvalidConfig(format!("explicit agent {} overlaps another agent", agent.id)));
        }
        agents.push(agent);
    }
    let classes = std::iter::repeat(AgentClass::Vehicle)
        .take(cfg.vehicles)
        .chain(std::iter::repeat(AgentClass::Pedestrian).take(cfg.pedestrians))
        .chain(std::iter::repeat(AgentClass::Cyclist).take(cfg.cyclists));
    for class in classes {
        let id = agents.len() as u64;
        let mut placed = None;
        for _ in 0..SPAWN_ATTEMPTS {
            let (state, motion, dims) = random_agent(class, cfg, &mut rng);
            let cruise = state.velocity.norm();
            let candidate = LiveAgent { id, class, dims, motion, state, cruise };
            let fp = candidate.footprint();
            if collides(&fp, &ego_box) || agents.iter().any(|a| collides(&a.footprint(), &fp)) {
                continue;
            }
            placed = Some(candidate);
            break;
        }
        match placed {
            Some(a) => agents.push(a),
            None => return Err(Error::SpawnFailed { agent: id as usize, attempts: SPAWN_ATTEMPTS }),
        }
    }

    let n_frames = cfg.frame_count();
    let vanish_at: Vec<Option<usize>> = agents
        .iter()
        .map(|a| {
            let mut r = seeds::stream(cfg.seed, "vanish", a.id);
            r.gen_bool(cfg.vanish_probability).then(|| r.gen_range(n_frames / 4..=(3 * n_frames / 4).max(n_frames / 4)))
        })
        .collect();
    let mut frames = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        agents.retain(|a| cfg.in_extent(a.state.position) && vanish_at[a.id as usize].map_or(true, |v| frame < v));
        frames.push(GtFrame {
            frame,
            ego: Pose2::new(ego.position.x, ego.position.y, ego.yaw),
            agents: agents.iter().map(LiveAgent::record).collect(),
        });
        if frame + 1 == n_frames {
            break;
        }
        if cfg.interactive {
            let boxes: Vec<OrientedBox> = agents.iter().map(LiveAgent::footprint).collect();
            let flags: Vec<bool> = agents.iter().enumerate().map(|(i, a)| blocked(a, &boxes, i)).collect();
            for (a, stop) in agents.iter_mut().zip(flags) {
                let speed = a.state.velocity.norm();
                let target = if stop { (speed - 4.0 * dt).max(0.0) } else { (speed + 2.0 * dt).min(a.cruise) };
                if speed > 1e-9 {
                    a.state.velocity = a.state.velocity.scale(target / speed);
                } else if target > 0.0 {
                    a.state.velocity = Point2::new(target * a.state.yaw.cos(), target * a.state.yaw.sin());
                }
                if let MotionModel::Waypoint { speed: s, .. } = &mut a.motion {
                    *s = target;
                }
            }
        }
        for a in agents.iter_mut() {
            a.state = step_agent(&a.state, &a.motion, dt);
        }
        ego = step_agent(&ego, &cfg.ego_motion, dt);
    }
    Ok(GroundTruthLog { frame_rate: cfg.frame_rate, extent: cfg.extent, frames })
}

/// Fraction of `target`'s bearing interval, seen from `ego`, that is covered
/// by occluders strictly nearer to the ego than the target.
pub fn occlusion_fraction(ego: &Pose2, target: &OrientedBox, occluders: &[OrientedBox]) -> f64 {
    let view = ego.position();
    let t = AngularInterval::of_box(view, target);
    if t.width() <= 0.0 {
        return 0.0;
    }
    let mut covered: Vec<(f64, f64)> = occluders
        .iter()
        .map(|o| AngularInterval::of_box(view, o))
        .filter(|o| o.range < t.range)
        .filter_map(|o| {
            let (lo, hi) = o.relative_to(t.bearing);
            let (lo, hi) = (lo.max(t.lo), hi.min(t.hi));
            (hi > lo).then_some((lo, hi))
        })
        .collect();
    covered.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (lo, hi) in covered {
        match cur {
            Some((cl, ch)) if lo <= ch => cur = Some((cl, ch.max(hi))),
            Some((cl, ch)) => {
                total += ch - cl;
                cur = Some((lo, hi));
            }
            None => cur = Some((lo, hi)),
        }
    }
    if let Some((cl, ch)) = cur {
        total += ch - cl;
    }
    (total / t.width()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(motion: MotionModel, velocity: Point2) -> ScenarioConfig {
        ScenarioConfig {
            duration: 10.0,
            vehicles: 0,
            pedestrians: 0,
            cyclists: 0,
            ego_start: Pose2::new(0.0, -30.0, 0.0),
            ego_speed: 0.0,
            extent: (400.0, 400.0),
            agents: vec![AgentSpec { class: AgentClass::Vehicle, position: Point2::default(), velocity, motion, dims: None }],
            ..Default::default()
        }
    }

    #[test]
    fn constant_velocity_positions() {
        let log = simulate(&single(MotionModel::ConstantVelocity, Point2::new(1.0, 0.0))).unwrap();
        assert_eq!(log.frames.len(), 21);
        for (k, f) in log.frames.iter().enumerate() {
            assert_abs_diff_eq!(f.agents[0].bbox.cx, 0.5 * k as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(f.agents[0].bbox.cy, 0.0);
        }
    }

    #[test]
    fn turn_rate_stays_on_circle() {
        // ω = 0.2 rad/s, v = 5 m/s: center of the circle is (0, 25).
        let log = simulate(&single(MotionModel::ConstantTurnRate { omega: 0.2 }, Point2::new(5.0, 0.0))).unwrap();
        for f in &log.frames {
            let p = f.agents[0].bbox.center();
            assert_abs_diff_eq!(p.dist(Point2::new(0.0, 25.0)), 25.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn step_examples() {
        let s = KinematicState::new(Point2::default(), Point2::new(0.0, 2.0));
        let n = step_agent(&s, &MotionModel::ConstantVelocity, 0.5);
        assert_abs_diff_eq!(n.position.x, 0.0);
        assert_abs_diff_eq!(n.position.y, 1.0);
        let s = KinematicState::new(Point2::new(1.0, 2.0), Point2::new(3.0, -1.0));
        let cv = step_agent(&s, &MotionModel::ConstantVelocity, 0.5);
        let ct = step_agent(&s, &MotionModel::ConstantTurnRate { omega: 0.0 }, 0.5);
        assert_eq!(cv, ct);
    }

    #[test]
    fn turn_rate_matches_fine_integration() {
        let s = KinematicState::new(Point2::default(), Point2::new(2.0, 0.0));
        let got = step_agent(&s, &MotionModel::ConstantTurnRate { omega: 0.5 }, 0.5);
        // midpoint-heading integration with 10^5 substeps
        let n = 100_000;
        let h = 0.5 / n as f64;
        let (mut x, mut y, mut psi) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..n {
            let mid = psi + 0.5 * 0.5 * h;
            x += 2.0 * mid.cos() * h;
            y += 2.0 * mid.sin() * h;
            psi += 0.5 * h;
        }
        assert!((got.position.x - x).abs() < 1e-6);
        assert!((got.position.y - y).abs() < 1e-6);
        assert_abs_diff_eq!(got.yaw, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn waypoints_are_followed() {
        let model = MotionModel::Waypoint { targets: vec![Point2::new(1.0, 0.0), Point2::new(1.0, 5.0)], speed: 2.0 };
        let s = KinematicState::new(Point2::default(), Point2::new(2.0, 0.0));
        let n = step_agent(&s, &model, 1.0);
        assert_abs_diff_eq!(n.position.x, 1.0);
        assert_abs_diff_eq!(n.position.y, 1.0);
        assert_eq!(n.waypoint, 1);
        assert_abs_diff_eq!(n.yaw, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        let n = step_agent(&n, &model, 3.0);
        assert_abs_diff_eq!(n.position.y, 7.0, epsilon = 1e-12);
        assert_eq!(n.waypoint, 2);
    }

    #[test]
    fn deterministic_and_collision_free() {
        let cfg = ScenarioConfig { seed: 42, interactive: true, ..Default::default() };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.frames.len(), cfg.frame_count());
        let first = &a.frames[0].agents;
        for i in 0..first.len() {
            for j in i + 1..first.len() {
                assert_eq!(iou_oriented(&first[i].bbox, &first[j].bbox), 0.0);
            }
        }
        let vmax = cfg.ego_speed;
        for w in a.frames.windows(2) {
            assert!(w[0].ego.position().dist(w[1].ego.position()) <= vmax * cfg.dt() + 1e-9);
        }
    }

    #[test]
    fn ids_stable_and_agents_leave() {
        let mut cfg = single(MotionModel::ConstantVelocity, Point2::new(10.0, 0.0));
        cfg.extent = (60.0, 60.0);
        let log = simulate(&cfg).unwrap();
        let alive: Vec<usize> = log.frames.iter().map(|f| f.agents.len()).collect();
        // x = 5k exceeds 30 m after frame 6
        assert_eq!(&alive[..8], &[1, 1, 1, 1, 1, 1, 1, 0]);
        assert!(log.frames.iter().all(|f| f.agents.iter().all(|a| a.id == 0)));
    }

    #[test]
    fn vanished_agents_never_return() {
        let cfg = ScenarioConfig { vanish_probability: 1.0, extent: (400.0, 400.0), seed: 4, ..Default::default() };
        let log = simulate(&cfg).unwrap();
        let n = log.frames.len();
        let mut gone_at = std::collections::BTreeMap::new();
        for f in &log.frames {
            for id in 0..9u64 {
                if f.agent(id).is_none() {
                    gone_at.entry(id).or_insert(f.frame);
                } else {
                    assert!(!gone_at.contains_key(&id), "agent {id} reappeared");
                }
            }
        }
        assert_eq!(gone_at.len(), 9);
        assert!(gone_at.values().all(|&k| k >= n / 4 && k <= 3 * n / 4));
    }

    #[test]
    fn overcrowded_config_is_rejected() {
        let cfg = ScenarioConfig { extent: (20.0, 20.0), vehicles: 40, ..Default::default() };
        assert!(matches!(simulate(&cfg), Err(Error::SpawnFailed { .. })));
        let short = ScenarioConfig { duration: 5.0, ..Default::default() };
        assert!(matches!(simulate(&short), Err(Error::InvalidConfig(_))));
        let zero_rate = ScenarioConfig { frame_rate: 0.0, ..Default::default() };
        assert!(zero_rate.validate().is_err());
    }

    fn ray_hits(origin: Point2, dir: Point2, b: &OrientedBox) -> bool {
        let c = b.corners();
        (0..4).any(|i| {
            let (p, q) = (c[i], c[(i + 1) % 4]);
            let e = q - p;
            let denom = dir.cross(e);
            if denom.abs() < 1e-15 {
                return false;
            }
            let w = p - origin;
            let t = w.cross(e) / denom;
            let u = w.cross(dir) / denom;
            t > 0.0 && (0.0..=1.0).contains(&u)
        })
    }

    #[test]
    fn occlusion_cases() {
        let ego = Pose2::default();
        let target = OrientedBox::new(20.0, 0.0, 2.0, 2.0, 0.0).unwrap();
        assert_eq!(occlusion_fraction(&ego, &target, &[]), 0.0);
        let wide = OrientedBox::new(10.0, 0.0, 2.0, 4.0, 0.0).unwrap();
        assert_abs_diff_eq!(occlusion_fraction(&ego, &target, &[wide]), 1.0);
        // farther occluders never count
        let behind = OrientedBox::new(40.0, 0.0, 2.0, 8.0, 0.0).unwrap();
        assert_eq!(occlusion_fraction(&ego, &target, &[behind]), 0.0);
    }

    #[test]
    fn occlusion_matches_ray_casting() {
        let ego = Pose2::default();
        let target = OrientedBox::new(20.0, 0.0, 2.0, 4.0, 0.3).unwrap();
        let occ = OrientedBox::new(10.0, 1.2, 1.0, 2.0, 0.0).unwrap();
        let got = occlusion_fraction(&ego, &target, &[occ]);
        assert!(got > 0.2 && got < 0.8, "occluder should cover part of the target: {got}");
        let t = AngularInterval::of_box(ego.position(), &target);
        let n = 10_000;
        let hits = (0..n)
            .filter(|&k| {
                let a = t.bearing + t.lo + (k as f64 + 0.5) / n as f64 * t.width();
                ray_hits(ego.position(), Point2::new(a.cos(), a.sin()), &occ)
            })
            .count();
        let oracle = hits as f64 / n as f64;
        assert!((got - oracle).abs() < 0.01, "{got} vs {oracle}");
    }
}
