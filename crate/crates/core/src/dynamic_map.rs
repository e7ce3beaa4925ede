//! Agent-centered dynamic maps.
//!
//! A map is a `side × side` grid centered on the subject agent, with axes
//! aligned to the world frame. Every other agent present at that time step is
//! rasterized into it, filling four channels per occupied cell: occupancy,
//! normalized speed, and the sine and cosine of its heading.
//!
//! How a neighbor's footprint is rasterized depends on [`MapMode`]: a single
//! center cell, an axis-aligned rectangle of its detected size, a rectangle of
//! a class-default size rotated by its heading, or its full detected oriented
//! footprint. Cell membership is decided by testing the cell center against
//! the rectangle (boundary inclusive).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point2};
use crate::scene::AgentClass;

pub const CHANNELS: usize = 4;
/// Speeds are clipped at this value (m/s) before normalization to `[0, 1]`.
pub const SPEED_CAP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    /// Every agent occupies only the cell containing its center.
    PointApprox,
    /// Detected length and width, heading ignored.
    ShapeOnly,
    /// Heading used, class-default length and width.
    PoseOnly,
    /// Detected footprint with its heading.
    #[default]
    ShapePose,
}

impl MapMode {
    pub const ALL: [MapMode; 4] = [MapMode::PointApprox, MapMode::ShapeOnly, MapMode::PoseOnly, MapMode::ShapePose];

    pub fn name(self) -> &'static str {
        match self {
            MapMode::PointApprox => "point_approx",
            MapMode::ShapeOnly => "shape_only",
            MapMode::PoseOnly => "pose_only",
            MapMode::ShapePose => "shape_pose",
        }
    }
}

impl std::str::FromStr for MapMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MapMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown map mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridGeometry {
    /// Cells per side; odd so that the subject sits on a cell center.
    pub side: usize,
    /// Meters per cell.
    pub resolution: f64,
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self { side: 33, resolution: 1.0 }
    }
}

impl GridGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.side % 2 == 0 || self.side == 0 {
            return Err(Error::InvalidConfig(format!("map side must be odd, got {}", self.side)));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::InvalidConfig("map resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn half(&self) -> i64 {
        (self.side / 2) as i64
    }

    pub fn cells(&self) -> usize {
        self.side * self.side
    }

    /// Grid cell containing a point given relative to the map center.
    pub fn cell_of(&self, offset: Point2) -> Option<(usize, usize)> {
        let ix = (offset.x / self.resolution + 0.5).floor() as i64 + self.half();
        let iy = (offset.y / self.resolution + 0.5).floor() as i64 + self.half();
        let s = self.side as i64;
        ((0..s).contains(&ix) && (0..s).contains(&iy)).then_some((ix as usize, iy as usize))
    }

    /// Center of cell `(ix, iy)` relative to the map center.
    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            (ix as i64 - self.half()) as f64 * self.resolution,
            (iy as i64 - self.half()) as f64 * self.resolution,
        )
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.side + ix
    }
}

/// Cells covered by a footprint, as `(ix, iy)` sorted by `(iy, ix)`.
///
/// `center` is the world position of the map center. Empty when the box
/// center falls outside the grid; otherwise always contains the cell holding
/// the box center. [`MapMode::PoseOnly`] rasterizes the box as given; the
/// caller substitutes the default dimensions.
pub fn rasterize_footprint(b: &OrientedBox, center: Point2, grid: &GridGeometry, mode: MapMode) -> Vec<(usize, usize)> {
    let rel = b.center() - center;
    let Some(own) = grid.cell_of(rel) else {
        return Vec::new();
    };
    let shape = match mode {
        MapMode::PointApprox => return vec![own],
        MapMode::ShapeOnly => OrientedBox { cx: rel.x, cy: rel.y, yaw: 0.0, ..*b },
        MapMode::PoseOnly | MapMode::ShapePose => OrientedBox { cx: rel.x, cy: rel.y, ..*b },
    };
    let reach = shape.circumradius() / grid.resolution;
    let h = grid.half();
    let s = grid.side as i64;
    let lo_x = ((rel.x / grid.resolution - reach).floor() as i64 + h).max(0);
    let hi_x = ((rel.x / grid.resolution + reach).ceil() as i64 + h).min(s - 1);
    let lo_y = ((rel.y / grid.resolution - reach).floor() as i64 + h).max(0);
    let hi_y = ((rel.y / grid.resolution + reach).ceil() as i64 + h).min(s - 1);
    let mut out = Vec::new();
    for iy in lo_y..=hi_y {
        for ix in lo_x..=hi_x {
            let (ix, iy) = (ix as usize, iy as usize);
            if (ix, iy) == own || shape.contains(grid.cell_center(ix, iy)) {
                out.push((ix, iy));
            }
        }
    }
    out
}

/// Per-agent state at one time step, as consumed by the map builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: u64,
    pub class: AgentClass,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub velocity: Point2,
}

/// All agents at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub frame: usize,
    pub agents: Vec<AgentView>,
}

impl Snapshot {
    pub fn agent(&self, id: u64) -> Option<&AgentView> {
        self.agents.iter().find(|a| a.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    /// `iy * side + ix`.
    pub index: u32,
    pub occupancy: f64,
    pub speed: f64,
    pub sin: f64,
    pub cos: f64,
}

/// Sparse multi-channel grid; cells not listed are zero in every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicMap {
    pub grid: GridGeometry,
    pub mode: MapMode,
    pub center: Point2,
    /// Sorted by index.
    pub cells: Vec<MapCell>,
}

impl DynamicMap {
    pub fn cell(&self, ix: usize, iy: usize) -> Option<&MapCell> {
        let idx = self.grid.index(ix, iy) as u32;
        self.cells.binary_search_by_key(&idx, |c| c.index).ok().map(|k| &self.cells[k])
    }

    /// Dense channel plane in row-major `(iy, ix)` order.
    /// Channels: 0 occupancy, 1 speed, 2 sin heading, 3 cos heading.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        let mut plane = vec![0.0; self.grid.cells()];
        for cell in &self.cells {
            plane[cell.index as usize] = match c {
                0 => cell.occupancy,
                1 => cell.speed,
                2 => cell.sin,
                3 => cell.cos,
                _ => panic!("channel {c} out of range"),
            };
        }
        plane
    }

    /// Flattened `CHANNELS × side²` feature vector in sparse form
    /// (channel-major), skipping zeros.
    pub fn sparse_features(&self) -> (Vec<usize>, Vec<f64>) {
        let n = self.grid.cells();
        let mut idx = Vec::with_capacity(self.cells.len() * CHANNELS);
        let mut val = Vec::with_capacity(self.cells.len() * CHANNELS);
        for c in 0..CHANNELS {
            for cell in &self.cells {
                let v = [cell.occupancy, cell.speed, cell.sin, cell.cos][c];
                if v != 0.0 {
                    idx.push(c * n + cell.index as usize);
                    val.push(v);
                }
            }
        }
        (idx, val)
    }
}

/// Footprint actually rasterized for an agent under `mode`.
pub fn mode_footprint(agent: &AgentView, mode: MapMode) -> OrientedBox {
    match mode {
        MapMode::PoseOnly => {
            let (l, w) = agent.class.default_dims();
            OrientedBox { length: l, width: w, ..agent.bbox }
        }
        _ => agent.bbox,
    }
}

/// Builds the map of `subject` at one time step from every other agent in
/// `snapshot`. Where footprints overlap, the agent nearer to the subject
/// owns the cell (ties broken by lower id).
pub fn build_dynamic_map(subject: u64, snapshot: &Snapshot, mode: MapMode, grid: &GridGeometry) -> Result<DynamicMap> {
    let me = snapshot
        .agent(subject)
        .ok_or(Error::MissingSubject { subject, frame: snapshot.frame })?;
    let center = me.bbox.center();
    let mut others: Vec<(f64, &AgentView)> = snapshot
        .agents
        .iter()
        .filter(|a| a.id != subject)
        .map(|a| (a.bbox.center().dist(center), a))
        .collect();
    // farthest first so nearer agents overwrite
    others.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.id.cmp(&a.1.id)));
    let mut owner: std::collections::BTreeMap<u32, MapCell> = std::collections::BTreeMap::new();
    for (_, agent) in others {
        let fp = mode_footprint(agent, mode);
        let speed = agent.velocity.norm().min(SPEED_CAP) / SPEED_CAP;
        let (sin, cos) = agent.bbox.yaw.sin_cos();
        for (ix, iy) in rasterize_footprint(&fp, center, grid, mode) {
            let index = grid.index(ix, iy) as u32;
            owner.insert(index, MapCell { index, occupancy: 1.0, speed, sin, cos });
        }
    }
    Ok(DynamicMap { grid: *grid, mode, center, cells: owner.into_values().collect() })
}

/// One map per consecutive snapshot, each centered on the subject's position
/// at that step. The snapshots must be consecutive frames.
pub fn map_sequence(subject: u64, snapshots: &[Snapshot], mode: MapMode, grid: &GridGeometry) -> Result<Vec<DynamicMap>> {
    let mut prev: Option<usize> = None;
    snapshots
        .iter()
        .map(|s| {
            if let Some(p) = prev {
                if s.frame != p + 1 {
                    return Err(Error::HistoryGap { subject, frame: p + 1 });
                }
            }
            prev = Some(s.frame);
            if s.agent(subject).is_none() {
                return Err(Error::HistoryGap { subject, frame: s.frame });
            }
            build_dynamic_map(subject, s, mode, grid)
        })
        .collect()
}
