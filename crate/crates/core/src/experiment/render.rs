//! Bird's-eye vector plot of one scene instant: ground-truth paths, track
//! histories as circles, predicted samples as squares, and the ego marker.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SceneRun;
use crate::error::Result;
use crate::geometry::{Point2, Pose2};
use crate::predictor::PredictionSet;

/// Pixels per meter.
const SCALE: f64 = 6.0;
const MARGIN: f64 = 40.0;
const LEGEND_HEIGHT: f64 = 30.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BirdseyeScene {
    /// World size `(x, y)` in meters, centered on the origin.
    pub extent: (f64, f64),
    pub ego: Pose2,
    pub gt_paths: Vec<Vec<Point2>>,
    pub track_histories: Vec<Vec<Point2>>,
    pub predictions: Vec<PredictionSet>,
}

impl BirdseyeScene {
    /// View of `run` at `frame`: ground truth over the whole scene, tracker
    /// histories up to and including `frame`.
    pub fn at_frame(run: &SceneRun, frame: usize, predictions: Vec<PredictionSet>) -> Self {
        let mut ids: Vec<u64> = run.gt.frames.iter().flat_map(|f| f.agents.iter().map(|a| a.id)).collect();
        ids.sort_unstable();
        ids.dedup();
        let gt_paths = ids
            .iter()
            .map(|&id| run.gt.frames.iter().filter_map(|f| f.agent(id)).map(|a| a.bbox.center()).collect())
            .collect();
        let track_histories = run
            .tracking
            .trajectories
            .iter()
            .map(|t| t.history.iter().filter(|e| e.frame <= frame).map(|e| e.bbox.center()).collect::<Vec<_>>())
            .filter(|h| !h.is_empty())
            .collect();
        let ego = run.gt.frames.get(frame).map(|f| f.ego).unwrap_or_default();
        Self { extent: run.gt.extent, ego, gt_paths, track_histories, predictions }
    }
}

struct Canvas {
    extent: (f64, f64),
}

impl Canvas {
    fn x(&self, x: f64) -> f64 {
        MARGIN + (x + 0.5 * self.extent.0) * SCALE
    }

    fn y(&self, y: f64) -> f64 {
        MARGIN + (0.5 * self.extent.1 - y) * SCALE
    }

    fn width(&self) -> f64 {
        2.0 * MARGIN + self.extent.0 * SCALE
    }

    fn height(&self) -> f64 {
        2.0 * MARGIN + self.extent.1 * SCALE + LEGEND_HEIGHT
    }

    fn points(&self, pts: &[Point2]) -> String {
        pts.iter().map(|p| format!("{:.2},{:.2}", self.x(p.x), self.y(p.y))).collect::<Vec<_>>().join(" ")
    }
}

/// Renders the SVG document. Output depends only on the input.
pub fn birdseye_svg(scene: &BirdseyeScene) -> String {
    let c = Canvas { extent: scene.extent };
    let mut s = String::new();
    let (w, h) = (c.width(), c.height());
    // String formatting into a String cannot fail.
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#);
    let _ = writeln!(s, r#"<rect class="background" x="0" y="0" width="{w:.0}" height="{h:.0}" fill="white"/>"#);

    let (x0, x1) = (c.x(-0.5 * scene.extent.0), c.x(0.5 * scene.extent.0));
    let (y0, y1) = (c.y(0.5 * scene.extent.1), c.y(-0.5 * scene.extent.1));
    let _ = writeln!(s, r#"<line class="axis" x1="{x0:.2}" y1="{:.2}" x2="{x1:.2}" y2="{:.2}" stroke="gray"/>"#, c.y(0.0), c.y(0.0));
    let _ = writeln!(s, r#"<line class="axis" x1="{:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y1:.2}" stroke="gray"/>"#, c.x(0.0), c.x(0.0));
    let _ = writeln!(s, r#"<text class="axis-label" x="{x1:.2}" y="{:.2}" font-size="10">x (m)</text>"#, c.y(0.0) - 4.0);
    let _ = writeln!(s, r#"<text class="axis-label" x="{:.2}" y="{:.2}" font-size="10">y (m)</text>"#, c.x(0.0) + 4.0, y0 + 10.0);

    for path in &scene.gt_paths {
        let _ = writeln!(s, r#"<polyline class="gt" points="{}" fill="none" stroke="green" stroke-width="1.5"/>"#, c.points(path));
    }
    for hist in &scene.track_histories {
        for p in hist {
            let _ = writeln!(s, r#"<circle class="track" cx="{:.2}" cy="{:.2}" r="2.5" fill="blue"/>"#, c.x(p.x), c.y(p.y));
        }
    }
    for set in &scene.predictions {
        for traj in &set.trajectories {
            let _ = writeln!(
                s,
                r#"<polyline class="prediction" points="{}" fill="none" stroke="red" stroke-width="0.8"/>"#,
                c.points(traj)
            );
            for p in traj {
                let _ = writeln!(
                    s,
                    r#"<rect class="prediction-point" x="{:.2}" y="{:.2}" width="4" height="4" fill="red"/>"#,
                    c.x(p.x) - 2.0,
                    c.y(p.y) - 2.0
                );
            }
        }
    }

    // Ego triangle pointing along its heading.
    let e = scene.ego;
    let tip = Point2 { x: e.x + 4.0 * e.yaw.cos(), y: e.y + 4.0 * e.yaw.sin() };
    let left = Point2 { x: e.x + 2.0 * (e.yaw + 2.4).cos(), y: e.y + 2.0 * (e.yaw + 2.4).sin() };
    let right = Point2 { x: e.x + 2.0 * (e.yaw - 2.4).cos(), y: e.y + 2.0 * (e.yaw - 2.4).sin() };
    let _ = writeln!(s, r#"<polygon class="ego" points="{}" fill="black"/>"#, c.points(&[tip, left, right]));

    let ly = h - LEGEND_HEIGHT + 5.0;
    let _ = writeln!(s, r#"<g class="legend" font-size="11">"#);
    let _ = writeln!(s, r#"<line x1="{m:.0}" y1="{ly:.0}" x2="{:.0}" y2="{ly:.0}" stroke="green" stroke-width="1.5"/>"#, MARGIN + 16.0, m = MARGIN);
    let _ = writeln!(s, r#"<text x="{:.0}" y="{:.0}">ground truth</text>"#, MARGIN + 20.0, ly + 4.0);
    let _ = writeln!(s, r#"<circle cx="{:.0}" cy="{ly:.0}" r="2.5" fill="blue"/>"#, MARGIN + 110.0);
    let _ = writeln!(s, r#"<text x="{:.0}" y="{:.0}">tracked (circles)</text>"#, MARGIN + 116.0, ly + 4.0);
    let _ = writeln!(s, r#"<rect x="{:.0}" y="{:.0}" width="4" height="4" fill="red"/>"#, MARGIN + 218.0, ly - 2.0);
    let _ = writeln!(s, r#"<text x="{:.0}" y="{:.0}">predicted (squares)</text>"#, MARGIN + 226.0, ly + 4.0);
    let _ = writeln!(s, r#"<text x="{:.0}" y="{:.0}">▲ ego</text>"#, MARGIN + 340.0, ly + 4.0);
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

pub fn render_birdseye(scene: &BirdseyeScene, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, birdseye_svg(scene))?;
    Ok(())
}
