//! Online detection, tracking and trajectory prediction on synthetic driving
//! scenes.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: oriented boxes, frame transforms, polygon IOU
//! - [`scene`]: ground-truth scene simulation
//! - [`detector`]: noisy detections from ground truth
//! - [`tracker`]: Kalman / Hungarian multi-object tracking
//! - [`dynamic_map`]: agent-centered occupancy / speed / heading grids
//! - [`nn`]: reverse-mode autodiff, dense layers and Adam
//! - [`predictor`]: CVAE trajectory predictor and baselines
//! - [`metrics`]: AMOTA / AMOTP and minADE / minFDE
//! - [`experiment`]: dataset building and the ablation harness

pub mod detector;
pub mod dynamic_map;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod scene;
pub mod seeds;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{OrientedBox, Point2, Pose2};
