//! Constant-velocity Kalman filter over the box state
//! `(cx, cy, vx, vy, yaw, length, width)`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, OrientedBox, Point2};

pub type StateVec = SVector<f64, 7>;
pub type StateCov = SMatrix<f64, 7, 7>;
type MeasVec = SVector<f64, 5>;
type MeasMat = SMatrix<f64, 5, 7>;

const YAW: usize = 4;
const INITIAL_VELOCITY_SIGMA: f64 = 10.0;
const MIN_DIM: f64 = 0.05;

/// Continuous white-noise intensities of the motion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessNoise {
    /// m/s² acceleration noise on each axis.
    pub accel: f64,
    /// rad/√s heading random walk.
    pub yaw: f64,
    /// m/√s size random walk.
    pub dim: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self { accel: 1.0, yaw: 0.1, dim: 0.01 }
    }
}

/// Standard deviations of the box measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementNoise {
    pub pos: f64,
    pub yaw: f64,
    pub dim: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self { pos: 0.3, yaw: 0.05, dim: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub cov: StateCov,
}

fn measurement_matrix() -> MeasMat {
    let mut h = MeasMat::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 4)] = 1.0;
    h[(3, 5)] = 1.0;
    h[(4, 6)] = 1.0;
    h
}

fn measurement_cov(r: &MeasurementNoise) -> SMatrix<f64, 5, 5> {
    SMatrix::<f64, 5, 5>::from_diagonal(&SVector::from([
        r.pos * r.pos,
        r.pos * r.pos,
        r.yaw * r.yaw,
        r.dim * r.dim,
        r.dim * r.dim,
    ]))
}

impl KalmanState {
    /// Starts a filter from a single box measurement with unknown velocity.
    pub fn from_box(b: &OrientedBox, r: &MeasurementNoise) -> Self {
        let mean = StateVec::from([b.cx, b.cy, 0.0, 0.0, b.yaw, b.length, b.width]);
        let vv = INITIAL_VELOCITY_SIGMA * INITIAL_VELOCITY_SIGMA;
        let cov = StateCov::from_diagonal(&StateVec::from([
            r.pos * r.pos,
            r.pos * r.pos,
            vv,
            vv,
            r.yaw * r.yaw,
            r.dim * r.dim,
            r.dim * r.dim,
        ]));
        Self { mean, cov }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> Point2 {
        Point2::new(self.mean[2], self.mean[3])
    }

    pub fn to_box(&self) -> OrientedBox {
        OrientedBox {
            cx: self.mean[0],
            cy: self.mean[1],
            length: self.mean[5].max(MIN_DIM),
            width: self.mean[6].max(MIN_DIM),
            yaw: normalize_angle(self.mean[YAW]),
        }
    }

    /// Time update: constant velocity on the center, random walk on heading
    /// and size.
    pub fn predict(&self, dt: f64, q: &ProcessNoise) -> Self {
        let mut f = StateCov::identity();
        f[(0, 2)] = dt;
        f[(1, 3)] = dt;
        let mut mean = f * self.mean;
        mean[YAW] = normalize_angle(mean[YAW]);
        let mut qm = StateCov::zeros();
        let a2 = q.accel * q.accel;
        for (p, v) in [(0, 2), (1, 3)] {
            qm[(p, p)] = a2 * dt.powi(4) / 4.0;
            qm[(p, v)] = a2 * dt.powi(3) / 2.0;
            qm[(v, p)] = a2 * dt.powi(3) / 2.0;
            qm[(v, v)] = a2 * dt * dt;
        }
        qm[(YAW, YAW)] = q.yaw * q.yaw * dt;
        qm[(5, 5)] = q.dim * q.dim * dt;
        qm[(6, 6)] = q.dim * q.dim * dt;
        let cov = f * self.cov * f.transpose() + qm;
        Self { mean, cov: symmetrize(cov) }
    }

    /// Measurement update with a detected box (Joseph form).
    pub fn update(&self, z: &OrientedBox, r: &MeasurementNoise) -> Self {
        let h = measurement_matrix();
        let rm = measurement_cov(r);
        let zv = MeasVec::from([z.cx, z.cy, z.yaw, z.length, z.width]);
        let mut innov = zv - h * self.mean;
        innov[2] = normalize_angle(innov[2]);
        // the jitter keeps S invertible when both P and R vanish on a component
        let s = h * self.cov * h.transpose() + rm + SMatrix::<f64, 5, 5>::identity() * 1e-12;
        let s_inv = s.try_inverse().unwrap_or_else(SMatrix::<f64, 5, 5>::zeros);
        let k = self.cov * h.transpose() * s_inv;
        let mut mean = self.mean + k * innov;
        mean[YAW] = normalize_angle(mean[YAW]);
        let ikh = StateCov::identity() - k * h;
        let cov = ikh * self.cov * ikh.transpose() + k * rm * k.transpose();
        Self { mean, cov: symmetrize(cov) }
    }

    pub fn is_spd(&self) -> bool {
        self.cov.cholesky().is_some()
    }
}

fn symmetrize(m: StateCov) -> StateCov {
    (m + m.transpose()) * 0.5
}
