//! Synthetic ground truth and odometry.
//!
//! Trajectories are sampled at [`RATE_HZ`]; odometry is the per-period
//! displacement between consecutive poses, corrupted by a [`NoiseProfile`].

mod generate;
mod odometry;
mod plan;
mod window;

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Point2};

pub use generate::{diff_drive_step, generate_trajectory, synthesize_steps, SimParams};
pub use odometry::{corrupt_to_odometry, integrate_odometry, odometry_positions, true_odometry};
pub use plan::{clearance_map, plan_path};
pub use window::{window, window_stream, TrajectoryWindow};

/// Operating rate of the simulator, filter and network inputs.
pub const RATE_HZ: f64 = 1.0;
/// Pedestrian window length in seconds.
pub const PEDESTRIAN_WINDOW_S: f64 = 5.0;
/// Wheeled-robot window length in seconds.
pub const WHEELED_WINDOW_S: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(t: f64, x: f64, y: f64, theta: f64) -> Self {
        Self {
            t,
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    #[inline]
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.poses.iter().map(Pose::position).collect()
    }

    pub fn start(&self) -> Option<&Pose> {
        self.poses.first()
    }
}

/// Relative motion over one sampling period, expressed in the odometry frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometrySample {
    pub t: f64,
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl OdometrySample {
    #[inline]
    pub fn displacement(&self) -> Point2 {
        Point2::new(self.dx, self.dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionProfile {
    Pedestrian,
    Wheeled,
}

impl MotionProfile {
    pub fn window_seconds(self) -> f64 {
        match self {
            MotionProfile::Pedestrian => PEDESTRIAN_WINDOW_S,
            MotionProfile::Wheeled => WHEELED_WINDOW_S,
        }
    }

    /// Number of positions in a window at [`RATE_HZ`].
    pub fn window_len(self) -> usize {
        (self.window_seconds() * RATE_HZ).round() as usize
    }
}

impl std::str::FromStr for MotionProfile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pedestrian" => Ok(MotionProfile::Pedestrian),
            "wheeled" => Ok(MotionProfile::Wheeled),
            other => Err(format!("unknown profile {other:?}")),
        }
    }
}

/// Odometry corruption model.
///
/// A multiplicative velocity bias `b ~ N(1, velocity_bias_sigma)` is drawn once
/// per block of `bias_segment_steps` samples and scales the displacements of
/// that block. White noise with standard deviation `additive_sigma` cells is
/// added to each displacement component. A nonzero `heading_drift_sigma`
/// integrates a random-walk heading error that rotates the displacements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub velocity_bias_sigma: f64,
    pub additive_sigma: f64,
    pub heading_drift_sigma: f64,
    pub bias_segment_steps: usize,
    /// Test hook: replaces every drawn bias with this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced_bias: Option<f64>,
}

impl NoiseProfile {
    pub fn pedestrian() -> Self {
        Self {
            velocity_bias_sigma: 0.5,
            additive_sigma: 0.25,
            heading_drift_sigma: 0.0,
            bias_segment_steps: MotionProfile::Pedestrian.window_len(),
            forced_bias: None,
        }
    }

    pub fn wheeled() -> Self {
        Self {
            velocity_bias_sigma: 0.1,
            additive_sigma: 0.25,
            heading_drift_sigma: 0.005,
            bias_segment_steps: MotionProfile::Wheeled.window_len(),
            forced_bias: None,
        }
    }

    pub fn for_profile(profile: MotionProfile) -> Self {
        match profile {
            MotionProfile::Pedestrian => Self::pedestrian(),
            MotionProfile::Wheeled => Self::wheeled(),
        }
    }

    pub fn zero() -> Self {
        Self {
            velocity_bias_sigma: 0.0,
            additive_sigma: 0.0,
            heading_drift_sigma: 0.0,
            bias_segment_steps: 1,
            forced_bias: None,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = [
            self.velocity_bias_sigma,
            self.additive_sigma,
            self.heading_drift_sigma,
        ]
        .iter()
        .all(|s| *s >= 0.0 && s.is_finite());
        if !ok || self.bias_segment_steps == 0 {
            return Err(crate::Error::Config(format!("invalid noise profile {self:?}")));
        }
        Ok(())
    }
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self::pedestrian()
    }
}
