//! Learned map priors for odometry-only indoor localization.
//!
//! A convolutional map branch embeds an occupancy grid into a per-cell
//! feature tensor once; a recurrent odometry branch embeds the last few
//! seconds of odometry into a feature vector. Their per-cell dot product
//! scores every map location as the end point of the recent motion, and a
//! particle filter uses those scores as its measurement model.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod filter;
pub mod geom;
pub mod grid;
pub mod io;
pub mod map;
pub mod maps;
pub mod nn;
pub mod prior;
pub mod sim;
pub mod target;

pub use error::{Error, Result};
pub use geom::{wrap_angle, Point2};
pub use grid::Grid;
pub use map::{load_map, Cell, MapCrop, MapMeta, OccupancyMap};
pub use sim::{MotionProfile, NoiseProfile, OdometrySample, Pose, Trajectory, TrajectoryWindow};
