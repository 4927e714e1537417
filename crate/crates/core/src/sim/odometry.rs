use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{NoiseProfile, OdometrySample, Pose, Trajectory};
use crate::geom::{wrap_angle, Point2};

/// Exact per-period displacements of a trajectory.
pub fn true_odometry(traj: &Trajectory) -> Vec<OdometrySample> {
    traj.poses
        .windows(2)
        .map(|p| OdometrySample {
            t: p[1].t,
            dx: p[1].x - p[0].x,
            dy: p[1].y - p[0].y,
            dtheta: wrap_angle(p[1].theta - p[0].theta),
        })
        .collect()
}

/// Corrupts a uniformly sampled trajectory into an odometry stream.
///
/// `resolution` converts the additive noise from cells to meters.
pub fn corrupt_to_odometry(
    traj: &Trajectory,
    noise: &NoiseProfile,
    resolution: f64,
    seed: u64,
) -> Vec<OdometrySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let segment = noise.bias_segment_steps.max(1);
    let additive_m = noise.additive_sigma * resolution;
    let mut bias = 1.0;
    let mut heading_err = 0.0;
    true_odometry(traj)
        .into_iter()
        .enumerate()
        .map(|(k, truth)| {
            if k % segment == 0 {
                let draw = 1.0 + noise.velocity_bias_sigma * std_normal.sample(&mut rng);
                bias = noise.forced_bias.unwrap_or(draw);
            }
            let drift = noise.heading_drift_sigma * std_normal.sample(&mut rng);
            heading_err += drift;
            let nx = additive_m * std_normal.sample(&mut rng);
            let ny = additive_m * std_normal.sample(&mut rng);
            let d = (truth.displacement() * bias).rotated(heading_err) + Point2::new(nx, ny);
            OdometrySample {
                t: truth.t,
                dx: d.x,
                dy: d.y,
                dtheta: truth.dtheta + drift,
            }
        })
        .collect()
}

/// Dead-reckons an odometry stream from `start`.
pub fn integrate_odometry(start: Pose, odom: &[OdometrySample]) -> Trajectory {
    let mut poses = Vec::with_capacity(odom.len() + 1);
    let mut cur = start;
    poses.push(cur);
    for o in odom {
        cur = Pose::new(o.t, cur.x + o.dx, cur.y + o.dy, cur.theta + o.dtheta);
        poses.push(cur);
    }
    Trajectory { poses }
}

/// Cumulative odometry positions starting at the origin (`len + 1` entries).
pub fn odometry_positions(odom: &[OdometrySample]) -> Vec<Point2> {
    let mut out = Vec::with_capacity(odom.len() + 1);
    let mut p = Point2::ZERO;
    out.push(p);
    for o in odom {
        p += o.displacement();
        out.push(p);
    }
    out
}
