use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::plan::{clearance_map, plan_path};
use super::{MotionProfile, Pose, Trajectory, RATE_HZ};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Point2};
use crate::grid::Grid;
use crate::io::StepRecord;
use crate::map::OccupancyMap;

/// TurtleBot-class wheel geometry.
pub const WHEEL_RADIUS_M: f64 = 0.033;
pub const WHEEL_BASE_M: f64 = 0.16;

const WHEELED_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub profile: MotionProfile,
    /// Whole seconds of motion; the trajectory holds `duration_s + 1` poses.
    pub duration_s: usize,
    pub speed_mps: f64,
    /// Planning keeps this many cells (chessboard) away from walls.
    pub min_clearance_cells: u32,
    /// Waypoints are at least this far apart along a straight line.
    pub min_leg_m: f64,
    pub max_attempts: usize,
}

impl SimParams {
    pub fn new(profile: MotionProfile, duration_s: usize) -> Self {
        let speed_mps = match profile {
            MotionProfile::Pedestrian => 1.3,
            MotionProfile::Wheeled => 0.2,
        };
        Self {
            profile,
            duration_s,
            speed_mps,
            min_clearance_cells: 2,
            min_leg_m: 3.0,
            max_attempts: 50,
        }
    }
}

/// One differential-drive update: `n_left`/`n_right` wheel revolutions since
/// the last step and a relative heading change `dtheta`.
pub fn diff_drive_step(pose: Pose, n_left: f64, n_right: f64, dtheta: f64, wheel_radius: f64, dt: f64) -> Pose {
    let ds = PI * wheel_radius * (n_left + n_right);
    let heading = pose.theta + dtheta;
    Pose::new(
        pose.t + dt,
        pose.x + ds * heading.cos(),
        pose.y + ds * heading.sin(),
        heading,
    )
}

fn largest_component(clearance: &Grid<u32>, min_c: u32) -> Vec<(usize, usize)> {
    let (w, h) = (clearance.width, clearance.height);
    let ok = |x: usize, y: usize| *clearance.get(x, y) >= min_c;
    let mut label = vec![usize::MAX; w * h];
    let mut best: Vec<(usize, usize)> = Vec::new();
    let mut next = 0usize;
    for sy in 0..h {
        for sx in 0..w {
            if !ok(sx, sy) || label[sy * w + sx] != usize::MAX {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([(sx, sy)]);
            label[sy * w + sx] = next;
            while let Some((x, y)) = queue.pop_front() {
                comp.push((x, y));
                for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if ok(nx, ny) && label[ny * w + nx] == usize::MAX {
                        label[ny * w + nx] = next;
                        queue.push_back((nx, ny));
                    }
                }
            }
            if comp.len() > best.len() {
                best = comp;
            }
            next += 1;
        }
    }
    best.sort_by_key(|&(x, y)| (y, x));
    best
}

/// Chaikin corner cutting with fixed endpoints.
fn chaikin(points: &[Point2], iterations: usize) -> Vec<Point2> {
    let mut pts = points.to_vec();
    for _ in 0..iterations {
        if pts.len() < 3 {
            break;
        }
        let mut out = Vec::with_capacity(pts.len() * 2);
        out.push(pts[0]);
        for pair in pts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            out.push(a * 0.75 + b * 0.25);
            out.push(a * 0.25 + b * 0.75);
        }
        out.push(*pts.last().unwrap());
        pts = out;
    }
    pts
}

/// Drops nearly collinear interior vertices of a cell-centre path.
fn simplify(points: &[Point2]) -> Vec<Point2> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    for i in 1..points.len() - 1 {
        let a = *out.last().unwrap();
        let b = points[i];
        let c = points[i + 1];
        let cross = (b - a).x * (c - b).y - (b - a).y * (c - b).x;
        if cross.abs() > 1e-9 {
            out.push(b);
        }
    }
    out.push(*points.last().unwrap());
    out
}

fn polyline_is_free(map: &OccupancyMap, pts: &[Point2]) -> bool {
    pts.windows(2).all(|p| map.segment_is_free(p[0], p[1]))
}

fn path_length(pts: &[Point2]) -> f64 {
    pts.windows(2).map(|p| p[0].dist(p[1])).sum()
}

/// Plans a chain of waypoint legs until the polyline is at least `length_m` long.
fn plan_route(
    map: &OccupancyMap,
    params: &SimParams,
    rng: &mut ChaCha8Rng,
    length_m: f64,
) -> Result<Vec<Point2>> {
    let clearance = clearance_map(map);
    let candidates = largest_component(&clearance, params.min_clearance_cells);
    if candidates.is_empty() {
        return Err(Error::NoFreeSpace(format!(
            "no cell with clearance >= {} cells",
            params.min_clearance_cells
        )));
    }
    let mut current = candidates[rng.gen_range(0..candidates.len())];
    let mut route = vec![map.cell_center(current.0 as i64, current.1 as i64)];
    let mut failures = 0usize;
    while path_length(&route) < length_m {
        let goal = candidates[rng.gen_range(0..candidates.len())];
        let here = map.cell_center(current.0 as i64, current.1 as i64);
        let there = map.cell_center(goal.0 as i64, goal.1 as i64);
        let leg = if here.dist(there) < params.min_leg_m {
            None
        } else {
            plan_path(&clearance, params.min_clearance_cells, current, goal)
        };
        let Some(cells) = leg else {
            failures += 1;
            if failures > params.max_attempts {
                return Err(Error::Unreachable(failures));
            }
            continue;
        };
        let raw: Vec<Point2> = cells
            .iter()
            .map(|&(x, y)| map.cell_center(x as i64, y as i64))
            .collect();
        let coarse = simplify(&raw);
        let smooth = chaikin(&coarse, 3);
        let leg_pts = if polyline_is_free(map, &smooth) {
            smooth
        } else {
            coarse
        };
        // Round the corner at the waypoint when that stays in free space.
        let n = route.len();
        if n >= 2 && leg_pts.len() >= 2 {
            let corner = chaikin(&[route[n - 2], route[n - 1], leg_pts[1]], 2);
            if polyline_is_free(map, &corner) {
                route.pop();
                route.extend_from_slice(&corner[1..corner.len() - 1]);
            }
        }
        route.extend_from_slice(&leg_pts[1..]);
        current = goal;
    }
    Ok(route)
}

/// Point and tangent heading at arc length `s` along a polyline.
fn point_at(route: &[Point2], cumulative: &[f64], s: f64) -> (Point2, f64) {
    let i = match cumulative.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(i) => i.min(route.len() - 2),
        Err(i) => i.saturating_sub(1).min(route.len() - 2),
    };
    let (a, b) = (route[i], route[i + 1]);
    let seg = cumulative[i + 1] - cumulative[i];
    let f = if seg > 0.0 {
        ((s - cumulative[i]) / seg).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = b - a;
    (a + d * f, d.y.atan2(d.x))
}

fn cumulative_lengths(route: &[Point2]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(route.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for p in route.windows(2) {
        acc += p[0].dist(p[1]);
        cum.push(acc);
    }
    cum
}

fn walk(route: &[Point2], params: &SimParams, rng: &mut ChaCha8Rng) -> Trajectory {
    let cum = cumulative_lengths(route);
    let total = *cum.last().unwrap();
    let dt = 1.0 / RATE_HZ;
    let speed_jitter = Normal::new(0.0, 0.1).unwrap();
    let mut s: f64 = 0.0;
    let mut poses = Vec::with_capacity(params.duration_s + 1);
    let mut speed = params.speed_mps;
    for k in 0..=params.duration_s {
        let (p, heading) = point_at(route, &cum, s.min(total));
        poses.push(Pose::new(k as f64 * dt, p.x, p.y, heading));
        // Gait speed varies slowly.
        if k % 10 == 0 {
            let f: f64 = 1.0 + speed_jitter.sample(rng);
            speed = params.speed_mps * f.clamp(0.7, 1.3);
        }
        s += speed * dt;
    }
    // Heading of each pose follows its direction of travel.
    for k in 0..poses.len().saturating_sub(1) {
        let d = poses[k + 1].position() - poses[k].position();
        if d.norm() > 1e-9 {
            poses[k].theta = wrap_angle(d.y.atan2(d.x));
        }
    }
    if poses.len() >= 2 {
        let n = poses.len();
        poses[n - 1].theta = poses[n - 2].theta;
    }
    Trajectory { poses }
}

fn drive(map: &OccupancyMap, route: &[Point2], params: &SimParams) -> Option<Trajectory> {
    let cum = cumulative_lengths(route);
    let total = *cum.last().unwrap();
    let lookahead: f64 = 0.4;
    let max_omega = 1.5;
    let dt = 1.0 / (RATE_HZ * WHEELED_SUBSTEPS as f64);
    let (_, h0) = point_at(route, &cum, lookahead.min(total));
    let mut pose = Pose::new(0.0, route[0].x, route[0].y, h0);
    let mut progress = 0.0f64;
    let mut poses = vec![pose];
    for _ in 0..params.duration_s {
        for _ in 0..WHEELED_SUBSTEPS {
            // Project onto the route near the previous progress.
            let mut best = (f64::INFINITY, progress);
            let mut s = progress;
            while s <= (progress + 1.0).min(total) {
                let (q, _) = point_at(route, &cum, s);
                let d = q.dist(pose.position());
                if d < best.0 {
                    best = (d, s);
                }
                s += 0.02;
            }
            progress = best.1;
            let (target, _) = point_at(route, &cum, (progress + lookahead).min(total));
            let to = target - pose.position();
            let alpha = wrap_angle(to.y.atan2(to.x) - pose.theta);
            let v = if progress + 1e-6 >= total { 0.0 } else { params.speed_mps };
            let omega = (2.0 * v * alpha.sin() / lookahead).clamp(-max_omega, max_omega);
            let v_left = v - omega * WHEEL_BASE_M / 2.0;
            let v_right = v + omega * WHEEL_BASE_M / 2.0;
            let rev = |vw: f64| vw * dt / (2.0 * PI * WHEEL_RADIUS_M);
            pose = diff_drive_step(pose, rev(v_left), rev(v_right), omega * dt, WHEEL_RADIUS_M, dt);
            if !map.is_free(pose.position()) {
                return None;
            }
        }
        pose.t = poses.len() as f64 / RATE_HZ;
        poses.push(pose);
    }
    Some(Trajectory { poses })
}

/// Generates a ground-truth trajectory in free space.
///
/// Pedestrians follow a smoothed A* route at about 1.3 m/s; wheeled robots
/// track the route with a pure-pursuit controller integrated through the
/// differential drive model at about 0.2 m/s.
pub fn generate_trajectory(map: &OccupancyMap, seed: u64, params: &SimParams) -> Result<Trajectory> {
    if params.duration_s == 0 {
        return Err(Error::Config("duration must be positive".into()));
    }
    if map.free_count() == 0 {
        return Err(Error::NoFreeSpace("map has no free cells".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = params.speed_mps * 1.3 * params.duration_s as f64 / RATE_HZ + 2.0;
    for _ in 0..params.max_attempts {
        let route = plan_route(map, params, &mut rng, length)?;
        let traj = match params.profile {
            MotionProfile::Pedestrian => Some(walk(&route, params, &mut rng)),
            MotionProfile::Wheeled => drive(map, &route, params),
        };
        if let Some(traj) = traj {
            if traj.poses.iter().all(|p| map.is_free(p.position())) {
                return Ok(traj);
            }
        }
    }
    Err(Error::Unreachable(params.max_attempts))
}

/// Synthetic step detector output for dead reckoning: one event every
/// `stride_m` of true travel, with the true heading corrupted by a constant
/// per-step drift plus white noise.
pub fn synthesize_steps(
    traj: &Trajectory,
    stride_m: f64,
    heading_drift_per_step: f64,
    heading_noise_sigma: f64,
    seed: u64,
) -> Vec<StepRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, heading_noise_sigma.max(0.0)).unwrap();
    let mut steps = Vec::new();
    let mut next = stride_m;
    let mut travelled = 0.0;
    for pair in traj.poses.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let d = b.position() - a.position();
        let len = d.norm();
        if len <= 0.0 {
            continue;
        }
        let heading = d.y.atan2(d.x);
        while travelled + len >= next {
            let f = (next - travelled) / len;
            let k = steps.len() as f64;
            let h = heading + heading_drift_per_step * (k + 1.0) + noise.sample(&mut rng);
            steps.push(StepRecord {
                t: a.t + f * (b.t - a.t),
                heading: wrap_angle(h),
            });
            next += stride_m;
        }
        travelled += len;
    }
    steps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps;

    #[test]
    fn differential_drive_arc_per_revolution() {
        let p = diff_drive_step(Pose::new(0.0, 0.0, 0.0, 0.0), 1.0, 1.0, 0.0, 0.033, 1.0);
        let expected = PI * 0.033 * 2.0;
        assert!((p.x - expected).abs() < 1e-12);
        assert!((expected - 0.2073).abs() < 1e-4);
        assert_eq!(p.y, 0.0);
        // heading change is applied before moving
        let p = diff_drive_step(Pose::new(0.0, 0.0, 0.0, 0.0), 1.0, 1.0, PI / 2.0, 0.033, 1.0);
        assert!(p.x.abs() < 1e-12 && (p.y - expected).abs() < 1e-12);
    }

    #[test]
    fn pedestrian_trajectory_is_feasible_and_deterministic() {
        let map = maps::corridor(0.25);
        let params = SimParams::new(MotionProfile::Pedestrian, 120);
        let a = generate_trajectory(&map, 7, &params).unwrap();
        let b = generate_trajectory(&map, 7, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 121);
        assert!(a.poses.iter().all(|p| map.is_free(p.position())));
        let speed = a.poses[1].position().dist(a.poses[0].position());
        assert!(speed > 0.5 && speed < 2.0, "speed {speed}");
    }

    #[test]
    fn wheeled_trajectory_is_feasible() {
        let map = maps::corridor_rooms(0.25);
        let params = SimParams::new(MotionProfile::Wheeled, 200);
        let t = generate_trajectory(&map, 3, &params).unwrap();
        assert_eq!(t.len(), 201);
        assert!(t.poses.iter().all(|p| map.is_free(p.position())));
        let d: f64 = t.poses.windows(2).map(|p| p[0].position().dist(p[1].position())).sum();
        assert!(d > 20.0 && d < 45.0, "distance {d}");
    }

    #[test]
    fn no_free_space_is_an_error() {
        let map = OccupancyMap::from_ascii(&["###", "###"], 0.25).unwrap();
        let params = SimParams::new(MotionProfile::Pedestrian, 10);
        assert!(matches!(
            generate_trajectory(&map, 1, &params),
            Err(Error::NoFreeSpace(_))
        ));
    }

    #[test]
    fn zero_duration_is_rejected() {
        let map = maps::corridor(0.25);
        assert!(generate_trajectory(&map, 1, &SimParams::new(MotionProfile::Pedestrian, 0)).is_err());
    }

    #[test]
    fn steps_follow_stride() {
        let poses = (0..=10)
            .map(|k| Pose::new(k as f64, k as f64, 0.0, 0.0))
            .collect();
        let steps = synthesize_steps(&Trajectory { poses }, 0.5, 0.0, 0.0, 1);
        assert_eq!(steps.len(), 20);
        assert!((steps[0].t - 0.5).abs() < 1e-12);
        assert!(steps.iter().all(|s| s.heading == 0.0));
    }
}
