//! Particle filter fusing odometry with a map prior.

mod priors;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Point2};
use crate::grid::Grid;
use crate::map::OccupancyMap;
use crate::sim::{odometry_positions, MotionProfile, OdometrySample, Pose, Trajectory, TrajectoryWindow};

pub use priors::{HeuristicPrior, LearnedPrior, Prior};

/// Lower bound applied to prior scores before normalization.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FilterConfig {
    pub particle_count: usize,
    /// Std of the initial position spread (m).
    pub init_sigma: f64,
    /// Per-axis variance of the motion noise (m², and rad² for heading in
    /// wheeled mode).
    pub motion_variance: f64,
    pub r_reinit: f64,
    pub s_reinit: f64,
    pub rate_hz: f64,
    pub mode: MotionProfile,
    /// Positions per prior window; defaults to the mode's window.
    pub window_len: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::for_mode(MotionProfile::Pedestrian)
    }
}

impl FilterConfig {
    pub fn for_mode(mode: MotionProfile) -> Self {
        Self {
            particle_count: 1000,
            init_sigma: 0.01,
            motion_variance: match mode {
                MotionProfile::Pedestrian => 0.1,
                MotionProfile::Wheeled => 0.01,
            },
            r_reinit: 5.0,
            s_reinit: 0.9,
            rate_hz: 1.0,
            mode,
            window_len: None,
        }
    }

    pub fn window_len(&self) -> usize {
        self.window_len.unwrap_or_else(|| self.mode.window_len())
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.particle_count >= 1
            && self.init_sigma >= 0.0
            && self.motion_variance >= 0.0
            && self.r_reinit > 0.0
            && self.s_reinit > 0.0
            && self.s_reinit <= 1.0
            && self.rate_hz > 0.0
            && self.window_len() >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid filter config {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub weight: f64,
    pub hit_obstacle: bool,
}

impl Particle {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta,
            weight: 1.0,
            hit_obstacle: false,
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// `p` particles normally distributed around `start`, uniform weights.
pub fn init_particles<R: Rng>(start: &Pose, cfg: &FilterConfig, rng: &mut R) -> Vec<Particle> {
    let p = cfg.particle_count;
    (0..p)
        .map(|_| {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            let mut q = Particle::new(start.x + cfg.init_sigma * nx, start.y + cfg.init_sigma * ny, start.theta);
            q.weight = 1.0 / p as f64;
            q
        })
        .collect()
}

/// Moves every particle by one odometry sample plus Gaussian noise and flags
/// those whose straight-line step crosses an occupied cell.
pub fn propagate<R: Rng>(particles: &mut [Particle], odom: &OdometrySample, map: &OccupancyMap, cfg: &FilterConfig, rng: &mut R) {
    let sigma = cfg.motion_variance.sqrt();
    let s = odom.displacement().norm();
    for q in particles.iter_mut() {
        let old = q.position();
        let (mut nx, mut ny, mut nt) = (0.0, 0.0, 0.0);
        if sigma > 0.0 {
            nx = sigma * rng.sample::<f64, _>(StandardNormal);
            ny = sigma * rng.sample::<f64, _>(StandardNormal);
            if cfg.mode == MotionProfile::Wheeled {
                nt = sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        match cfg.mode {
            MotionProfile::Pedestrian => {
                q.x += odom.dx + nx;
                q.y += odom.dy + ny;
            }
            MotionProfile::Wheeled => {
                q.x += s * q.theta.cos() + nx;
                q.y += s * q.theta.sin() + ny;
                q.theta = wrap_angle(q.theta + odom.dtheta + nt);
            }
        }
        q.hit_obstacle = !map.segment_is_free(old, q.position());
    }
}

/// Sets weights from `score` (None = out of bounds), clamped to
/// [`WEIGHT_FLOOR`] and normalized. Returns true when every weight hit the
/// floor, in which case weights are uniform.
pub fn reweight_with(particles: &mut [Particle], mut score: impl FnMut(Point2) -> Option<f64>) -> bool {
    let mut total = 0.0;
    let mut degenerate = true;
    for q in particles.iter_mut() {
        let s = score(q.position()).filter(|v| v.is_finite()).unwrap_or(WEIGHT_FLOOR);
        q.weight = if s > WEIGHT_FLOOR {
            degenerate = false;
            s
        } else {
            WEIGHT_FLOOR
        };
        total += q.weight;
    }
    let n = particles.len() as f64;
    for q in particles.iter_mut() {
        q.weight = if degenerate { 1.0 / n } else { q.weight / total };
    }
    degenerate
}

/// [`reweight_with`] reading scores from a heatmap over `map`'s cells.
pub fn reweight(particles: &mut [Particle], heatmap: &Grid<f64>, map: &OccupancyMap) -> bool {
    reweight_with(particles, |p| map.world_to_cell_checked(p).map(|(x, y)| *heatmap.get(x, y)))
}

/// Systematic resampling with a single random offset. Output weights are
/// uniform; every other field is copied.
pub fn resample_low_variance<R: Rng>(particles: &[Particle], rng: &mut R) -> Result<Vec<Particle>> {
    let total: f64 = particles.iter().map(|q| q.weight).sum();
    if particles.is_empty() || !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroWeight);
    }
    let p = particles.len();
    let step = 1.0 / p as f64;
    let u0: f64 = rng.gen::<f64>() * step;
    let mut out = Vec::with_capacity(p);
    let mut i = 0;
    let mut cum = particles[0].weight / total;
    for m in 0..p {
        let u = u0 + m as f64 * step;
        while u > cum && i + 1 < p {
            i += 1;
            cum += particles[i].weight / total;
        }
        let mut q = particles[i];
        q.weight = step;
        out.push(q);
    }
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Index of the particle closest to the component-wise median position
/// (lowest index on ties).
pub fn estimate_index(particles: &[Particle]) -> Option<usize> {
    if particles.is_empty() {
        return None;
    }
    let mx = median(particles.iter().map(|q| q.x).collect());
    let my = median(particles.iter().map(|q| q.y).collect());
    let m = Point2::new(mx, my);
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, q) in particles.iter().enumerate() {
        let d = q.position().dist_sq(m);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    Some(best)
}

/// The particle nearest the median, as a pose at time `t`.
pub fn estimate(particles: &[Particle], t: f64) -> Option<Pose> {
    estimate_index(particles).map(|i| {
        let q = particles[i];
        Pose::new(t, q.x, q.y, q.theta)
    })
}

/// Free cells whose centers lie within `r` of `c`, doubling `r` until some
/// exist or the map diagonal is exceeded.
fn free_cells_near(map: &OccupancyMap, c: Point2, mut r: f64) -> (Vec<(usize, usize)>, f64) {
    let diag = (map.width() as f64).hypot(map.height() as f64) * map.resolution();
    loop {
        let res = map.resolution();
        let (cx, cy) = map.world_to_cell(c);
        let span = (r / res).ceil() as i64 + 1;
        let mut cells = Vec::new();
        for y in (cy - span).max(0)..=(cy + span).min(map.height() as i64 - 1) {
            for x in (cx - span).max(0)..=(cx + span).min(map.width() as i64 - 1) {
                if map.is_free_cell(x, y) && map.cell_center(x, y).dist(c) <= r {
                    cells.push((x as usize, y as usize));
                }
            }
        }
        if !cells.is_empty() || r >= diag {
            return (cells, r);
        }
        r *= 2.0;
    }
}

/// Fraction of flagged particles.
pub fn flagged_fraction(particles: &[Particle]) -> f64 {
    if particles.is_empty() {
        return 0.0;
    }
    particles.iter().filter(|q| q.hit_obstacle).count() as f64 / particles.len() as f64
}

/// Re-draws every particle uniformly in free space near `last` when more
/// than `s_reinit` of them crossed an obstacle. Flags are cleared either way.
/// Returns whether re-initialization happened.
pub fn maybe_reinit<R: Rng>(particles: &mut [Particle], last: Point2, map: &OccupancyMap, cfg: &FilterConfig, rng: &mut R) -> Result<bool> {
    let fire = flagged_fraction(particles) > cfg.s_reinit;
    for q in particles.iter_mut() {
        q.hit_obstacle = false;
    }
    if !fire {
        return Ok(false);
    }
    let (cells, r) = free_cells_near(map, last, cfg.r_reinit);
    if cells.is_empty() {
        return Err(Error::NoFreeSpace("no free cell to re-initialize particles".into()));
    }
    let res = map.resolution();
    let n = particles.len() as f64;
    for q in particles.iter_mut() {
        let mut pos = None;
        for _ in 0..16 {
            let (x, y) = cells[rng.gen_range(0..cells.len())];
            let o = map.cell_center(x as i64, y as i64);
            let cand = Point2::new(o.x + (rng.gen::<f64>() - 0.5) * res, o.y + (rng.gen::<f64>() - 0.5) * res);
            if cand.dist(last) <= r && map.is_free(cand) {
                pos = Some(cand);
                break;
            }
        }
        let p = match pos {
            Some(p) => p,
            None => {
                let (x, y) = cells[rng.gen_range(0..cells.len())];
                map.cell_center(x as i64, y as i64)
            }
        };
        q.x = p.x;
        q.y = p.y;
        if cfg.mode == MotionProfile::Wheeled {
            q.theta = wrap_angle(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        }
        q.weight = 1.0 / n;
    }
    Ok(true)
}

/// Outcome of a filter run.
#[derive(Clone, Debug)]
pub struct FilterRun {
    /// One pose for the start plus one per odometry sample.
    pub trajectory: Trajectory,
    pub reinit_count: usize,
    pub degenerate_count: usize,
    /// Wall-clock seconds spent per step.
    pub step_seconds: Vec<f64>,
}

/// Runs the filter over an odometry stream. With `prior = None` the filter
/// only integrates odometry (no reweighting, resampling or re-init).
pub fn run_filter(
    odom: &[OdometrySample],
    start: &Pose,
    map: &OccupancyMap,
    mut prior: Option<&mut dyn Prior>,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<FilterRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut particles = init_particles(start, cfg, &mut rng);
    let l = cfg.window_len();
    let odom_pos = odometry_positions(odom);
    // odometry-frame heading at each step, starting from the true start heading
    let mut odom_theta = Vec::with_capacity(odom.len() + 1);
    odom_theta.push(start.theta);
    for o in odom {
        let last = *odom_theta.last().expect("nonempty");
        odom_theta.push(last + o.dtheta);
    }
    let first = estimate(&particles, start.t).expect("particle_count >= 1");
    let mut poses = vec![first];
    let (mut reinit_count, mut degenerate_count) = (0, 0);
    let mut step_seconds = Vec::with_capacity(odom.len());
    for (k, o) in odom.iter().enumerate() {
        let t0 = Instant::now();
        let step = k + 1;
        propagate(&mut particles, o, map, cfg, &mut rng);
        if let Some(prior) = prior.as_deref_mut() {
            if step + 1 >= l {
                let start_idx = step + 1 - l;
                let mut window = TrajectoryWindow::from_absolute(&odom_pos[start_idx..=step]);
                if cfg.mode == MotionProfile::Wheeled {
                    let est_theta = poses[start_idx].theta;
                    window = window.rotated(wrap_angle(est_theta - odom_theta[start_idx]));
                }
                prior.prepare(&window)?;
                if reweight_with(&mut particles, |p| prior.score(p)) {
                    degenerate_count += 1;
                }
                particles = resample_low_variance(&particles, &mut rng)?;
            }
        }
        let est = estimate(&particles, o.t).expect("nonempty");
        if prior.is_some() && maybe_reinit(&mut particles, est.position(), map, cfg, &mut rng)? {
            reinit_count += 1;
        }
        poses.push(est);
        step_seconds.push(t0.elapsed().as_secs_f64());
    }
    Ok(FilterRun {
        trajectory: Trajectory { poses },
        reinit_count,
        degenerate_count,
        step_seconds,
    })
}
