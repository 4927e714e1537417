//! Trajectory error metrics and prior quality.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::Grid;
use crate::io::write_atomic;
use crate::map::OccupancyMap;
use crate::sim::{Trajectory, RATE_HZ};

/// Per-timestamp errors after nearest-timestamp association.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryError {
    pub ate: f64,
    pub ee: f64,
    pub per_step_errors: Vec<f64>,
    /// Ground-truth poses without an estimate within the tolerance.
    pub unmatched: usize,
}

/// Associates every ground-truth pose with the estimate nearest in time,
/// if one lies within `tolerance` seconds.
pub fn associate(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> (Vec<f64>, usize) {
    let mut errors = Vec::with_capacity(gt.len());
    let mut unmatched = 0;
    let mut j = 0;
    for g in &gt.poses {
        while j + 1 < est.len() && (est.poses[j + 1].t - g.t).abs() <= (est.poses[j].t - g.t).abs() {
            j += 1;
        }
        match est.poses.get(j) {
            Some(e) if (e.t - g.t).abs() <= tolerance => errors.push(e.position().dist(g.position())),
            _ => unmatched += 1,
        }
    }
    (errors, unmatched)
}

/// Full error summary with association tolerance of half a filter period.
pub fn trajectory_error(est: &Trajectory, gt: &Trajectory) -> Result<TrajectoryError> {
    let (per_step_errors, unmatched) = associate(est, gt, 0.5 / RATE_HZ + 1e-9);
    if per_step_errors.is_empty() {
        return Err(Error::NoOverlap);
    }
    let ate = (per_step_errors.iter().map(|e| e * e).sum::<f64>() / per_step_errors.len() as f64).sqrt();
    Ok(TrajectoryError {
        ate,
        ee: end_error(est, gt)?,
        per_step_errors,
        unmatched,
    })
}

/// Root-mean-square position error over associated timestamps.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    Ok(trajectory_error(est, gt)?.ate)
}

/// Distance between final positions.
pub fn end_error(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    match (est.poses.last(), gt.poses.last()) {
        (Some(a), Some(b)) => Ok(a.position().dist(b.position())),
        _ => Err(Error::NoOverlap),
    }
}

/// Empirical CDF: sorted errors paired with the fraction at or below them.
pub fn cdf_points(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut e = errors.to_vec();
    e.sort_by(|a, b| a.total_cmp(b));
    let n = e.len() as f64;
    e.into_iter().enumerate().map(|(i, v)| (v, (i + 1) as f64 / n)).collect()
}

pub fn cdf_to_csv(points: &[(f64, f64)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["error_m", "fraction"]).map_err(|e| Error::Csv(e.to_string()))?;
    for (e, f) in points {
        w.write_record([e.to_string(), f.to_string()]).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.to_string()))
}

pub fn write_cdf(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    write_atomic(path, &cdf_to_csv(points)?)
}

/// Ground-truth location distribution: a Gaussian around `gt` truncated at
/// 3σ, restricted to free cells and normalized.
pub fn gaussian_location(map: &OccupancyMap, gt: Point2, sigma: f64) -> Result<Grid<f64>> {
    let mut g = Grid::filled(map.width(), map.height(), 0.0);
    let mut total = 0.0;
    let cutoff = 3.0 * sigma;
    for (x, y) in map.free_cells() {
        let d = map.cell_center(x as i64, y as i64).dist(gt);
        if d <= cutoff {
            let v = (-0.5 * (d / sigma).powi(2)).exp();
            *g.get_mut(x, y) = v;
            total += v;
        }
    }
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    for v in &mut g.data {
        *v /= total;
    }
    Ok(g)
}

/// Heatmap as a distribution over free cells: floor-clamped and normalized.
pub fn heatmap_distribution(map: &OccupancyMap, heatmap: &Grid<f64>) -> Result<Grid<f64>> {
    if (heatmap.width, heatmap.height) != (map.width(), map.height()) {
        return Err(Error::Shape(format!(
            "heatmap {}x{} vs map {}x{}",
            heatmap.width,
            heatmap.height,
            map.width(),
            map.height()
        )));
    }
    let mut p = Grid::filled(map.width(), map.height(), 0.0);
    let mut total = 0.0;
    for (x, y) in map.free_cells() {
        let v = heatmap.get(x, y);
        let v = if v.is_finite() { v.max(crate::filter::WEIGHT_FLOOR) } else { crate::filter::WEIGHT_FLOOR };
        *p.get_mut(x, y) = v;
        total += v;
    }
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    for v in &mut p.data {
        *v /= total;
    }
    Ok(p)
}

/// `KL(G ‖ P)` in nats between the ground-truth location Gaussian and the
/// normalized prior.
pub fn prior_kl(map: &OccupancyMap, heatmap: &Grid<f64>, gt: Point2, sigma: f64) -> Result<f64> {
    let g = gaussian_location(map, gt, sigma)?;
    let p = heatmap_distribution(map, heatmap)?;
    Ok(g
        .data
        .iter()
        .zip(&p.data)
        .filter(|(gv, _)| **gv > 0.0)
        .map(|(gv, pv)| gv * (gv / pv).ln())
        .sum::<f64>()
        .max(0.0))
}

/// One row of the metrics output.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MethodMetrics {
    pub method: String,
    pub map: String,
    pub seed: u64,
    pub ate_m: f64,
    pub ee_m: f64,
    pub n_steps: usize,
}
