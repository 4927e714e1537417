//! Training targets: how feasible is it for a trajectory window to end at
//! each map cell.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::map::{encode_pgm, OccupancyMap};
use crate::sim::TrajectoryWindow;

pub const TARGET_SCALE: f64 = 1e-6;
pub const TARGET_EXPONENT: f64 = 14.0;
/// Cells with `T̄ >= 1 - FEASIBLE_EPS` count as fully feasible end points.
pub const FEASIBLE_EPS: f64 = 1e-6;

/// Rasterized trajectory shape. `anchor` is the kernel cell holding the
/// trajectory end; weights are uniform over visited cells and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryKernel {
    pub grid: Grid<f64>,
    pub anchor: (usize, usize),
    /// Nonzero entries `(x, y, weight)` in row-major order.
    entries: Vec<(usize, usize, f64)>,
}

impl TrajectoryKernel {
    pub fn from_grid(grid: Grid<f64>, anchor: (usize, usize)) -> Self {
        let entries = (0..grid.height)
            .flat_map(|y| (0..grid.width).map(move |x| (x, y)))
            .filter_map(|(x, y)| {
                let w = *grid.get(x, y);
                (w != 0.0).then_some((x, y, w))
            })
            .collect();
        Self {
            grid,
            anchor,
            entries,
        }
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }
}

fn bresenham(a: (i64, i64), b: (i64, i64), out: &mut Vec<(i64, i64)>) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        out.push((x, y));
        if x == b.0 && y == b.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws the window (meters) into a kernel at `resolution` meters per cell.
/// Positions are snapped relative to the window end, so the end is always
/// exactly the anchor cell.
pub fn rasterize_kernel(window: &TrajectoryWindow, resolution: f64) -> TrajectoryKernel {
    let end = window.end();
    let cells: Vec<(i64, i64)> = window
        .points
        .iter()
        .map(|&p| {
            let d = p - end;
            ((d.x / resolution).round() as i64, (d.y / resolution).round() as i64)
        })
        .collect();
    let mut visited = Vec::new();
    match cells.len() {
        0 => visited.push((0, 0)),
        1 => visited.push(cells[0]),
        _ => {
            for pair in cells.windows(2) {
                bresenham(pair[0], pair[1], &mut visited);
            }
        }
    }
    visited.sort_unstable();
    visited.dedup();
    let min_x = visited.iter().map(|c| c.0).min().unwrap();
    let max_x = visited.iter().map(|c| c.0).max().unwrap();
    let min_y = visited.iter().map(|c| c.1).min().unwrap();
    let max_y = visited.iter().map(|c| c.1).max().unwrap();
    let w = (max_x - min_x + 1) as usize;
    let h = (max_y - min_y + 1) as usize;
    let weight = 1.0 / visited.len() as f64;
    let mut grid = Grid::filled(w, h, 0.0);
    for &(x, y) in &visited {
        *grid.get_mut((x - min_x) as usize, (y - min_y) as usize) = weight;
    }
    TrajectoryKernel::from_grid(grid, ((-min_x) as usize, (-min_y) as usize))
}

/// `T̄(x) = Σ_k kernel(k) · free(x − anchor + k)`, with cells outside the map
/// counted as not free. The output is aligned with the map so `T̄(x)` scores
/// the trajectory ending at `x`.
pub fn cross_correlate(map: &OccupancyMap, kernel: &TrajectoryKernel) -> Result<Grid<f64>> {
    let (w, h) = (map.width(), map.height());
    if kernel.width() > w || kernel.height() > h {
        return Err(Error::KernelTooLarge {
            kh: kernel.height(),
            kw: kernel.width(),
            h,
            w,
        });
    }
    let free: Vec<f64> = map
        .cells()
        .data
        .iter()
        .map(|c| if c.is_free() { 1.0 } else { 0.0 })
        .collect();
    let mut out = Grid::filled(w, h, 0.0);
    let (ax, ay) = (kernel.anchor.0 as i64, kernel.anchor.1 as i64);
    // Shift-and-add one kernel entry at a time; every output cell sees the
    // entries in row-major kernel order.
    for &(kx, ky, weight) in kernel.entries() {
        let dx = kx as i64 - ax;
        let dy = ky as i64 - ay;
        let x_lo = (-dx).max(0) as usize;
        let x_hi = (w as i64 - dx).min(w as i64).max(0) as usize;
        if x_lo >= x_hi {
            continue;
        }
        for y in 0..h {
            let sy = y as i64 + dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            let src = &free[sy as usize * w..(sy as usize + 1) * w];
            let dst = &mut out.data[y * w..(y + 1) * w];
            for x in x_lo..x_hi {
                dst[x] += weight * src[(x as i64 + dx) as usize];
            }
        }
    }
    Ok(out)
}

/// Learned-prior training target for one window on one map.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    pub tbar: Grid<f64>,
    pub values: Grid<f64>,
    pub feasible_mask: Grid<bool>,
    pub loss_weights: Grid<f64>,
}

#[inline]
pub fn target_value(tbar: f64) -> f64 {
    TARGET_SCALE * (TARGET_EXPONENT * tbar).exp()
}

/// 8-connected components of `mask`; returns per-cell labels and sizes.
pub fn connected_components(mask: &Grid<bool>) -> (Grid<Option<usize>>, Vec<usize>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels: Grid<Option<usize>> = Grid::filled(w, h, None);
    let mut sizes = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !*mask.get(sx, sy) || labels.get(sx, sy).is_some() {
                continue;
            }
            let id = sizes.len();
            let mut size = 0;
            let mut queue = VecDeque::from([(sx, sy)]);
            *labels.get_mut(sx, sy) = Some(id);
            while let Some((x, y)) = queue.pop_front() {
                size += 1;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if *mask.get(nx, ny) && labels.get(nx, ny).is_none() {
                            *labels.get_mut(nx, ny) = Some(id);
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            sizes.push(size);
        }
    }
    (labels, sizes)
}

/// Inverse-area weights before normalization: each feasible component's
/// cells get `1 / area`, every other cell gets 1.
pub fn raw_loss_weights(mask: &Grid<bool>) -> Grid<f64> {
    let (labels, sizes) = connected_components(mask);
    labels.map(|l| match l {
        Some(id) => 1.0 / sizes[*id] as f64,
        None => 1.0,
    })
}

/// Inverse-area weights rescaled so a feasible cell of a mean-sized component
/// weighs as much as an infeasible cell, normalized to mean 1. Ratios between
/// feasible components are those of [`raw_loss_weights`].
pub fn balanced_loss_weights(mask: &Grid<bool>) -> Grid<f64> {
    let (labels, sizes) = connected_components(mask);
    let k = if sizes.is_empty() {
        1.0
    } else {
        sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
    };
    let mut w = labels.map(|l| match l {
        Some(id) => k / sizes[*id] as f64,
        None => 1.0,
    });
    normalize_mean(&mut w);
    w
}

fn normalize_mean(w: &mut Grid<f64>) {
    let mean = w.data.iter().sum::<f64>() / w.len() as f64;
    for v in w.data.iter_mut() {
        *v /= mean;
    }
}

/// Builds the target from a precomputed `T̄` grid.
pub fn target_from_tbar(tbar: Grid<f64>) -> TargetMap {
    let values = tbar.map(|&t| target_value(t));
    let feasible_mask = tbar.map(|&t| t >= 1.0 - FEASIBLE_EPS);
    let mut loss_weights = raw_loss_weights(&feasible_mask);
    normalize_mean(&mut loss_weights);
    TargetMap {
        tbar,
        values,
        feasible_mask,
        loss_weights,
    }
}

pub fn make_target(map: &OccupancyMap, window: &TrajectoryWindow) -> Result<TargetMap> {
    let kernel = rasterize_kernel(window, map.resolution());
    Ok(target_from_tbar(cross_correlate(map, &kernel)?))
}

/// Debug image of a grid, linearly scaled so the maximum maps to 255. Row 0
/// of the grid is written as the bottom image row.
pub fn grid_to_pgm(grid: &Grid<f64>) -> Vec<u8> {
    let max = grid.data.iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut px = Vec::with_capacity(grid.len());
    for row in 0..grid.height {
        let y = grid.height - 1 - row;
        for x in 0..grid.width {
            px.push((grid.get(x, y).max(0.0) * scale).round().min(255.0) as u8);
        }
    }
    encode_pgm(grid.width, grid.height, &px)
}
