//! Comparison methods: cross-correlation prior, pedestrian dead reckoning and
//! a CRF map matcher.

mod crf;
mod pdr;

pub use crf::{build_graph, crf_grid_search, crf_match, viterbi, CrfParams, LocationGraph, CRF_GRID};
pub use pdr::{pdr, pdr_at_times, PDR_STEP_M};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::map::OccupancyMap;
use crate::sim::TrajectoryWindow;
use crate::target::{cross_correlate, rasterize_kernel};

/// Raw overlap `T̄` of the (noisy) window's kernel with the map's free space.
/// A kernel that does not fit the map yields an all-zero heatmap.
pub fn heuristic_prior(map: &OccupancyMap, window: &TrajectoryWindow) -> Result<Grid<f64>> {
    let kernel = rasterize_kernel(window, map.resolution());
    match cross_correlate(map, &kernel) {
        Err(Error::KernelTooLarge { .. }) => Ok(Grid::filled(map.width(), map.height(), 0.0)),
        other => other,
    }
}
