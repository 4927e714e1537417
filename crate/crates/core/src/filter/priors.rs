use crate::baselines::heuristic_prior;
use crate::error::Result;
use crate::geom::Point2;
use crate::grid::Grid;
use crate::map::OccupancyMap;
use crate::prior::{DeepMapTensor, PriorModel};
use crate::sim::TrajectoryWindow;

/// Source of per-location scores for the window ending at the current step.
pub trait Prior {
    /// Updates the prior for the latest odometry window.
    fn prepare(&mut self, window: &TrajectoryWindow) -> Result<()>;

    /// Raw score at a world position; `None` outside the map.
    fn score(&self, p: Point2) -> Option<f64>;

    /// Full heatmap for the last prepared window.
    fn heatmap(&self) -> Result<Grid<f64>>;
}

/// Learned prior: the map is encoded once; each step only runs the odometry
/// branch and looks up the cells it needs.
pub struct LearnedPrior<'a> {
    model: &'a PriorModel,
    map: &'a OccupancyMap,
    tensor: DeepMapTensor,
    vector: Vec<f32>,
}

impl<'a> LearnedPrior<'a> {
    pub fn new(model: &'a PriorModel, map: &'a OccupancyMap) -> Result<Self> {
        let tensor = model.encode_map(map)?;
        Ok(Self::with_tensor(model, map, tensor))
    }

    /// Reuses an already encoded map.
    pub fn with_tensor(model: &'a PriorModel, map: &'a OccupancyMap, tensor: DeepMapTensor) -> Self {
        Self {
            model,
            map,
            vector: vec![0.0; tensor.channels],
            tensor,
        }
    }

    pub fn tensor(&self) -> &DeepMapTensor {
        &self.tensor
    }
}

impl Prior for LearnedPrior<'_> {
    fn prepare(&mut self, window: &TrajectoryWindow) -> Result<()> {
        self.vector = self.model.encode_odometry(window, self.map.resolution())?;
        Ok(())
    }

    fn score(&self, p: Point2) -> Option<f64> {
        self.map
            .world_to_cell_checked(p)
            .map(|(x, y)| self.tensor.score_at(x, y, &self.vector))
    }

    fn heatmap(&self) -> Result<Grid<f64>> {
        crate::prior::score(&self.tensor, &self.vector)
    }
}

/// Cross-correlation of the noisy window with the map.
pub struct HeuristicPrior<'a> {
    map: &'a OccupancyMap,
    heat: Grid<f64>,
}

impl<'a> HeuristicPrior<'a> {
    pub fn new(map: &'a OccupancyMap) -> Self {
        Self {
            map,
            heat: Grid::filled(map.width(), map.height(), 1.0),
        }
    }
}

impl Prior for HeuristicPrior<'_> {
    fn prepare(&mut self, window: &TrajectoryWindow) -> Result<()> {
        self.heat = heuristic_prior(self.map, window)?;
        Ok(())
    }

    fn score(&self, p: Point2) -> Option<f64> {
        self.map.world_to_cell_checked(p).map(|(x, y)| *self.heat.get(x, y))
    }

    fn heatmap(&self) -> Result<Grid<f64>> {
        Ok(self.heat.clone())
    }
}
