//! Procedural test maps.

use crate::geom::Point2;
use crate::grid::Grid;
use crate::map::OccupancyMap;

struct Canvas {
    free: Grid<bool>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            free: Grid::filled(width, height, false),
        }
    }

    /// Sets the half-open cell rectangle `[x0, x1) × [y0, y1)`.
    fn fill(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, free: bool) {
        for y in y0..y1.min(self.free.height) {
            for x in x0..x1.min(self.free.width) {
                *self.free.get_mut(x, y) = free;
            }
        }
    }

    fn finish(self, resolution: f64) -> OccupancyMap {
        OccupancyMap::from_free_mask(&self.free, resolution, Point2::ZERO)
            .expect("procedural maps are valid")
    }
}

/// Fully free `width_m × height_m` area (rounded up to whole cells).
pub fn open(width_m: f64, height_m: f64, resolution: f64) -> OccupancyMap {
    let w = (width_m / resolution).ceil() as usize;
    let h = (height_m / resolution).ceil() as usize;
    let mut c = Canvas::new(w, h);
    c.fill(0, 0, w, h, true);
    c.finish(resolution)
}

/// A straight 2 m wide, 22 m long corridor inside a 96×24 cell map.
pub fn corridor(resolution: f64) -> OccupancyMap {
    let mut c = Canvas::new(96, 24);
    c.fill(4, 8, 92, 16, true);
    c.finish(resolution)
}

/// A 128×72 cell office floor: a 2 m wide rectangular loop corridor with
/// office-sized rooms inside and outside the loop. Room widths and door
/// positions vary and a few rooms hold furniture, so that locations are
/// distinguishable by trajectory shape.
pub fn corridor_rooms(resolution: f64) -> OccupancyMap {
    let mut c = Canvas::new(128, 72);
    // loop corridor, 2 m wide
    c.fill(14, 14, 114, 22, true);
    c.fill(14, 50, 114, 58, true);
    c.fill(14, 14, 22, 58, true);
    c.fill(106, 14, 114, 58, true);
    // outer rooms: bottom and top rows
    let xs = [2, 18, 34, 52, 66, 84, 98, 112, 128];
    let bottom_doors = [14, 6, 3, 9, 2, 8, 5, 4];
    let top_doors = [14, 3, 10, 2, 7, 4, 9, 4];
    for i in 0..8 {
        let (x0, x1) = (xs[i], xs[i + 1] - 2);
        c.fill(x0, 2, x1, 12, true);
        c.fill(x0, 60, x1, 70, true);
        let db = (x0 + bottom_doors[i]).clamp(16, 108).min(x1 - 4);
        c.fill(db, 12, db + 4, 14, true);
        let dt = (x0 + top_doors[i]).clamp(16, 108).min(x1 - 4);
        c.fill(dt, 58, dt + 4, 60, true);
    }
    // outer rooms: left and right columns
    for &(y0, y1, d) in &[(14, 34, 20), (36, 58, 44)] {
        c.fill(2, y0, 12, y1, true);
        c.fill(12, d, 14, d + 4, true);
        c.fill(116, y0, 126, y1, true);
        c.fill(114, d + 6, 116, d + 10, true);
    }
    // inner rooms
    let inner = [24, 40, 58, 72, 88, 106];
    let inner_doors = [4, 9, 3, 8, 5];
    for i in 0..5 {
        let (x0, x1) = (inner[i], inner[i + 1] - 2);
        c.fill(x0, 24, x1, 35, true);
        c.fill(x0, 37, x1, 48, true);
        let d = x0 + inner_doors[i];
        c.fill(d, 22, d + 4, 24, true);
        let d = x1 - inner_doors[i] - 4;
        c.fill(d, 48, d + 4, 50, true);
    }
    // furniture
    c.fill(6, 4, 10, 8, false);
    c.fill(70, 4, 76, 8, false);
    c.fill(44, 64, 48, 68, false);
    c.fill(92, 40, 98, 44, false);
    c.finish(resolution)
}
