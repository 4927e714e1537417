//! Occupancy grids: loading, feasibility queries and crops.
//!
//! Cell `(x, y)` covers the world rectangle
//! `[origin + x·res, origin + (x+1)·res) × [origin + y·res, origin + (y+1)·res)`,
//! so row 0 is the bottom of the map. PGM images store the top row first and
//! are flipped on load and save.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::grid::Grid;

pub const DEFAULT_FREE_THRESHOLD: u8 = 128;
pub const DEFAULT_RESOLUTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
}

impl Cell {
    #[inline]
    pub fn is_free(self) -> bool {
        self == Cell::Free
    }
}

/// JSON sidecar stored next to the PGM image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub resolution_m_per_px: f64,
    pub origin_x_m: f64,
    pub origin_y_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap {
    cells: Grid<Cell>,
    resolution: f64,
    origin: Point2,
}

/// A square segment of a parent map. `offset` is the parent cell of the crop's
/// cell `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapCrop {
    pub offset: (usize, usize),
    pub map: OccupancyMap,
}

impl OccupancyMap {
    pub fn new(cells: Grid<Cell>, resolution: f64, origin: Point2) -> Result<Self> {
        if cells.width == 0 || cells.height == 0 {
            return Err(Error::MalformedMap("map must have at least one cell".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidMeta(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidMeta("origin must be finite".into()));
        }
        Ok(Self {
            cells,
            resolution,
            origin,
        })
    }

    /// Builds a map from a boolean grid where `true` means free.
    pub fn from_free_mask(free: &Grid<bool>, resolution: f64, origin: Point2) -> Result<Self> {
        Self::new(
            free.map(|&f| if f { Cell::Free } else { Cell::Occupied }),
            resolution,
            origin,
        )
    }

    /// Parses an ASCII picture: `.` is free, anything else occupied. The first
    /// line is the top row.
    pub fn from_ascii(rows: &[&str], resolution: f64) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(Error::MalformedMap("ragged ascii map".into()));
        }
        let mut grid = Grid::filled(width, height, Cell::Occupied);
        for (row, line) in rows.iter().enumerate() {
            let y = height - 1 - row;
            for (x, ch) in line.chars().enumerate() {
                if ch == '.' {
                    *grid.get_mut(x, y) = Cell::Free;
                }
            }
        }
        Self::new(grid, resolution, Point2::ZERO)
    }

    pub fn width(&self) -> usize {
        self.cells.width
    }

    pub fn height(&self) -> usize {
        self.cells.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn cells(&self) -> &Grid<Cell> {
        &self.cells
    }

    pub fn meta(&self) -> MapMeta {
        MapMeta {
            resolution_m_per_px: self.resolution,
            origin_x_m: self.origin.x,
            origin_y_m: self.origin.y,
        }
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> Cell {
        *self.cells.get(x, y)
    }

    /// Cell state with out-of-bounds treated as occupied.
    #[inline]
    pub fn is_free_cell(&self, x: i64, y: i64) -> bool {
        matches!(self.cells.get_signed(x, y), Some(Cell::Free))
    }

    /// Containing cell of a world point (floor convention, may be out of bounds).
    #[inline]
    pub fn world_to_cell(&self, p: Point2) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.resolution).floor() as i64,
            ((p.y - self.origin.y) / self.resolution).floor() as i64,
        )
    }

    /// Like [`world_to_cell`](Self::world_to_cell) but `None` outside the grid.
    #[inline]
    pub fn world_to_cell_checked(&self, p: Point2) -> Option<(usize, usize)> {
        let (x, y) = self.world_to_cell(p);
        if x < 0 || y < 0 || x as usize >= self.width() || y as usize >= self.height() {
            None
        } else {
            Some((x as usize, y as usize))
        }
    }

    #[inline]
    pub fn cell_center(&self, x: i64, y: i64) -> Point2 {
        Point2::new(
            self.origin.x + (x as f64 + 0.5) * self.resolution,
            self.origin.y + (y as f64 + 0.5) * self.resolution,
        )
    }

    /// Whether the cell containing `p` is free. Points outside the grid are
    /// reported as occupied.
    #[inline]
    pub fn is_free(&self, p: Point2) -> bool {
        let (x, y) = self.world_to_cell(p);
        self.is_free_cell(x, y)
    }

    pub fn free_count(&self) -> usize {
        self.cells.data.iter().filter(|c| c.is_free()).count()
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width();
        self.cells
            .data
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_free())
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Free mask as 0/1 values, the network's map input encoding.
    pub fn free_mask_f32(&self) -> Vec<f32> {
        self.cells
            .data
            .iter()
            .map(|c| if c.is_free() { 1.0 } else { 0.0 })
            .collect()
    }

    /// Size-by-size crop around `center`, shifted to stay inside the map.
    pub fn crop(&self, center: (usize, usize), size: usize) -> Result<MapCrop> {
        if size == 0 || size > self.width() || size > self.height() {
            return Err(Error::CropTooLarge {
                size,
                width: self.width(),
                height: self.height(),
            });
        }
        let start = |c: usize, extent: usize| -> usize {
            let lo = c.saturating_sub(size / 2);
            lo.min(extent - size)
        };
        let ox = start(center.0, self.width());
        let oy = start(center.1, self.height());
        let mut data = Vec::with_capacity(size * size);
        for y in oy..oy + size {
            let row = y * self.width();
            data.extend_from_slice(&self.cells.data[row + ox..row + ox + size]);
        }
        let origin = Point2::new(
            self.origin.x + ox as f64 * self.resolution,
            self.origin.y + oy as f64 * self.resolution,
        );
        Ok(MapCrop {
            offset: (ox, oy),
            map: OccupancyMap::new(Grid::from_vec(size, size, data), self.resolution, origin)?,
        })
    }

    /// True when every cell touched by the straight segment `a → b` is free.
    /// Uses an exact grid traversal so diagonal corner-cutting through an
    /// occupied cell is detected. Symmetric in `a` and `b`: end points on cell
    /// boundaries count against the cells on both sides.
    pub fn segment_is_free(&self, a: Point2, b: Point2) -> bool {
        self.traverse_free(a, b) && self.traverse_free(b, a)
    }

    fn traverse_free(&self, a: Point2, b: Point2) -> bool {
        let to_grid = |p: Point2| {
            (
                (p.x - self.origin.x) / self.resolution,
                (p.y - self.origin.y) / self.resolution,
            )
        };
        let (ax, ay) = to_grid(a);
        let (bx, by) = to_grid(b);
        let mut cx = ax.floor() as i64;
        let mut cy = ay.floor() as i64;
        let ex = bx.floor() as i64;
        let ey = by.floor() as i64;
        if !self.is_free_cell(cx, cy) {
            return false;
        }
        let dx = bx - ax;
        let dy = by - ay;
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
        let mut t_max_x = if dx > 0.0 {
            (cx as f64 + 1.0 - ax) / dx
        } else if dx < 0.0 {
            (ax - cx as f64) / -dx
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy > 0.0 {
            (cy as f64 + 1.0 - ay) / dy
        } else if dy < 0.0 {
            (ay - cy as f64) / -dy
        } else {
            f64::INFINITY
        };
        // crossings at t >= 1 lie beyond the end point and are not touched
        let end = 1.0 - 1e-12;
        while t_max_x.min(t_max_y) < end {
            if t_max_x < t_max_y {
                cx += step_x;
                t_max_x += t_delta_x;
            } else if t_max_y < t_max_x {
                cy += step_y;
                t_max_y += t_delta_y;
            } else {
                // Exact corner crossing: both neighbours are touched.
                if !self.is_free_cell(cx + step_x, cy) || !self.is_free_cell(cx, cy + step_y) {
                    return false;
                }
                cx += step_x;
                cy += step_y;
                t_max_x += t_delta_x;
                t_max_y += t_delta_y;
            }
            if !self.is_free_cell(cx, cy) {
                return false;
            }
        }
        self.is_free_cell(ex, ey)
    }
}

/// Parses a binary (P5) PGM image into `(width, height, pixels)`, top row first.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedMap("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::MalformedMap(format!(
            "expected P5 magic, found {:?}",
            fields[0]
        )));
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::MalformedMap(format!("bad {what} {s:?}")))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedMap("zero dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::MalformedMap(format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedMap("missing raster separator".into()));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(Error::MalformedMap(format!(
            "dimension mismatch: header says {width}x{height} = {} bytes, payload has {}",
            width * height,
            payload.len()
        )));
    }
    Ok((width, height, payload.to_vec()))
}

/// Builds a map from PGM bytes. Pixels `>= threshold` are free.
pub fn map_from_pgm(bytes: &[u8], meta: &MapMeta, threshold: u8) -> Result<OccupancyMap> {
    let (width, height, pixels) = parse_pgm(bytes)?;
    let mut grid = Grid::filled(width, height, Cell::Occupied);
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            if pixels[row * width + x] >= threshold {
                *grid.get_mut(x, y) = Cell::Free;
            }
        }
    }
    OccupancyMap::new(
        grid,
        meta.resolution_m_per_px,
        Point2::new(meta.origin_x_m, meta.origin_y_m),
    )
}

pub fn load_meta(meta_path: &Path) -> Result<MapMeta> {
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: MapMeta = serde_json::from_str(&text)?;
    if !(meta.resolution_m_per_px > 0.0 && meta.resolution_m_per_px.is_finite()) {
        return Err(Error::InvalidMeta(format!(
            "resolution must be positive, got {}",
            meta.resolution_m_per_px
        )));
    }
    Ok(meta)
}

pub fn load_map(pgm_path: &Path, meta_path: &Path) -> Result<OccupancyMap> {
    load_map_with_threshold(pgm_path, meta_path, DEFAULT_FREE_THRESHOLD)
}

pub fn load_map_with_threshold(
    pgm_path: &Path,
    meta_path: &Path,
    threshold: u8,
) -> Result<OccupancyMap> {
    let meta = load_meta(meta_path)?;
    let bytes = fs::read(pgm_path).map_err(|e| Error::io(pgm_path, e))?;
    map_from_pgm(&bytes, &meta, threshold)
}

/// Sidecar path convention: `foo.pgm` → `foo.json`.
pub fn meta_path_for(pgm_path: &Path) -> std::path::PathBuf {
    pgm_path.with_extension("json")
}

pub fn encode_pgm(width: usize, height: usize, top_row_first: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(top_row_first);
    out
}

pub fn map_to_pgm(map: &OccupancyMap) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut pixels = Vec::with_capacity(w * h);
    for row in 0..h {
        let y = h - 1 - row;
        for x in 0..w {
            pixels.push(if map.cell(x, y).is_free() { 255 } else { 0 });
        }
    }
    encode_pgm(w, h, &pixels)
}

pub fn save_map(map: &OccupancyMap, pgm_path: &Path, meta_path: &Path) -> Result<()> {
    crate::io::write_atomic(pgm_path, &map_to_pgm(map))?;
    let meta = serde_json::to_string_pretty(&map.meta())?;
    crate::io::write_atomic(meta_path, meta.as_bytes())
}
