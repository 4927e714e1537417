use crate::error::{Error, Result};
use crate::geom::Point2;

/// Fixed-length run of positions (meters) relative to the first one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub points: Vec<Point2>,
}

impl TrajectoryWindow {
    /// Re-expresses absolute positions relative to the first.
    pub fn from_absolute(points: &[Point2]) -> Self {
        let origin = points.first().copied().unwrap_or(Point2::ZERO);
        Self {
            points: points.iter().map(|&p| p - origin).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn end(&self) -> Point2 {
        self.points.last().copied().unwrap_or(Point2::ZERO)
    }

    /// Rotates every point about the window start.
    pub fn rotated(&self, angle: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| p.rotated(angle)).collect(),
        }
    }

    /// Per-step displacements (`len - 1` entries).
    pub fn steps(&self) -> Vec<Point2> {
        self.points.windows(2).map(|p| p[1] - p[0]).collect()
    }

    /// Rebuilds a window from displacements, starting at the origin.
    pub fn from_steps(steps: &[Point2]) -> Self {
        let mut points = Vec::with_capacity(steps.len() + 1);
        let mut p = Point2::ZERO;
        points.push(p);
        for s in steps {
            p += *s;
            points.push(p);
        }
        Self { points }
    }
}

/// All windows of `len` consecutive positions, sliding by one sample.
pub fn window(positions: &[Point2], len: usize) -> Result<Vec<TrajectoryWindow>> {
    if len == 0 || positions.len() < len {
        return Err(Error::StreamTooShort {
            needed: len.max(1),
            have: positions.len(),
        });
    }
    Ok(positions
        .windows(len)
        .map(TrajectoryWindow::from_absolute)
        .collect())
}

/// Windows of `n_seconds · rate_hz` positions over a position stream sampled
/// at `rate_hz`.
pub fn window_stream(positions: &[Point2], n_seconds: f64, rate_hz: f64) -> Result<Vec<TrajectoryWindow>> {
    window(positions, (n_seconds * rate_hz).round() as usize)
}
