use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform cell-centred Cartesian grid. `(x0, y0)` is the lower-left corner;
/// cell `(i, j)` has centre `(x0 + (i + 1/2) dx, y0 + (j + 1/2) dy)` and flat
/// index `j * nx + i` (row-major, y outer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64) -> Result<Self> {
        let g = GridSpec { nx, ny, x0, y0, dx, dy };
        g.validate()?;
        Ok(g)
    }

    /// `n x n` cells covering `[lo, hi]^2`.
    pub fn square(n: usize, lo: f64, hi: f64) -> Result<Self> {
        let h = (hi - lo) / n as f64;
        GridSpec::new(n, n, lo, lo, h, h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 3x3 cells, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dy > 0.0) || !self.dx.is_finite() || !self.dy.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive, got dx={} dy={}",
                self.dx, self.dy
            )));
        }
        if !self.x0.is_finite() || !self.y0.is_finite() {
            return Err(Error::InvalidParameter("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + (i as f64 + 0.5) * self.dx,
            self.y0 + (j as f64 + 0.5) * self.dy,
        )
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Same topology with every length divided by `length_scale`.
    pub fn scaled(&self, length_scale: f64) -> GridSpec {
        GridSpec {
            nx: self.nx,
            ny: self.ny,
            x0: self.x0 / length_scale,
            y0: self.y0 / length_scale,
            dx: self.dx / length_scale,
            dy: self.dy / length_scale,
        }
    }

    /// Fraction of cell `(i, j)` covered by the rectangle `[ax, bx] x [ay, by]`.
    pub fn overlap_fraction(&self, i: usize, j: usize, ax: f64, bx: f64, ay: f64, by: f64) -> f64 {
        let (cx, cy) = self.center(i, j);
        let ox = ((cx + 0.5 * self.dx).min(bx) - (cx - 0.5 * self.dx).max(ax)).max(0.0);
        let oy = ((cy + 0.5 * self.dy).min(by) - (cy - 0.5 * self.dy).max(ay)).max(0.0);
        (ox * oy) / self.cell_area()
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.x0 - other.x0).abs() <= 1e-12 * self.width().max(1.0)
            && (self.y0 - other.y0).abs() <= 1e-12 * self.height().max(1.0)
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
            && (self.dy - other.dy).abs() <= 1e-12 * self.dy
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_or_degenerate_grids() {
        assert!(GridSpec::new(2, 5, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(GridSpec::new(5, 5, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(GridSpec::new(3, 3, 0.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn overlap_of_half_covered_cell() {
        let g = GridSpec::square(90, 0.0, 3.0).unwrap();
        // cell 13 spans [0.4333, 0.4667]; the square starts at 0.45
        let f = g.overlap_fraction(13, 45, 0.45, 0.55, 0.0, 3.0);
        assert!((f - 0.5).abs() < 1e-12);
    }
}
