//! Pointwise relative difference `|h1 - h2| / max |h2|` between two fields.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Contour levels used for exceedance areas.
pub const CONTOUR_LEVELS: [f64; 4] = [0.1, 0.05, 0.02, 0.01];

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    #[serde(skip)]
    pub grid: GridSpec,
    #[serde(skip)]
    pub field: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    /// `(level, area)` where the relative difference exceeds `level`.
    pub exceedance: Vec<(f64, f64)>,
}

pub fn relative_difference(grid: &GridSpec, h1: &[f64], h2: &[f64]) -> Result<ComparisonReport> {
    if h1.len() != grid.len() || h2.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "fields of {} and {} values on a grid of {} cells",
            h1.len(),
            h2.len(),
            grid.len()
        )));
    }
    let norm = h2.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidParameter("reference field has zero (or non-finite) maximum norm".into()));
    }
    let field: Vec<f64> = h1.iter().zip(h2).map(|(a, b)| (a - b).abs() / norm).collect();
    let max = field.iter().copied().fold(0.0, f64::max);
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let area = grid.cell_area();
    let exceedance = CONTOUR_LEVELS
        .iter()
        .map(|&l| (l, field.iter().filter(|x| **x > l).count() as f64 * area))
        .collect();
    Ok(ComparisonReport { grid: *grid, field, max, mean, exceedance })
}

impl ComparisonReport {
    /// `x,y,relerr` rows at the cell centres.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,relerr\n");
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let (x, y) = self.grid.center(i, j);
                let _ = writeln!(s, "{x},{y},{:e}", self.field[self.grid.index(i, j)]);
            }
        }
        s
    }
}
