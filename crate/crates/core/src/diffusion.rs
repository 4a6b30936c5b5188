//! Explicit finite-volume solver for the diffusion limit
//! `d_t rho = div(div(rho D) - rho V)` with zero-flux walls.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kinetic::{diffusion_coefficients, CellTissue, ScalingParams};
use crate::linalg::{sym3_eigenvalues, Sym3};

/// In-plane coefficients per cell (nondimensional units).
#[derive(Debug, Clone)]
pub struct DiffusionFields {
    pub grid: GridSpec,
    /// `[Dxx, Dxy, Dyy]`.
    pub d: Vec<[f64; 3]>,
    /// Haptotactic drift `eta D lamH gradQ`.
    pub drift: Vec<[f64; 2]>,
    /// Largest eigenvalue of the full 3x3 tensor per cell.
    max_eig: f64,
}

impl DiffusionFields {
    pub fn new(grid: GridSpec, d: Vec<Sym3>, drift: Vec<[f64; 2]>) -> Result<Self> {
        grid.validate()?;
        if d.len() != grid.len() || drift.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} tensors for {} cells", d.len(), grid.len())));
        }
        let mut max_eig: f64 = 0.0;
        for (c, t) in d.iter().enumerate() {
            let ev = sym3_eigenvalues(t);
            if ev.iter().any(|e| *e < -1e-14) || !t.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidTensor(format!("diffusion tensor of cell {c} is not positive semidefinite")));
            }
            max_eig = max_eig.max(ev.iter().copied().fold(0.0, f64::max));
        }
        let d = d.iter().map(|t| [t[(0, 0)], t[(0, 1)], t[(1, 1)]]).collect();
        Ok(DiffusionFields { grid, d, drift, max_eig })
    }

    /// Coefficients of the diffusion limit for per-cell tissue data on a nondimensional grid.
    pub fn from_cells(grid: GridSpec, cells: &[CellTissue], s: &ScalingParams) -> Result<Self> {
        let mut d = Vec::with_capacity(cells.len());
        let mut drift = Vec::with_capacity(cells.len());
        for c in cells {
            let (dc, v) = diffusion_coefficients(c, s);
            d.push(dc);
            drift.push([v.x, v.y]);
        }
        DiffusionFields::new(grid, d, drift)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eig
    }

    /// Explicit bound `min(h^2 / (4 max eig D), h / (2 |V|max))`.
    pub fn stable_dt(&self) -> f64 {
        let h = self.grid.dx.min(self.grid.dy);
        let diff = if self.max_eig > 0.0 { 0.25 * h * h / self.max_eig } else { f64::INFINITY };
        let vmax = self.drift.iter().map(|v| v[0].abs().max(v[1].abs())).fold(0.0, f64::max);
        let adv = if vmax > 0.0 { 0.5 * h / vmax } else { f64::INFINITY };
        diff.min(adv)
    }
}

/// `div(div(rho D) - rho V)` with zero flux through the walls. Face fluxes
/// use two-point differences for the normal part and corner averages for
/// the mixed part, so the update telescopes.
pub fn diffusion_rhs(rho: &[f64], f: &DiffusionFields, out: &mut [f64]) {
    let g = &f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let at = |i: usize, j: usize| j * nx + i;
    // rho D_xy at the corner (i + 1/2, j + 1/2), i in -1..nx, j in -1..ny, averaged over the cells present
    let corner = |ci: isize, cj: isize| -> f64 {
        let mut sum = 0.0;
        let mut n = 0.0;
        for (i, j) in [(ci, cj), (ci + 1, cj), (ci, cj + 1), (ci + 1, cj + 1)] {
            if i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny {
                let c = at(i as usize, j as usize);
                sum += rho[c] * f.d[c][1];
                n += 1.0;
            }
        }
        sum / n
    };
    // x-face flux G_x at (i + 1/2, j) for interior faces
    let gx = |i: usize, j: usize| -> f64 {
        let (a, b) = (at(i, j), at(i + 1, j));
        let normal = (rho[b] * f.d[b][0] - rho[a] * f.d[a][0]) / g.dx;
        let mixed = (corner(i as isize, j as isize) - corner(i as isize, j as isize - 1)) / g.dy;
        let drift = 0.5 * (rho[a] * f.drift[a][0] + rho[b] * f.drift[b][0]);
        normal + mixed - drift
    };
    let gy = |i: usize, j: usize| -> f64 {
        let (a, b) = (at(i, j), at(i, j + 1));
        let normal = (rho[b] * f.d[b][2] - rho[a] * f.d[a][2]) / g.dy;
        let mixed = (corner(i as isize, j as isize) - corner(i as isize - 1, j as isize)) / g.dx;
        let drift = 0.5 * (rho[a] * f.drift[a][1] + rho[b] * f.drift[b][1]);
        normal + mixed - drift
    };
    out.par_iter_mut().enumerate().for_each(|(c, o)| {
        let (i, j) = (c % nx, c / nx);
        let east = if i + 1 < nx { gx(i, j) } else { 0.0 };
        let west = if i > 0 { gx(i - 1, j) } else { 0.0 };
        let north = if j + 1 < ny { gy(i, j) } else { 0.0 };
        let south = if j > 0 { gy(i, j - 1) } else { 0.0 };
        *o = (east - west) / g.dx + (north - south) / g.dy;
    });
}

/// One Heun step. Fails with the bound if `dt` exceeds [`DiffusionFields::stable_dt`].
pub fn diffusion_step(rho: &[f64], dt: f64, f: &DiffusionFields) -> Result<Vec<f64>> {
    let bound = f.stable_dt();
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::UnstableTimeStep { dt, bound });
    }
    if rho.len() != f.grid.len() {
        return Err(Error::GridMismatch(format!("{} values for {} cells", rho.len(), f.grid.len())));
    }
    let mut k = vec![0.0; rho.len()];
    diffusion_rhs(rho, f, &mut k);
    let stage: Vec<f64> = rho.iter().zip(&k).map(|(r, d)| r + dt * d).collect();
    diffusion_rhs(&stage, f, &mut k);
    Ok(rho.iter().zip(&stage).zip(&k).map(|((r, s), d)| 0.5 * r + 0.5 * (s + dt * d)).collect())
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DiffusionSummary {
    pub steps: usize,
    pub dt: f64,
    pub mass_initial: f64,
    pub mass_final: f64,
    pub max_relative_mass_defect: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct DiffusionOutput {
    pub snapshots: Vec<(f64, Vec<f64>)>,
    pub summary: DiffusionSummary,
}

/// Advance to `t_end` with `dt = safety * stable_dt`, saving at `output_times`
/// (and at `t_end`).
pub fn run_diffusion(
    rho0: Vec<f64>,
    f: &DiffusionFields,
    t_end: f64,
    output_times: &[f64],
    safety: f64,
) -> Result<DiffusionOutput> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidParameter(format!("time step safety factor must lie in (0, 1], got {safety}")));
    }
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!("t_end must be positive, got {t_end}")));
    }
    let start = std::time::Instant::now();
    let dt0 = safety * f.stable_dt();
    let dt0 = if dt0.is_finite() { dt0.min(t_end) } else { t_end };
    let mut targets: Vec<f64> = output_times.iter().copied().filter(|t| *t > 0.0 && *t < t_end).collect();
    targets.push(t_end);
    targets.sort_by(|a, b| a.total_cmp(b));
    targets.dedup();
    let area = f.grid.cell_area();
    let mass = |r: &[f64]| r.iter().sum::<f64>() * area;
    let mut rho = rho0;
    let m0 = mass(&rho);
    let mut summary = DiffusionSummary { dt: dt0, mass_initial: m0, ..Default::default() };
    let mut snapshots = Vec::new();
    if output_times.contains(&0.0) {
        snapshots.push((0.0, rho.clone()));
    }
    let mut t = 0.0;
    for &target in &targets {
        while t < target {
            let mut dt = dt0;
            let last = t + dt >= target - 1e-12 * dt0;
            if last {
                dt = target - t;
            }
            rho = diffusion_step(&rho, dt, f)?;
            t = if last { target } else { t + dt };
            summary.steps += 1;
            let defect = if m0 != 0.0 { ((mass(&rho) - m0) / m0).abs() } else { mass(&rho).abs() };
            summary.max_relative_mass_defect = summary.max_relative_mass_defect.max(defect);
        }
        snapshots.push((t, rho.clone()));
    }
    summary.mass_final = mass(&rho);
    summary.wall_seconds = start.elapsed().as_secs_f64();
    Ok(DiffusionOutput { snapshots, summary })
}
