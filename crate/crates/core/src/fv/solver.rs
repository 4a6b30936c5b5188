use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::primitives::{is_admissible, lax_friedrichs_combine, limiter_theta, NewtonOptions, WenoParams};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kinetic::{Dir, MomentModel, Side, SystemOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// `dt = cfl * min(dx, dy) * eps`.
    pub cfl: f64,
    pub weno_theta: f64,
    pub weno_z: f64,
    /// Final nondimensional time.
    pub t_end: f64,
    /// Minimum admissible density.
    pub realizability_floor: f64,
    pub dg_newton_tol: f64,
    pub dg_newton_maxit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cfl: 0.25,
            weno_theta: 1e-6,
            weno_z: 2.0,
            t_end: 1.0,
            realizability_floor: 0.0,
            dg_newton_tol: 1e-12,
            dg_newton_maxit: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidParameter(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.weno_theta > 0.0 && self.weno_z > 0.0) {
            return Err(Error::InvalidParameter("WENO theta and z must be positive".into()));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParameter(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.realizability_floor >= 0.0) {
            return Err(Error::InvalidParameter("realizability floor must be nonnegative".into()));
        }
        if !(self.dg_newton_tol > 0.0) || self.dg_newton_maxit == 0 {
            return Err(Error::InvalidParameter("Newton tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn weno(&self) -> WenoParams {
        WenoParams { theta: self.weno_theta, z: self.weno_z }
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions { tol: self.dg_newton_tol, max_iter: self.dg_newton_maxit }
    }

    /// System options carrying this configuration's WENO and Newton settings.
    pub fn system_options(&self) -> SystemOptions {
        SystemOptions { weno: self.weno(), newton: self.newton(), ..SystemOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// Mass-conserving thermal walls.
    Thermal,
    Periodic,
}

/// Cell averages, `ncomp` values per cell in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentField {
    pub grid: GridSpec,
    pub ncomp: usize,
    pub data: Vec<f64>,
}

impl MomentField {
    pub fn zeros(grid: GridSpec, ncomp: usize) -> Self {
        MomentField { grid, ncomp, data: vec![0.0; grid.len() * ncomp] }
    }

    /// Field with `state(cell)` in every cell.
    pub fn from_fn<F: FnMut(usize) -> Vec<f64>>(grid: GridSpec, ncomp: usize, mut state: F) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len() * ncomp);
        for c in 0..grid.len() {
            let u = state(c);
            if u.len() != ncomp {
                return Err(Error::InvalidParameter(format!("state of length {} for {ncomp} components", u.len())));
            }
            data.extend_from_slice(&u);
        }
        Ok(MomentField { grid, ncomp, data })
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        &self.data[c * self.ncomp..(c + 1) * self.ncomp]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.ncomp..(c + 1) * self.ncomp]
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.data.iter().skip(k).step_by(self.ncomp).copied().collect()
    }

    pub fn density(&self) -> Vec<f64> {
        self.component(0)
    }

    /// `sum rho dx dy`, summed in grid order.
    pub fn total_mass(&self) -> f64 {
        self.data.iter().step_by(self.ncomp).sum::<f64>() * self.grid.cell_area()
    }
}

/// Counters of one flux or Strang step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepStats {
    /// Cell directions whose slope was scaled by the realizability limiter.
    pub limiter_activations: usize,
    /// Characteristic reconstructions replaced by the componentwise one.
    pub char_fallbacks: usize,
    /// Cells whose `|q|` exceeded `rho` by roundoff and were projected back.
    pub roundoff_clips: usize,
    /// Cells with non-realizable means (only for closures without a realizability guarantee).
    pub nonrealizable_cells: usize,
    /// Net mass leaving through the walls during the step.
    pub boundary_mass_out: f64,
}

impl StepStats {
    fn add(&mut self, o: &StepStats) {
        self.limiter_activations += o.limiter_activations;
        self.char_fallbacks += o.char_fallbacks;
        self.roundoff_clips += o.roundoff_clips;
        self.nonrealizable_cells = self.nonrealizable_cells.max(o.nonrealizable_cells);
        self.boundary_mass_out += o.boundary_mass_out;
    }
}

/// Largest stable time step `cfl * min(dx, dy) / C` with `C = 1/eps`.
pub fn stable_dt(system: &dyn MomentModel, cfl: f64) -> f64 {
    let g = system.grid();
    cfl * g.dx.min(g.dy) / system.speed_bound()
}

/// Face values `(u_minus_face, u_plus_face)` of the cell with mean `uc`
/// from WENO2 in characteristic variables; the flag is `false` when the
/// componentwise fallback was used.
pub fn characteristic_reconstruct(
    system: &dyn MomentModel,
    cell: usize,
    ul: &[f64],
    uc: &[f64],
    ur: &[f64],
    dir: Dir,
) -> (Vec<f64>, Vec<f64>, bool) {
    let h = match dir {
        Dir::X => system.grid().dx,
        Dir::Y => system.grid().dy,
    };
    let k = uc.len();
    let dm: Vec<f64> = (0..k).map(|i| (uc[i] - ul[i]) / h).collect();
    let dp: Vec<f64> = (0..k).map(|i| (ur[i] - uc[i]) / h).collect();
    let mut s = vec![0.0; k];
    let ok = system.slope(cell, uc, dir, &dm, &dp, &mut s);
    let lo = (0..k).map(|i| uc[i] - 0.5 * h * s[i]).collect();
    let hi = (0..k).map(|i| uc[i] + 0.5 * h * s[i]).collect();
    (lo, hi, ok)
}

/// Outward thermal wall flux of a boundary cell.
pub fn thermal_boundary_flux(system: &dyn MomentModel, cell: usize, u: &[f64], side: Side) -> Result<Vec<f64>> {
    let mut out = vec![0.0; u.len()];
    system.boundary_flux(cell, u, side, &mut out)?;
    Ok(out)
}

fn neighbor(g: &GridSpec, c: usize, side: Side, bc: Boundary) -> Option<usize> {
    let (i, j) = (c % g.nx, c / g.nx);
    let (nx, ny) = (g.nx, g.ny);
    let wrap = bc == Boundary::Periodic;
    match side {
        Side::West if i > 0 => Some(c - 1),
        Side::West if wrap => Some(c + nx - 1),
        Side::East if i + 1 < nx => Some(c + 1),
        Side::East if wrap => Some(c + 1 - nx),
        Side::South if j > 0 => Some(c - nx),
        Side::South if wrap => Some(c + nx * (ny - 1)),
        Side::North if j + 1 < ny => Some(c + nx),
        Side::North if wrap => Some(c - nx * (ny - 1)),
        _ => None,
    }
}

/// Reconstruct, limit and evaluate fluxes on the four faces of cell `c`.
/// Face slots follow `Side` (west, east, south, north); wall faces store
/// the outward thermal flux instead of the physical flux.
#[allow(clippy::too_many_arguments)]
fn cell_faces(
    system: &dyn MomentModel,
    u: &MomentField,
    c: usize,
    bc: Boundary,
    floor: f64,
    strict: bool,
    faces: &mut [f64],
    fluxes: &mut [f64],
) -> Result<StepStats> {
    let k = u.ncomp;
    let g = &u.grid;
    let uc = u.cell(c);
    let mut stats = StepStats::default();
    let admissible = is_admissible(uc, floor);
    if !admissible {
        if strict {
            return Err(Error::RealizabilityViolation {
                cell: c,
                detail: format!("cell mean rho = {:e}, |q| = {:e}", uc[0], (uc[1] * uc[1] + uc[2] * uc[2] + uc[3] * uc[3]).sqrt()),
            });
        }
        stats.nonrealizable_cells = 1;
    }
    let mut dm = vec![0.0; k];
    let mut dp = vec![0.0; k];
    let mut slope = vec![0.0; k];
    for (dir, lo_side, hi_side, h) in [(Dir::X, Side::West, Side::East, g.dx), (Dir::Y, Side::South, Side::North, g.dy)] {
        let lo_slot = lo_side as usize;
        let hi_slot = hi_side as usize;
        slope.fill(0.0);
        if let (Some(a), Some(b)) = (neighbor(g, c, lo_side, bc), neighbor(g, c, hi_side, bc)) {
            let (ua, ub) = (u.cell(a), u.cell(b));
            for i in 0..k {
                dm[i] = (uc[i] - ua[i]) / h;
                dp[i] = (ub[i] - uc[i]) / h;
            }
            if !system.slope(c, uc, dir, &dm, &dp, &mut slope) {
                stats.char_fallbacks += 1;
            }
        }
        let (lo, rest) = faces[lo_slot * k..].split_at_mut(k);
        let hi = &mut rest[(hi_slot - lo_slot - 1) * k..][..k];
        for i in 0..k {
            lo[i] = uc[i] - 0.5 * h * slope[i];
            hi[i] = uc[i] + 0.5 * h * slope[i];
        }
        if admissible {
            let theta = limiter_theta(uc, lo, floor)?.min(limiter_theta(uc, hi, floor)?);
            if theta < 1.0 {
                stats.limiter_activations += 1;
                for i in 0..k {
                    lo[i] = uc[i] - 0.5 * h * theta * slope[i];
                    hi[i] = uc[i] + 0.5 * h * theta * slope[i];
                }
            }
        }
    }
    for side in Side::ALL {
        let s = side as usize;
        let face = &faces[s * k..(s + 1) * k];
        let out = &mut fluxes[s * k..(s + 1) * k];
        let dir = if s < 2 { Dir::X } else { Dir::Y };
        if neighbor(g, c, side, bc).is_some() {
            system.flux(c, face, dir, out)?;
        } else {
            system.boundary_flux(c, face, side, out)?;
        }
    }
    Ok(stats)
}

/// Semi-discrete right-hand side `L(u)` of the flux part.
fn flux_rhs(system: &dyn MomentModel, u: &MomentField, bc: Boundary, floor: f64, rhs: &mut [f64]) -> Result<StepStats> {
    let k = u.ncomp;
    let g = u.grid;
    let n = g.len();
    let strict = system.realizable_closure();
    let mut faces = vec![0.0; n * 4 * k];
    let mut fluxes = vec![0.0; n * 4 * k];
    let per_cell: Vec<StepStats> = faces
        .par_chunks_mut(4 * k)
        .zip(fluxes.par_chunks_mut(4 * k))
        .enumerate()
        .map(|(c, (fa, fl))| {
            cell_faces(system, u, c, bc, floor, strict, fa, fl)
                .map_err(|e| e.at_cell(c % g.nx, c / g.nx))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stats = StepStats::default();
    for s in &per_cell {
        stats.add(s);
    }
    stats.nonrealizable_cells = per_cell.iter().map(|s| s.nonrealizable_cells).sum();

    let cspeed = system.speed_bound();
    let wall_mass: Vec<f64> = rhs
        .par_chunks_mut(k)
        .enumerate()
        .map(|(c, r)| {
            let mut hat = vec![0.0; k];
            let mut wall = 0.0;
            r.fill(0.0);
            for side in Side::ALL {
                let s = side as usize;
                let (h, sign) = match side {
                    Side::West => (g.dx, 1.0),
                    Side::East => (g.dx, -1.0),
                    Side::South => (g.dy, 1.0),
                    Side::North => (g.dy, -1.0),
                };
                let my_face = &faces[(c * 4 + s) * k..][..k];
                let my_flux = &fluxes[(c * 4 + s) * k..][..k];
                match neighbor(&g, c, side, bc) {
                    Some(nb) => {
                        let opp = s ^ 1;
                        let nb_face = &faces[(nb * 4 + opp) * k..][..k];
                        let nb_flux = &fluxes[(nb * 4 + opp) * k..][..k];
                        if sign > 0.0 {
                            lax_friedrichs_combine(nb_face, my_face, nb_flux, my_flux, cspeed, &mut hat);
                        } else {
                            lax_friedrichs_combine(my_face, nb_face, my_flux, nb_flux, cspeed, &mut hat);
                        }
                        for i in 0..k {
                            r[i] += sign * hat[i] / h;
                        }
                    }
                    None => {
                        for i in 0..k {
                            r[i] -= my_flux[i] / h;
                        }
                        let len = if s < 2 { g.dy } else { g.dx };
                        wall += my_flux[0] * len;
                    }
                }
            }
            wall
        })
        .collect();
    stats.boundary_mass_out = wall_mass.iter().sum();
    Ok(stats)
}

/// Check the first-order realizability of every cell mean, projecting
/// roundoff-sized violations of `|q| <= rho` back onto the boundary.
fn enforce_means(system: &dyn MomentModel, u: &mut MomentField, floor: f64, stats: &mut StepStats) -> Result<()> {
    let k = u.ncomp;
    let nx = u.grid.nx;
    let strict = system.realizable_closure();
    for (c, v) in u.data.chunks_mut(k).enumerate() {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::RealizabilityViolation { cell: c, detail: "non-finite state".into() }.at_cell(c % nx, c / nx));
        }
        if !strict {
            continue;
        }
        let q = (v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
        if v[0] < floor {
            return Err(Error::RealizabilityViolation { cell: c, detail: format!("rho = {:e} below floor {floor:e}", v[0]) }
                .at_cell(c % nx, c / nx));
        }
        if q > v[0] {
            if q <= v[0] * (1.0 + 1e-10) {
                let f = v[0] / q;
                v[1] *= f;
                v[2] *= f;
                v[3] *= f;
                stats.roundoff_clips += 1;
            } else {
                return Err(Error::RealizabilityViolation {
                    cell: c,
                    detail: format!("|q| = {q:e} exceeds rho = {:e}", v[0]),
                }
                .at_cell(c % nx, c / nx));
            }
        }
    }
    Ok(())
}

/// One Heun (SSP-RK2) step of the flux part, with reconstruction and
/// limiting in both stages.
pub fn flux_step(
    system: &dyn MomentModel,
    u: &mut MomentField,
    dt: f64,
    cfg: &SolverConfig,
    bc: Boundary,
) -> Result<StepStats> {
    let bound = stable_dt(system, 1.0);
    if dt > bound * cfg.cfl * (1.0 + 1e-12) {
        return Err(Error::UnstableTimeStep { dt, bound: bound * cfg.cfl });
    }
    if u.ncomp != system.ncomp() || !u.grid.same_as(system.grid()) {
        return Err(Error::GridMismatch("field does not match the moment system".into()));
    }
    let floor = cfg.realizability_floor;
    let mut rhs = vec![0.0; u.data.len()];
    let mut stats = flux_rhs(system, u, bc, floor, &mut rhs)?;
    let mut stage = u.clone();
    for (s, r) in stage.data.iter_mut().zip(&rhs) {
        *s += dt * r;
    }
    enforce_means(system, &mut stage, floor, &mut stats)?;
    let s2 = flux_rhs(system, &stage, bc, floor, &mut rhs)?;
    let wall = 0.5 * dt * (stats.boundary_mass_out + s2.boundary_mass_out);
    stats.add(&s2);
    stats.boundary_mass_out = wall;
    for ((x, s), r) in u.data.iter_mut().zip(&stage.data).zip(&rhs) {
        *x = 0.5 * *x + 0.5 * (s + dt * r);
    }
    enforce_means(system, u, floor, &mut stats)?;
    Ok(stats)
}

/// Advance the source part by `dt` in every cell.
pub fn source_half_step(system: &dyn MomentModel, u: &mut MomentField, dt: f64) -> Result<()> {
    system.prepare_source(dt)?;
    let k = u.ncomp;
    let nx = u.grid.nx;
    u.data
        .par_chunks_mut(k)
        .enumerate()
        .try_for_each(|(c, v)| system.source_step(c, v, dt).map_err(|e| e.at_cell(c % nx, c / nx)))
}

/// Strang step: source `dt/2`, flux `dt`, source `dt/2`.
pub fn strang_step(
    system: &dyn MomentModel,
    u: &mut MomentField,
    dt: f64,
    cfg: &SolverConfig,
    bc: Boundary,
) -> Result<StepStats> {
    source_half_step(system, u, 0.5 * dt)?;
    let stats = flux_step(system, u, dt, cfg, bc)?;
    source_half_step(system, u, 0.5 * dt)?;
    let mut dummy = StepStats::default();
    enforce_means(system, u, cfg.realizability_floor, &mut dummy)?;
    Ok(stats)
}

/// Summary of a full run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub dt: f64,
    pub t_final: f64,
    pub mass_initial: f64,
    pub mass_final: f64,
    /// Largest `|M(t) - M(0) + outflow(t)| / M(0)` over all steps.
    pub max_relative_mass_defect: f64,
    pub limiter_activations: usize,
    pub char_fallbacks: usize,
    pub roundoff_clips: usize,
    /// Largest number of non-realizable cells seen in one step.
    pub max_nonrealizable_cells: usize,
    pub min_density: f64,
    pub max_q_ratio: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Saved states at the requested output times.
    pub snapshots: Vec<(f64, MomentField)>,
    pub summary: RunSummary,
}

/// Run from `t = 0` to `cfg.t_end`, saving the state at every entry of
/// `output_times` (clipped to `t_end`) and at `t_end`.
pub fn run(
    system: &dyn MomentModel,
    initial: MomentField,
    cfg: &SolverConfig,
    bc: Boundary,
    output_times: &[f64],
) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let dt0 = stable_dt(system, cfg.cfl);
    let mut targets: Vec<f64> = output_times.iter().copied().filter(|t| *t > 0.0 && *t < cfg.t_end).collect();
    targets.push(cfg.t_end);
    targets.sort_by(|a, b| a.total_cmp(b));
    targets.dedup();

    let mut u = initial;
    let mut snapshots = Vec::new();
    if output_times.contains(&0.0) {
        snapshots.push((0.0, u.clone()));
    }
    let mass0 = u.total_mass();
    let mut summary = RunSummary { dt: dt0, mass_initial: mass0, min_density: f64::INFINITY, ..Default::default() };
    let mut outflow = 0.0;
    let mut t = 0.0;
    for &target in &targets {
        while t < target {
            let mut dt = dt0;
            let mut last = false;
            if t + dt >= target - 1e-12 * dt0 {
                dt = target - t;
                last = true;
            }
            let stats = strang_step(system, &mut u, dt, cfg, bc)?;
            t = if last { target } else { t + dt };
            summary.steps += 1;
            summary.limiter_activations += stats.limiter_activations;
            summary.char_fallbacks += stats.char_fallbacks;
            summary.roundoff_clips += stats.roundoff_clips;
            summary.max_nonrealizable_cells = summary.max_nonrealizable_cells.max(stats.nonrealizable_cells);
            outflow += stats.boundary_mass_out;
            let m = u.total_mass();
            let defect = if mass0 != 0.0 { ((m - mass0 + outflow) / mass0).abs() } else { (m + outflow).abs() };
            summary.max_relative_mass_defect = summary.max_relative_mass_defect.max(defect);
            for v in u.data.chunks(u.ncomp) {
                summary.min_density = summary.min_density.min(v[0]);
                if v[0] > 0.0 {
                    let q = (v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
                    summary.max_q_ratio = summary.max_q_ratio.max(q / v[0]);
                }
            }
        }
        snapshots.push((t, u.clone()));
    }
    summary.t_final = t;
    summary.mass_final = u.total_mass();
    summary.wall_seconds = start.elapsed().as_secs_f64();
    Ok(RunOutput { snapshots, summary })
}
