use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix, SVector, Vector3, Vector4};

use super::{first_order_flux, ScalingParams};
use crate::closures::{
    check_unit_trace, kershaw_closure_prechecked, kershaw_flux_jacobian, kershaw_pressure_dq, m1f_closure, m1f_solve, pn_basis, weighted_gram,
    M1Options, ModelKind, MomentVector1, PnBasis,
};
use crate::error::{Error, Result};
use crate::fv::primitives::{
    componentwise_slope, dg_source_step, projector_slope4, DgTime, LinearChar, NewtonOptions, WenoParams,
};
use crate::grid::GridSpec;
use crate::linalg::{symmetrizable_basis, Sym3};
use crate::quadrature::{build_half_range, build_quadrature, SphereQuadrature, DEFAULT_DEGREE};
use crate::tissue::{peanut_density, peanut_pressure_tensor, TissueFields};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    X,
    Y,
}

impl Dir {
    pub fn index(self) -> usize {
        match self {
            Dir::X => 0,
            Dir::Y => 1,
        }
    }

    pub fn unit(self) -> Vector3<f64> {
        match self {
            Dir::X => Vector3::x(),
            Dir::Y => Vector3::y(),
        }
    }
}

/// Domain wall, named by its outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    West,
    East,
    South,
    North,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::West, Side::East, Side::South, Side::North];

    pub fn normal(self) -> Vector3<f64> {
        match self {
            Side::West => -Vector3::x(),
            Side::East => Vector3::x(),
            Side::South => -Vector3::y(),
            Side::North => Vector3::y(),
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Tissue data of one cell in solver units (gradients per unit nondimensional length).
#[derive(Debug, Clone, PartialEq)]
pub struct CellTissue {
    pub dw: Sym3,
    /// `<v v Q>`.
    pub df: Sym3,
    /// `<v Q>`; zero for the peanut distribution.
    pub m1: Vector3<f64>,
    pub lam_h: f64,
    pub grad_q: Vector3<f64>,
}

impl CellTissue {
    pub fn peanut(dw: Sym3, lam_h: f64, grad_q: Vector3<f64>) -> Result<Self> {
        Ok(CellTissue { df: peanut_pressure_tensor(&dw)?, dw, m1: Vector3::zeros(), lam_h, grad_q })
    }

    fn key(&self) -> [u64; 10] {
        let d = &self.dw;
        [
            d[(0, 0)].to_bits(),
            d[(1, 1)].to_bits(),
            d[(2, 2)].to_bits(),
            d[(0, 1)].to_bits(),
            d[(0, 2)].to_bits(),
            d[(1, 2)].to_bits(),
            self.lam_h.to_bits(),
            self.grad_q.x.to_bits(),
            self.grad_q.y.to_bits(),
            self.grad_q.z.to_bits(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemOptions {
    /// Velocity quadrature degree; `None` picks `max(10, 2N + 3)`.
    pub quad_degree: Option<usize>,
    pub half_range_degree: usize,
    pub m1: M1Options,
    pub newton: NewtonOptions,
    pub weno: WenoParams,
}

impl Default for SystemOptions {
    fn default() -> Self {
        SystemOptions {
            quad_degree: None,
            half_range_degree: 16,
            m1: M1Options::default(),
            newton: NewtonOptions::default(),
            weno: WenoParams::default(),
        }
    }
}

/// Per-cell hyperbolic relaxation system in nondimensional variables:
/// `d_t u + d_x F_x(u) + d_y F_y(u) = S(u)` where the fluxes already carry
/// the `1/eps` factor. The first four components of every model are
/// `(rho, q_x, q_y, q_z)`.
pub trait MomentModel: Sync + Send {
    fn kind(&self) -> ModelKind;
    fn ncomp(&self) -> usize;
    /// Nondimensional grid.
    fn grid(&self) -> &GridSpec;
    fn scaling(&self) -> &ScalingParams;
    fn weno(&self) -> &WenoParams;

    /// Global Lax-Friedrichs constant `1/eps`.
    fn speed_bound(&self) -> f64 {
        1.0 / self.scaling().eps
    }

    fn flux(&self, cell: usize, u: &[f64], dir: Dir, out: &mut [f64]) -> Result<()>;

    /// Characteristic WENO slope from the divided differences `dm`, `dp`
    /// around cell state `u`. Returns `false` if the componentwise fallback
    /// was used.
    fn slope(&self, cell: usize, u: &[f64], dir: Dir, dm: &[f64], dp: &[f64], out: &mut [f64]) -> bool;

    /// Outward boundary flux `<(v . n) a f_b> / eps` of the thermal wall.
    fn boundary_flux(&self, cell: usize, u: &[f64], side: Side, out: &mut [f64]) -> Result<()>;

    /// Called once before a sweep of `source_step` with the same `dt`.
    fn prepare_source(&self, _dt: f64) -> Result<()> {
        Ok(())
    }

    fn source_step(&self, cell: usize, u: &mut [f64], dt: f64) -> Result<()>;

    /// Flux Jacobian in direction `dir` (including `1/eps`).
    fn flux_jacobian(&self, cell: usize, u: &[f64], dir: Dir) -> Result<DMatrix<f64>>;

    /// Moments of the isotropic distribution `rho / (4 pi)`.
    fn isotropic_state(&self, rho: f64) -> Vec<f64> {
        let mut u = vec![0.0; self.ncomp()];
        u[0] = rho;
        u
    }

    /// Whether the closure maps realizable moments to realizable fluxes, so
    /// that the scheme keeps cell means realizable.
    fn realizable_closure(&self) -> bool {
        false
    }
}

/// Build a solver system for `kind` on the tissue grid; lengths are divided by `x0`.
pub fn build_system(
    kind: ModelKind,
    tissue: &TissueFields,
    scaling: &ScalingParams,
    opts: SystemOptions,
) -> Result<Box<dyn MomentModel>> {
    let grid = tissue.grid.scaled(scaling.x0);
    build_system_from_cells(kind, grid, tissue_cells(tissue, scaling)?, scaling, opts)
}

/// Per-cell tissue data with gradients converted to nondimensional length.
pub fn tissue_cells(tissue: &TissueFields, scaling: &ScalingParams) -> Result<Vec<CellTissue>> {
    tissue
        .dw
        .iter()
        .zip(&tissue.lam_h)
        .zip(&tissue.grad_q)
        .map(|((dw, lh), g)| CellTissue::peanut(*dw, *lh, Vector3::new(g.x, g.y, 0.0) * scaling.x0))
        .collect()
}

pub fn build_system_from_cells(
    kind: ModelKind,
    grid: GridSpec,
    cells: Vec<CellTissue>,
    scaling: &ScalingParams,
    opts: SystemOptions,
) -> Result<Box<dyn MomentModel>> {
    grid.validate()?;
    if cells.len() != grid.len() {
        return Err(Error::GridMismatch(format!("{} tissue cells for {} grid cells", cells.len(), grid.len())));
    }
    for c in &cells {
        check_unit_trace(&c.df)?;
    }
    Ok(match kind {
        ModelKind::Diffusion => {
            return Err(Error::InvalidParameter("the diffusion model has no moment system".into()));
        }
        ModelKind::K1F | ModelKind::M1F => Box::new(FirstOrderSystem::new(kind, grid, cells, scaling, opts)?),
        ModelKind::P1F => Box::new(PnSystem::new(kind, 1, true, grid, cells, scaling, opts)?),
        ModelKind::PN(n) => Box::new(PnSystem::new(kind, n, false, grid, cells, scaling, opts)?),
        ModelKind::PNF(n) => Box::new(PnSystem::new(kind, n, true, grid, cells, scaling, opts)?),
    })
}

fn peanut_nodes(dw: &Sym3, quad: &SphereQuadrature) -> Result<Vec<f64>> {
    quad.nodes().iter().map(|v| peanut_density(dw, v)).collect()
}

fn is_boundary(grid: &GridSpec, cell: usize) -> bool {
    let (i, j) = (cell % grid.nx, cell / grid.nx);
    i == 0 || j == 0 || i + 1 == grid.nx || j + 1 == grid.ny
}

/// Incoming emission per unit absorbed mass: `<(v . n) (1, v) Q> / zeta` over `v . n < 0`.
fn emission_first_order(dw: &Sym3, incoming: &SphereQuadrature, n: &Vector3<f64>) -> Result<Vector4<f64>> {
    let mut zeta = 0.0;
    let mut e = Vector3::zeros();
    for (v, w) in incoming.iter() {
        let q = peanut_density(dw, v)?;
        let vn = v.dot(n);
        zeta -= w * vn * q;
        e += v * (w * vn * q);
    }
    if !(zeta > 0.0) {
        return Err(Error::InvalidParameter("anchor vanishes on the incoming hemisphere (zeta = 0)".into()));
    }
    e /= zeta;
    Ok(Vector4::new(-1.0, e.x, e.y, e.z))
}

// --------------------------------------------------------------------------
// First-order nonlinear closures

/// `K1^(F)` and `M1^(F)` systems.
pub struct FirstOrderSystem {
    kind: ModelKind,
    grid: GridSpec,
    scaling: ScalingParams,
    opts: SystemOptions,
    cells: Vec<CellTissue>,
    quad: SphereQuadrature,
    /// Peanut values on `quad`; per cell for M1F, boundary cells only for K1F.
    anchors: HashMap<usize, Vec<f64>>,
    outgoing: Vec<SphereQuadrature>,
    emission: HashMap<(usize, usize), Vector4<f64>>,
    dg: DgTime,
}

impl FirstOrderSystem {
    pub fn new(
        kind: ModelKind,
        grid: GridSpec,
        cells: Vec<CellTissue>,
        scaling: &ScalingParams,
        opts: SystemOptions,
    ) -> Result<Self> {
        let degree = opts.quad_degree.unwrap_or(DEFAULT_DEGREE.max(opts.half_range_degree));
        let quad = build_quadrature(degree)?;
        let mut anchors = HashMap::new();
        let mut emission = HashMap::new();
        let mut outgoing = Vec::new();
        let mut incoming = Vec::new();
        for side in Side::ALL {
            outgoing.push(build_half_range(&side.normal(), opts.half_range_degree)?);
            incoming.push(build_half_range(&(-side.normal()), opts.half_range_degree)?);
        }
        for (c, cell) in cells.iter().enumerate() {
            let boundary = is_boundary(&grid, c);
            if kind == ModelKind::M1F || boundary {
                anchors.insert(c, peanut_nodes(&cell.dw, &quad)?);
            }
            if boundary {
                for side in Side::ALL {
                    emission.insert((c, side.slot()), emission_first_order(&cell.dw, &incoming[side.slot()], &side.normal())?);
                }
            }
        }
        Ok(FirstOrderSystem {
            kind,
            grid,
            scaling: *scaling,
            opts,
            cells,
            quad,
            anchors,
            outgoing,
            emission,
            dg: DgTime::new(),
        })
    }

    fn pressure(&self, cell: usize, m: &MomentVector1) -> Result<Sym3> {
        match self.kind {
            ModelKind::K1F => Ok(kershaw_closure_prechecked(m, &self.cells[cell].df)?.p),
            _ => Ok(m1f_closure(m, &self.anchors[&cell], &self.quad, self.scaling.eps, &self.opts.m1)?.p),
        }
    }

    fn jacobian4(&self, cell: usize, u: &[f64], n: &Vector3<f64>) -> Result<Matrix4<f64>> {
        let m = MomentVector1::from_slice(u);
        match self.kind {
            ModelKind::K1F => Ok(kershaw_flux_jacobian(&m, &self.cells[cell].df, n)),
            _ => {
                // central differences of the unit-speed flux
                let flux = |w: &[f64; 4]| -> Result<Vector4<f64>> {
                    let mm = MomentVector1::from_slice(w);
                    let pn = self.pressure(cell, &mm)? * n;
                    Ok(Vector4::new(mm.q.dot(n), pn.x, pn.y, pn.z))
                };
                let base = [u[0], u[1], u[2], u[3]];
                let mut j = Matrix4::zeros();
                for c in 0..4 {
                    let h = 1e-7 * base[0].abs().max(1e-300);
                    let mut up = base;
                    let mut dn = base;
                    up[c] += h;
                    dn[c] -= h;
                    let d = (flux(&up)? - flux(&dn)?) / (2.0 * h);
                    j.set_column(c, &d);
                }
                Ok(j)
            }
        }
    }

    /// `s(q)` and `ds/dq` with `rho` held fixed.
    fn source_and_jacobian(&self, cell: usize, rho: f64, q: &Vector3<f64>) -> Result<(Vector3<f64>, nalgebra::Matrix3<f64>)> {
        let t = &self.cells[cell];
        let s = &self.scaling;
        let c1 = s.r / (s.eps * s.eps);
        let c2 = s.eta / s.eps * t.lam_h;
        let m = MomentVector1::new(rho, *q);
        match self.kind {
            ModelKind::K1F => {
                let qh = q / rho;
                let pg = t.df * t.grad_q * (rho * (1.0 - qh.norm_squared())) + q * qh.dot(&t.grad_q);
                let val = -(q - t.m1 * rho) * c1 + (pg - t.m1 * q.dot(&t.grad_q)) * c2;
                let jac = nalgebra::Matrix3::identity() * (-c1)
                    + (kershaw_pressure_dq(&m, &t.df, &t.grad_q) - t.m1 * t.grad_q.transpose()) * c2;
                Ok((val, jac))
            }
            _ => {
                let eval = |qq: &Vector3<f64>| -> Result<Vector3<f64>> {
                    let mm = MomentVector1::new(rho, *qq);
                    let p = self.pressure(cell, &mm)?;
                    Ok(-(qq - t.m1 * rho) * c1 + (p * t.grad_q - t.m1 * qq.dot(&t.grad_q)) * c2)
                };
                let val = eval(q)?;
                let mut jac = nalgebra::Matrix3::zeros();
                if c2 != 0.0 {
                    for c in 0..3 {
                        let h = 1e-7 * rho;
                        let mut up = *q;
                        let mut dn = *q;
                        up[c] += h;
                        dn[c] -= h;
                        jac.set_column(c, &((eval(&up)? - eval(&dn)?) / (2.0 * h)));
                    }
                } else {
                    jac = nalgebra::Matrix3::identity() * (-c1);
                }
                Ok((val, jac))
            }
        }
    }

    fn kershaw_newton(&self, cell: usize, rho: f64, q_old: &Vector3<f64>, dt: f64) -> Result<Vector3<f64>> {
        let dg = &self.dg;
        let mut nodes = [*q_old; 3];
        let scale = rho.max(q_old.amax()).max(1e-300);
        let mut history = Vec::new();
        for _ in 0..self.opts.newton.max_iter {
            let mut res = SVector::<f64, 9>::zeros();
            let mut jac = SMatrix::<f64, 9, 9>::zeros();
            for i in 0..3 {
                let mut r = Vector3::zeros();
                for j in 0..3 {
                    r += nodes[j] * dg.lhs[i][j];
                    for d in 0..3 {
                        jac[(3 * i + d, 3 * j + d)] += dg.lhs[i][j];
                    }
                }
                if i == 0 {
                    r -= q_old;
                }
                res.fixed_rows_mut::<3>(3 * i).copy_from(&r);
            }
            for g in 0..3 {
                let mut qg = Vector3::zeros();
                for j in 0..3 {
                    qg += nodes[j] * dg.phi[j][g];
                }
                let (s, js) = self.source_and_jacobian(cell, rho, &qg)?;
                for i in 0..3 {
                    let c = 0.5 * dt * dg.gauss_w[g] * dg.phi[i][g];
                    let mut rr = res.fixed_rows_mut::<3>(3 * i);
                    rr -= s * c;
                    for j in 0..3 {
                        let mut blk = jac.fixed_view_mut::<3, 3>(3 * i, 3 * j);
                        blk -= js * (c * dg.phi[j][g]);
                    }
                }
            }
            let rn = res.amax();
            history.push(rn);
            if !rn.is_finite() || (history.len() > 3 && rn > 1e6 * history[0].max(1e-300)) {
                return Err(Error::Divergence { history });
            }
            let delta = jac.lu().solve(&res).ok_or_else(|| Error::Divergence { history: history.clone() })?;
            for i in 0..3 {
                nodes[i] -= delta.fixed_rows::<3>(3 * i);
            }
            if delta.amax() <= self.opts.newton.tol * scale {
                return Ok(nodes[2]);
            }
        }
        Err(Error::NoConvergence {
            iterations: self.opts.newton.max_iter,
            residual: history.last().copied().unwrap_or(f64::NAN),
        })
    }

    /// Outgoing moments of the M1 ansatz through `side`, with `|q_hat|`
    /// pulled back from the hull of the quadrature when necessary.
    fn outgoing_moments(&self, cell: usize, m: &MomentVector1, side: Side) -> Result<Vector4<f64>> {
        let anchor = &self.anchors[&cell];
        let mut qh = m.q_hat();
        let mut sol = None;
        for _ in 0..60 {
            match m1f_solve(&qh, anchor, &self.quad, &self.opts.m1) {
                Ok(s) => {
                    sol = Some(s);
                    break;
                }
                Err(_) => qh *= 0.98,
            }
        }
        let sol = sol.ok_or_else(|| Error::NotRealizable(format!("no M1 boundary ansatz for |q_hat| = {}", m.q_hat().norm())))?;
        let dw = &self.cells[cell].dw;
        let n = side.normal();
        let mut out = Vector4::zeros();
        for (v, w) in self.outgoing[side.slot()].iter() {
            let f = m.rho * (v.dot(&sol.beta) - sol.log_partition).exp() * peanut_density(dw, v)?;
            let c = w * v.dot(&n) * f;
            out += Vector4::new(c, c * v.x, c * v.y, c * v.z);
        }
        Ok(out)
    }
}

impl MomentModel for FirstOrderSystem {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn ncomp(&self) -> usize {
        4
    }

    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn scaling(&self) -> &ScalingParams {
        &self.scaling
    }

    fn weno(&self) -> &WenoParams {
        &self.opts.weno
    }

    fn flux(&self, cell: usize, u: &[f64], dir: Dir, out: &mut [f64]) -> Result<()> {
        let m = MomentVector1::from_slice(u);
        let p = self.pressure(cell, &m)?;
        out[..4].copy_from_slice(&first_order_flux(&m, &p, self.scaling.eps, dir.index()));
        Ok(())
    }

    fn slope(&self, cell: usize, u: &[f64], dir: Dir, dm: &[f64], dp: &[f64], out: &mut [f64]) -> bool {
        let dx = match dir {
            Dir::X => self.grid.dx,
            Dir::Y => self.grid.dy,
        };
        let w = &self.opts.weno;
        if u[0] > 0.0 {
            if let Ok(j) = self.jacobian4(cell, u, &dir.unit()) {
                let a = Vector4::new(dm[0], dm[1], dm[2], dm[3]);
                let b = Vector4::new(dp[0], dp[1], dp[2], dp[3]);
                if let Some(s) = projector_slope4(&j, &a, &b, dx, w) {
                    out[..4].copy_from_slice(s.as_slice());
                    return true;
                }
            }
        }
        componentwise_slope(dm, dp, dx, w, out);
        false
    }

    fn boundary_flux(&self, cell: usize, u: &[f64], side: Side, out: &mut [f64]) -> Result<()> {
        let m = MomentVector1::from_slice(u);
        if !(m.rho > 0.0) {
            out[..4].fill(0.0);
            return Ok(());
        }
        let outm = self.outgoing_moments(cell, &m, side)?;
        let e = self.emission.get(&(cell, side.slot())).ok_or_else(|| {
            Error::InvalidParameter(format!("cell {cell} does not touch the {side:?} wall"))
        })?;
        let total = outm + e * outm[0];
        out[0] = 0.0;
        for k in 1..4 {
            out[k] = total[k] / self.scaling.eps;
        }
        Ok(())
    }

    fn source_step(&self, cell: usize, u: &mut [f64], dt: f64) -> Result<()> {
        let rho = u[0];
        if !(rho > 0.0) {
            return Ok(());
        }
        let t = &self.cells[cell];
        let s = &self.scaling;
        let q = Vector3::new(u[1], u[2], u[3]);
        let new_q = if t.lam_h * s.eta == 0.0 || t.grad_q == Vector3::zeros() {
            let r = self.dg.scalar_factor(-s.r / (s.eps * s.eps) * dt);
            t.m1 * rho + (q - t.m1 * rho) * r
        } else if self.kind == ModelKind::K1F {
            self.kershaw_newton(cell, rho, &q, dt)?
        } else {
            let old = DVector::from_column_slice(&u[1..4]);
            let mut failure = None;
            let sol = dg_source_step(
                &old,
                dt,
                |x| match self.source_and_jacobian(cell, rho, &Vector3::new(x[0], x[1], x[2])) {
                    Ok((v, j)) => (DVector::from_column_slice(v.as_slice()), DMatrix::from_column_slice(3, 3, j.as_slice())),
                    Err(e) => {
                        failure = Some(e);
                        (DVector::from_element(3, f64::NAN), DMatrix::zeros(3, 3))
                    }
                },
                &self.opts.newton,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            let sol = sol?;
            Vector3::new(sol[0], sol[1], sol[2])
        };
        u[1] = new_q.x;
        u[2] = new_q.y;
        u[3] = new_q.z;
        Ok(())
    }

    fn flux_jacobian(&self, cell: usize, u: &[f64], dir: Dir) -> Result<DMatrix<f64>> {
        let j = self.jacobian4(cell, u, &dir.unit())? / self.scaling.eps;
        Ok(DMatrix::from_column_slice(4, 4, j.as_slice()))
    }

    fn realizable_closure(&self) -> bool {
        true
    }
}

// --------------------------------------------------------------------------
// Linear P_N systems

struct PnCell {
    flux: [DMatrix<f64>; 2],
    chars: [LinearChar; 2],
    source: DMatrix<f64>,
    /// `G^{-1}`, kept for boundary matrices.
    g_inv: DMatrix<f64>,
    anchor: Vec<f64>,
    dw: Sym3,
}

/// `P_N`, `P_N^(F)` and `P_1^(F)` systems. All are linear with cell-wise
/// constant matrices, so fluxes, characteristic bases, sources and the DG
/// propagators are precomputed once per distinct tissue state.
pub struct PnSystem {
    kind: ModelKind,
    grid: GridSpec,
    scaling: ScalingParams,
    opts: SystemOptions,
    basis: PnBasis,
    quad: SphereQuadrature,
    cell_data: Vec<usize>,
    data: Vec<PnCell>,
    boundary: HashMap<(usize, usize), DMatrix<f64>>,
    propagators: RwLock<Option<(u64, Arc<Vec<DMatrix<f64>>>)>>,
    dg: DgTime,
}

impl PnSystem {
    pub fn new(
        kind: ModelKind,
        order: usize,
        anchored: bool,
        grid: GridSpec,
        cells: Vec<CellTissue>,
        scaling: &ScalingParams,
        opts: SystemOptions,
    ) -> Result<Self> {
        let basis = pn_basis(order)?;
        let degree = opts.quad_degree.unwrap_or(DEFAULT_DEGREE.max(2 * order + 3));
        let quad = build_quadrature(degree)?;
        let mut outgoing = Vec::new();
        let mut incoming = Vec::new();
        for side in Side::ALL {
            outgoing.push(build_half_range(&side.normal(), opts.half_range_degree.max(degree))?);
            incoming.push(build_half_range(&(-side.normal()), opts.half_range_degree.max(degree))?);
        }
        let mut index: HashMap<[u64; 10], usize> = HashMap::new();
        let mut cell_data = Vec::with_capacity(cells.len());
        let mut data = Vec::new();
        for t in &cells {
            let id = match index.get(&t.key()) {
                Some(&id) => id,
                None => {
                    let id = data.len();
                    data.push(PnCell::new(&basis, &quad, t, anchored, scaling)?);
                    index.insert(t.key(), id);
                    id
                }
            };
            cell_data.push(id);
        }
        let mut boundary = HashMap::new();
        for c in 0..cells.len() {
            if !is_boundary(&grid, c) {
                continue;
            }
            let d = cell_data[c];
            for side in Side::ALL {
                if boundary.contains_key(&(d, side.slot())) {
                    continue;
                }
                let m = data[d].boundary_matrix(&basis, &outgoing[side.slot()], &incoming[side.slot()], &side.normal(), scaling.eps)?;
                boundary.insert((d, side.slot()), m);
            }
        }
        Ok(PnSystem {
            kind,
            grid,
            scaling: *scaling,
            opts,
            basis,
            quad,
            cell_data,
            data,
            boundary,
            propagators: RwLock::new(None),
            dg: DgTime::new(),
        })
    }

    pub fn basis(&self) -> &PnBasis {
        &self.basis
    }

    pub fn quadrature(&self) -> &SphereQuadrature {
        &self.quad
    }

    /// Anchor `F` of a cell on the velocity quadrature.
    pub fn anchor(&self, cell: usize) -> &[f64] {
        &self.data[self.cell_data[cell]].anchor
    }

    /// Moments `<a Q>` of the fibre distribution scaled by `rho`.
    pub fn equilibrium(&self, cell: usize, rho: f64) -> Result<DVector<f64>> {
        let dw = self.data[self.cell_data[cell]].dw;
        let mut u = DVector::zeros(self.basis.len());
        let mut a = vec![0.0; self.basis.len()];
        for (v, w) in self.quad.iter() {
            self.basis.eval_into(v, &mut a);
            let q = peanut_density(&dw, v)? * w * rho;
            for (x, ak) in u.iter_mut().zip(&a) {
                *x += q * ak;
            }
        }
        Ok(u)
    }

    fn propagators(&self, dt: f64) -> Result<Arc<Vec<DMatrix<f64>>>> {
        if let Some((bits, p)) = self.propagators.read().expect("propagator lock").as_ref() {
            if *bits == dt.to_bits() {
                return Ok(p.clone());
            }
        }
        let mats = self
            .data
            .iter()
            .map(|d| {
                let mut p = self.dg.linear_propagator(&d.source, dt)?;
                // mass is untouched by the source
                for c in 0..p.ncols() {
                    p[(0, c)] = if c == 0 { 1.0 } else { 0.0 };
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        let arc = Arc::new(mats);
        *self.propagators.write().expect("propagator lock") = Some((dt.to_bits(), arc.clone()));
        Ok(arc)
    }
}

impl PnCell {
    fn new(basis: &PnBasis, quad: &SphereQuadrature, t: &CellTissue, anchored: bool, s: &ScalingParams) -> Result<Self> {
        let q_nodes = peanut_nodes(&t.dw, quad)?;
        let anchor = if anchored { q_nodes.clone() } else { vec![1.0 / (4.0 * PI); quad.len()] };
        let g = weighted_gram(basis, quad, &anchor);
        let g_inv = g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::FlatSupport("Gram matrix of the P_N ansatz is singular".into()))?
            .inverse();
        let k = basis.len();
        let mut b = Vec::with_capacity(3);
        for d in 0..3 {
            let wd: Vec<f64> = quad.nodes().iter().zip(&anchor).map(|(v, f)| v[d] * f).collect();
            b.push(weighted_gram(basis, quad, &wd));
        }
        let mut chars = Vec::with_capacity(2);
        for bd in b.iter().take(2) {
            let cb = symmetrizable_basis(bd, &g)
                .ok_or_else(|| Error::FlatSupport("Gram matrix of the P_N ansatz is not positive definite".into()))?;
            chars.push(LinearChar::new(cb.right, cb.left, cb.clusters));
        }
        let flux = [&b[0] * &g_inv / s.eps, &b[1] * &g_inv / s.eps];

        // <a Q>
        let mut h = DVector::<f64>::zeros(k);
        let mut a = vec![0.0; k];
        for ((v, w), qv) in quad.iter().zip(&q_nodes) {
            basis.eval_into(v, &mut a);
            for (x, ak) in h.iter_mut().zip(&a) {
                *x += w * qv * ak;
            }
        }
        let c1 = s.r / (s.eps * s.eps);
        let c2 = s.eta / s.eps * t.lam_h;
        let mut src = DMatrix::zeros(k, k);
        for r in 0..k {
            src[(r, 0)] += c1 * h[r];
            src[(r, r)] -= c1;
        }
        let slots = basis.first_order_slots();
        for d in 0..3 {
            let gd = t.grad_q[d];
            if gd == 0.0 || c2 == 0.0 {
                continue;
            }
            src += &b[d] * &g_inv * (c2 * gd);
            for r in 0..k {
                src[(r, slots[d])] -= c2 * gd * h[r];
            }
        }
        for c in 0..k {
            src[(0, c)] = 0.0;
        }
        Ok(PnCell { flux, chars: [chars.remove(0), chars.remove(0)], source: src, g_inv, anchor, dw: t.dw })
    }

    fn boundary_matrix(
        &self,
        basis: &PnBasis,
        outgoing: &SphereQuadrature,
        incoming: &SphereQuadrature,
        n: &Vector3<f64>,
        eps: f64,
    ) -> Result<DMatrix<f64>> {
        let k = basis.len();
        let mut weight = Vec::with_capacity(outgoing.len());
        for v in outgoing.nodes() {
            let f = if self.anchor_is_uniform() { 1.0 / (4.0 * PI) } else { peanut_density(&self.dw, v)? };
            weight.push(v.dot(n) * f);
        }
        let out = weighted_gram(basis, outgoing, &weight);
        let mut zeta = 0.0;
        let mut e = DVector::zeros(k);
        let mut a = vec![0.0; k];
        for (v, w) in incoming.iter() {
            let q = peanut_density(&self.dw, v)?;
            let vn = v.dot(n);
            zeta -= w * vn * q;
            basis.eval_into(v, &mut a);
            for (x, ak) in e.iter_mut().zip(&a) {
                *x += w * vn * q * ak;
            }
        }
        if !(zeta > 0.0) {
            return Err(Error::InvalidParameter("anchor vanishes on the incoming hemisphere (zeta = 0)".into()));
        }
        e /= zeta;
        e[0] = -1.0;
        let row0 = out.row(0).into_owned();
        let mut m = (&out + &e * &row0) * &self.g_inv / eps;
        for c in 0..k {
            m[(0, c)] = 0.0;
        }
        Ok(m)
    }

    fn anchor_is_uniform(&self) -> bool {
        let first = self.anchor[0];
        self.anchor.iter().all(|&x| x == first) && (first - 1.0 / (4.0 * PI)).abs() < 1e-15
    }
}

impl MomentModel for PnSystem {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn ncomp(&self) -> usize {
        self.basis.len()
    }

    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn scaling(&self) -> &ScalingParams {
        &self.scaling
    }

    fn weno(&self) -> &WenoParams {
        &self.opts.weno
    }

    fn flux(&self, cell: usize, u: &[f64], dir: Dir, out: &mut [f64]) -> Result<()> {
        let m = &self.data[self.cell_data[cell]].flux[dir.index()];
        let k = u.len();
        for r in 0..k {
            let mut acc = 0.0;
            for c in 0..k {
                acc += m[(r, c)] * u[c];
            }
            out[r] = acc;
        }
        Ok(())
    }

    fn slope(&self, cell: usize, _u: &[f64], dir: Dir, dm: &[f64], dp: &[f64], out: &mut [f64]) -> bool {
        let dx = match dir {
            Dir::X => self.grid.dx,
            Dir::Y => self.grid.dy,
        };
        let mut scratch = vec![0.0; 3 * dm.len()];
        self.data[self.cell_data[cell]].chars[dir.index()].slope(dm, dp, dx, &self.opts.weno, out, &mut scratch);
        true
    }

    fn boundary_flux(&self, cell: usize, u: &[f64], side: Side, out: &mut [f64]) -> Result<()> {
        let m = self
            .boundary
            .get(&(self.cell_data[cell], side.slot()))
            .ok_or_else(|| Error::InvalidParameter(format!("cell {cell} does not touch the {side:?} wall")))?;
        let k = u.len();
        for r in 0..k {
            let mut acc = 0.0;
            for c in 0..k {
                acc += m[(r, c)] * u[c];
            }
            out[r] = acc;
        }
        Ok(())
    }

    fn prepare_source(&self, dt: f64) -> Result<()> {
        self.propagators(dt).map(|_| ())
    }

    fn source_step(&self, cell: usize, u: &mut [f64], dt: f64) -> Result<()> {
        let props = self.propagators(dt)?;
        let p = &props[self.cell_data[cell]];
        let k = u.len();
        let old: Vec<f64> = u.to_vec();
        for r in 0..k {
            let mut acc = 0.0;
            for c in 0..k {
                acc += p[(r, c)] * old[c];
            }
            u[r] = acc;
        }
        u[0] = old[0];
        Ok(())
    }

    fn flux_jacobian(&self, cell: usize, _u: &[f64], dir: Dir) -> Result<DMatrix<f64>> {
        Ok(self.data[self.cell_data[cell]].flux[dir.index()].clone())
    }

    fn isotropic_state(&self, rho: f64) -> Vec<f64> {
        let mut u = vec![0.0; self.basis.len()];
        let mut a = vec![0.0; self.basis.len()];
        for (v, w) in self.quad.iter() {
            self.basis.eval_into(v, &mut a);
            for (x, ak) in u.iter_mut().zip(&a) {
                *x += w * ak * rho / (4.0 * PI);
            }
        }
        u[0] = rho;
        u
    }
}
