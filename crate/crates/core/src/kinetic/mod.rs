//! Scaled moment system: parameter bookkeeping, pointwise fluxes and
//! relaxation sources, and the per-cell systems advanced by the solver.
//!
//! With `St = eps` the scaled kinetic equation reads
//! `d_t f + (1/eps) v . grad f = (R/eps^2) L1 f + (eta/eps) L2 f` where
//! `L1 f = Q rho_f - f` and `L2 f = lamH gradQ . (v f - Q q_f)`.

mod system;

pub use system::{build_system, build_system_from_cells, tissue_cells, CellTissue, Dir, FirstOrderSystem, MomentModel, PnSystem, Side, SystemOptions};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::closures::{pnf_reconstruct, MomentVector1, PnBasis};
use crate::error::{Error, Result};
use crate::linalg::Sym3;
use crate::quadrature::SphereQuadrature;

/// Dimensional inputs. Times in s, lengths in mm, rates in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Time scale `t0 = T`.
    pub t0: f64,
    /// Cell speed.
    pub c: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub kplus: f64,
    pub kminus: f64,
    /// Length scale.
    pub x0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    /// Strouhal number `x0 / (t0 c)`, the parabolic scaling parameter.
    pub eps: f64,
    /// Knudsen number `1 / (t0 lambda0)`.
    pub kn: f64,
    /// `eps^2 / Kn`.
    pub r: f64,
    /// `lambda1 / lambda0`.
    pub eta: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub kplus: f64,
    pub kminus: f64,
    pub c: f64,
    pub x0: f64,
    pub t0: f64,
}

pub fn compute_scaling(p: &PhysicalParams) -> Result<ScalingParams> {
    let named = [
        ("T", p.t0),
        ("c", p.c),
        ("lambda0", p.lambda0),
        ("lambda1", p.lambda1),
        ("k+", p.kplus),
        ("k-", p.kminus),
        ("x0", p.x0),
    ];
    for (name, v) in named {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
        }
    }
    let eps = p.x0 / (p.t0 * p.c);
    let kn = 1.0 / (p.t0 * p.lambda0);
    Ok(ScalingParams {
        eps,
        kn,
        r: eps * eps / kn,
        eta: p.lambda1 / p.lambda0,
        lambda0: p.lambda0,
        lambda1: p.lambda1,
        kplus: p.kplus,
        kminus: p.kminus,
        c: p.c,
        x0: p.x0,
        t0: p.t0,
    })
}

impl ScalingParams {
    /// Fiber-strand parameters: `c = X/(eps T)`, `lambda0 = 1/(eps^2 T)`,
    /// `lambda1 = k+ = k- = lambda0`, so that `St = eps` and `R = eta = 1`.
    pub fn fiber_strand(eps: f64, extent: f64, t_end: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        let lambda0 = 1.0 / (eps * eps * t_end);
        compute_scaling(&PhysicalParams {
            t0: t_end,
            c: extent / (eps * t_end),
            lambda0,
            lambda1: lambda0,
            kplus: lambda0,
            kminus: lambda0,
            x0: extent,
        })
    }

    pub fn physical(&self) -> PhysicalParams {
        PhysicalParams {
            t0: self.t0,
            c: self.c,
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            kplus: self.kplus,
            kminus: self.kminus,
            x0: self.x0,
        }
    }
}

/// `(q_d, P e_d) / eps`.
pub fn first_order_flux(m: &MomentVector1, p: &Sym3, eps: f64, dir: usize) -> [f64; 4] {
    let col = p.column(dir);
    [m.q[dir] / eps, col[0] / eps, col[1] / eps, col[2] / eps]
}

/// `(0, -(R/eps^2)(q - rho m1) + (eta/eps) lamH (P - m1 q^T) gradQ)`.
pub fn first_order_source(m: &MomentVector1, p: &Sym3, cell: &CellTissue, s: &ScalingParams) -> [f64; 4] {
    let relax = (m.q - cell.m1 * m.rho) * (-s.r / (s.eps * s.eps));
    let hapto = (p * cell.grad_q - cell.m1 * m.q.dot(&cell.grad_q)) * (s.eta / s.eps * cell.lam_h);
    let q = relax + hapto;
    [0.0, q.x, q.y, q.z]
}

/// Fluxes and source of the `P_N` system at one state, by quadrature.
#[derive(Debug, Clone)]
pub struct PnEvaluation {
    pub flux: [DVector<f64>; 2],
    pub source: DVector<f64>,
}

/// Pointwise `P_N^(F)` evaluation. `anchor` is the ansatz weight `F` and
/// `q_nodes` the fibre distribution `Q`, both tabulated on `quad`.
pub fn pn_flux_and_source(
    u: &DVector<f64>,
    cell: &CellTissue,
    s: &ScalingParams,
    basis: &PnBasis,
    quad: &SphereQuadrature,
    anchor: &[f64],
    q_nodes: &[f64],
) -> Result<PnEvaluation> {
    let ansatz = pnf_reconstruct(u, anchor, basis, quad)?;
    let f = ansatz.on_nodes(quad, anchor);
    let k = basis.len();
    let mut rho_f = 0.0;
    let mut q_f = Vector3::zeros();
    for ((v, w), fv) in quad.iter().zip(&f) {
        rho_f += w * fv;
        q_f += v * (w * fv);
    }
    let mut flux = [DVector::zeros(k), DVector::zeros(k)];
    let mut source = DVector::zeros(k);
    let mut a = vec![0.0; k];
    let c1 = s.r / (s.eps * s.eps);
    let c2 = s.eta / s.eps * cell.lam_h;
    let qg = q_f.dot(&cell.grad_q);
    for (((v, w), fv), qv) in quad.iter().zip(&f).zip(q_nodes) {
        basis.eval_into(v, &mut a);
        let l1 = qv * rho_f - fv;
        let l2 = v.dot(&cell.grad_q) * fv - qv * qg;
        let src = w * (c1 * l1 + c2 * l2);
        for (r, ar) in a.iter().enumerate() {
            flux[0][r] += w * v.x * ar * fv;
            flux[1][r] += w * v.y * ar * fv;
            source[r] += src * ar;
        }
    }
    flux[0] /= s.eps;
    flux[1] /= s.eps;
    Ok(PnEvaluation { flux, source })
}

/// Diffusion tensor `D = D_F / R` and haptotactic drift `eta D lamH gradQ`.
/// The `- div D` part of the drift is carried by the divergence form of the
/// diffusion operator.
pub fn diffusion_coefficients(cell: &CellTissue, s: &ScalingParams) -> (Sym3, Vector3<f64>) {
    let d = cell.df / s.r;
    let drift = d * cell.grad_q * (s.eta * cell.lam_h);
    (d, drift)
}
