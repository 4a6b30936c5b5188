//! Closures of the moment hierarchy.
//!
//! First-order closures map `(rho, q)` to a pressure tensor; the higher-order
//! `P_N` / `P_N^(F)` closures reconstruct a polynomial-times-anchor ansatz from
//! a vector of monomial moments.

mod first_order;
mod hyperbolicity;
mod pn;

pub use first_order::{
    check_realizability, check_unit_trace, kershaw_closure, kershaw_pressure_dq, m1f_closure, m1f_solve, p1f_closure, M1Options,
    M1Solution, RealizabilityMargins,
};
pub(crate) use first_order::kershaw_closure_prechecked;
pub use hyperbolicity::{kershaw_flux_jacobian, kershaw_spectrum, AnalyticSpectrum, SpectrumReport};
pub use pn::{gram_matrix, pn_basis, pnf_reconstruct, weighted_gram, PnAnsatz, PnBasis, MAX_PN_ORDER};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{outer, Sym3};
use crate::quadrature::SphereQuadrature;

/// Density and momentum of a velocity distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentVector1 {
    pub rho: f64,
    pub q: Vector3<f64>,
}

impl MomentVector1 {
    pub fn new(rho: f64, q: Vector3<f64>) -> Self {
        MomentVector1 { rho, q }
    }

    /// `q / rho`, or zero for an empty state.
    pub fn q_hat(&self) -> Vector3<f64> {
        if self.rho > 0.0 {
            self.q / self.rho
        } else {
            Vector3::zeros()
        }
    }

    pub fn from_slice(u: &[f64]) -> Self {
        MomentVector1 { rho: u[0], q: Vector3::new(u[1], u[2], u[3]) }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.rho, self.q.x, self.q.y, self.q.z]
    }

    pub fn is_realizable(&self) -> bool {
        self.rho >= 0.0 && self.q.norm() <= self.rho
    }
}

/// Closed pressure tensor plus the ansatz multipliers when the closure has them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureResult {
    pub p: Sym3,
    /// `(a, b)` of the ansatz `f = a g(eps v . b) F`.
    pub multipliers: Option<(f64, Vector3<f64>)>,
}

/// Moments of the anchor distribution `F`: `<v F>`, `<v v F>`, `<v v v F>`.
/// `m3[k]` holds `<v v^T v_k F>`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorMoments {
    pub m1: Vector3<f64>,
    pub m2: Sym3,
    pub m3: [Sym3; 3],
}

impl AnchorMoments {
    /// Peanut anchor: first and third moments vanish by parity.
    pub fn symmetric(m2: Sym3) -> Self {
        AnchorMoments { m1: Vector3::zeros(), m2, m3: [Sym3::zeros(); 3] }
    }

    pub fn from_nodes(values: &[f64], quad: &SphereQuadrature) -> Result<Self> {
        if values.len() != quad.len() {
            return Err(Error::InvalidParameter("anchor must have one value per quadrature node".into()));
        }
        let mut m1 = Vector3::zeros();
        let mut m2 = Sym3::zeros();
        let mut m3 = [Sym3::zeros(); 3];
        for ((v, w), &f) in quad.iter().zip(values) {
            if !f.is_finite() {
                return Err(Error::InvalidParameter("anchor value is not finite".into()));
            }
            let wf = w * f;
            m1 += v * wf;
            let vv = outer(v, v) * wf;
            m2 += vv;
            for k in 0..3 {
                m3[k] += vv * v[k];
            }
        }
        Ok(AnchorMoments { m1, m2, m3 })
    }
}

/// Selectable moment model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Diffusion,
    P1F,
    M1F,
    K1F,
    /// Standard `P_N`: polynomial ansatz without the fibre anchor.
    PN(usize),
    /// `P_N^(F)`: polynomial ansatz times the fibre distribution.
    PNF(usize),
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        let model = match t.as_str() {
            "DIFFUSION" | "D" => ModelKind::Diffusion,
            "P1F" => ModelKind::P1F,
            "M1F" => ModelKind::M1F,
            "K1F" => ModelKind::K1F,
            _ => {
                let order = |digits: &str| -> Result<usize> {
                    digits
                        .parse::<usize>()
                        .ok()
                        .filter(|n| (1..=MAX_PN_ORDER).contains(n))
                        .ok_or_else(|| Error::InvalidParameter(format!("bad moment order in model '{s}'")))
                };
                if let Some(rest) = t.strip_prefix('P') {
                    if let Some(digits) = rest.strip_suffix('F') {
                        ModelKind::PNF(order(digits)?)
                    } else {
                        ModelKind::PN(order(rest)?)
                    }
                } else {
                    return Err(Error::InvalidParameter(format!(
                        "unknown model '{s}' (expected diffusion, P1F, M1F, K1F, PN or PNF with N in 1..=5)"
                    )));
                }
            }
        };
        Ok(model)
    }

    pub fn name(&self) -> String {
        match self {
            ModelKind::Diffusion => "diffusion".into(),
            ModelKind::P1F => "P1F".into(),
            ModelKind::M1F => "M1F".into(),
            ModelKind::K1F => "K1F".into(),
            ModelKind::PN(n) => format!("P{n}"),
            ModelKind::PNF(n) => format!("P{n}F"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_round_trip() {
        for m in [
            ModelKind::Diffusion,
            ModelKind::P1F,
            ModelKind::M1F,
            ModelKind::K1F,
            ModelKind::PN(3),
            ModelKind::PNF(5),
        ] {
            assert_eq!(ModelKind::parse(&m.name()).unwrap(), m);
        }
        assert!(ModelKind::parse("P7").is_err());
        assert!(ModelKind::parse("Q1").is_err());
    }
}
