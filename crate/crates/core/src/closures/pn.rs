use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::quadrature::SphereQuadrature;

pub const MAX_PN_ORDER: usize = 5;

/// Monomial basis `v^i` of total degree `<= N`.
///
/// Ordering: by total degree, then `i_x` descending, then `i_y` descending, so
/// `N = 1` gives `1, v_x, v_y, v_z`. On the unit sphere `v_z^2 = 1 - v_x^2 - v_y^2`
/// makes the full list linearly dependent for `N >= 2`; the reduced list keeps
/// only exponents with `i_z <= 1`, which spans the same space with
/// `(N + 1)^2` independent functions. Moment systems use the reduced list.
#[derive(Debug, Clone, PartialEq)]
pub struct PnBasis {
    order: usize,
    full: Vec<[u32; 3]>,
    reduced: Vec<[u32; 3]>,
}

impl PnBasis {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of monomials of total degree `<= N`.
    pub fn k(&self) -> usize {
        self.full.len()
    }

    pub fn full(&self) -> &[[u32; 3]] {
        &self.full
    }

    /// Independent exponents used as unknowns.
    pub fn exponents(&self) -> &[[u32; 3]] {
        &self.reduced
    }

    /// Number of unknowns, `(N + 1)^2`.
    pub fn len(&self) -> usize {
        self.reduced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reduced.is_empty()
    }

    /// Position of `v_x, v_y, v_z` in the reduced list.
    pub fn first_order_slots(&self) -> [usize; 3] {
        [1, 2, 3]
    }

    /// Evaluate the reduced basis at `v` into `out`.
    pub fn eval_into(&self, v: &Vector3<f64>, out: &mut [f64]) {
        let mut pw = [[1.0; MAX_PN_ORDER + 1]; 3];
        for d in 0..3 {
            for p in 1..=self.order {
                pw[d][p] = pw[d][p - 1] * v[d];
            }
        }
        for (o, e) in out.iter_mut().zip(&self.reduced) {
            *o = pw[0][e[0] as usize] * pw[1][e[1] as usize] * pw[2][e[2] as usize];
        }
    }

    pub fn eval(&self, v: &Vector3<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        self.eval_into(v, out.as_mut_slice());
        out
    }

    /// Basis values on every node, one column per node.
    pub fn tabulate(&self, quad: &SphereQuadrature) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.len(), quad.len());
        let mut buf = vec![0.0; self.len()];
        for (c, v) in quad.nodes().iter().enumerate() {
            self.eval_into(v, &mut buf);
            for (r, x) in buf.iter().enumerate() {
                t[(r, c)] = *x;
            }
        }
        t
    }
}

fn exponents_by_degree(order: usize) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for deg in 0..=order as u32 {
        for ix in (0..=deg).rev() {
            for iy in (0..=deg - ix).rev() {
                out.push([ix, iy, deg - ix - iy]);
            }
        }
    }
    out
}

pub fn pn_basis(order: usize) -> Result<PnBasis> {
    if !(1..=MAX_PN_ORDER).contains(&order) {
        return Err(Error::UnsupportedDegree { degree: order, min: 1, max: MAX_PN_ORDER });
    }
    let full = exponents_by_degree(order);
    let reduced = full.iter().copied().filter(|e| e[2] <= 1).collect();
    Ok(PnBasis { order, full, reduced })
}

/// Weighted moment matrix `sum_k w_k g(v_k) a(v_k) a(v_k)^T`.
pub fn weighted_gram(basis: &PnBasis, quad: &SphereQuadrature, weight: &[f64]) -> DMatrix<f64> {
    let n = basis.len();
    let mut g = DMatrix::zeros(n, n);
    let mut a = vec![0.0; n];
    for ((v, w), f) in quad.iter().zip(weight) {
        let wf = w * f;
        if wf == 0.0 {
            continue;
        }
        basis.eval_into(v, &mut a);
        for c in 0..n {
            let s = wf * a[c];
            for r in c..n {
                g[(r, c)] += s * a[r];
            }
        }
    }
    for c in 0..n {
        for r in c + 1..n {
            g[(c, r)] = g[(r, c)];
        }
    }
    g
}

/// Gram matrix `<a a^T F>` of the reduced basis.
pub fn gram_matrix(basis: &PnBasis, quad: &SphereQuadrature, anchor: &[f64]) -> Result<DMatrix<f64>> {
    if anchor.len() != quad.len() {
        return Err(Error::InvalidParameter("anchor must have one value per quadrature node".into()));
    }
    if anchor.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidParameter("anchor values must be finite and nonnegative".into()));
    }
    Ok(weighted_gram(basis, quad, anchor))
}

/// `f^A(v) = (lambda . a(v)) F(v)`.
#[derive(Debug, Clone)]
pub struct PnAnsatz {
    pub basis: PnBasis,
    pub multipliers: DVector<f64>,
}

impl PnAnsatz {
    /// Polynomial factor `lambda . a(v)`.
    pub fn polynomial(&self, v: &Vector3<f64>) -> f64 {
        self.basis.eval(v).dot(&self.multipliers)
    }

    pub fn eval(&self, v: &Vector3<f64>, anchor_value: f64) -> f64 {
        self.polynomial(v) * anchor_value
    }

    /// Ansatz values on the quadrature nodes.
    pub fn on_nodes(&self, quad: &SphereQuadrature, anchor: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.basis.len()];
        quad.nodes()
            .iter()
            .zip(anchor)
            .map(|(v, f)| {
                self.basis.eval_into(v, &mut a);
                a.iter().zip(self.multipliers.iter()).map(|(x, l)| x * l).sum::<f64>() * f
            })
            .collect()
    }
}

/// Solve `G lambda = u` for the multipliers of the anchored polynomial ansatz.
pub fn pnf_reconstruct(
    u: &DVector<f64>,
    anchor: &[f64],
    basis: &PnBasis,
    quad: &SphereQuadrature,
) -> Result<PnAnsatz> {
    if u.len() != basis.len() {
        return Err(Error::InvalidParameter(format!(
            "moment vector has {} entries, basis has {}",
            u.len(),
            basis.len()
        )));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("moment vector is not finite".into()));
    }
    let g = gram_matrix(basis, quad, anchor)?;
    let chol = g.cholesky().ok_or_else(|| {
        Error::FlatSupport("Gram matrix <a a^T F> is singular; the anchor support is too thin".into())
    })?;
    Ok(PnAnsatz { basis: basis.clone(), multipliers: chol.solve(u) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closures::{p1f_closure, AnchorMoments, MomentVector1};
    use crate::linalg::Sym3;
    use crate::quadrature::build_quadrature;
    use crate::tissue::{peanut_on_nodes, peanut_pressure_tensor};
    use std::f64::consts::PI;

    #[test]
    fn basis_sizes_and_order() {
        let b1 = pn_basis(1).unwrap();
        assert_eq!(b1.k(), 4);
        assert_eq!(b1.exponents(), &[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let b2 = pn_basis(2).unwrap();
        assert_eq!(b2.k(), 10);
        assert_eq!(b2.len(), 9);
        for n in 1..=5 {
            let b = pn_basis(n).unwrap();
            assert_eq!(b.k(), (n + 1) * (n + 2) * (n + 3) / 6);
            assert_eq!(b.len(), (n + 1) * (n + 1));
        }
        assert!(pn_basis(0).is_err());
        assert!(pn_basis(6).is_err());
    }

    #[test]
    fn reduced_gram_is_nonsingular() {
        for n in 1..=5 {
            let b = pn_basis(n).unwrap();
            let q = build_quadrature(2 * n + 3).unwrap();
            let f = vec![1.0 / (4.0 * PI); q.len()];
            let g = gram_matrix(&b, &q, &f).unwrap();
            assert!(g.cholesky().is_some(), "N = {n}");
        }
    }

    #[test]
    fn isotropic_gram_first_order() {
        let b = pn_basis(1).unwrap();
        let q = build_quadrature(10).unwrap();
        let f = vec![1.0 / (4.0 * PI); q.len()];
        let g = gram_matrix(&b, &q, &f).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]));
        assert!((g - want).abs().max() < 1e-14);
        let u = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let ans = pnf_reconstruct(&u, &f, &b, &q).unwrap();
        for v in q.nodes() {
            assert!((ans.eval(v, 1.0 / (4.0 * PI)) - 1.0 / (4.0 * PI)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_moments_give_zero_ansatz() {
        let b = pn_basis(3).unwrap();
        let q = build_quadrature(10).unwrap();
        let f = vec![1.0 / (4.0 * PI); q.len()];
        let ans = pnf_reconstruct(&DVector::zeros(b.len()), &f, &b, &q).unwrap();
        assert!(ans.on_nodes(&q, &f).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn reconstruction_reproduces_moments() {
        let dw = Sym3::new(2.0, 0.3, 0.1, 0.3, 1.0, 0.0, 0.1, 0.0, 0.5);
        let b = pn_basis(3).unwrap();
        let q = build_quadrature(10).unwrap();
        let f = peanut_on_nodes(&dw, &q).unwrap();
        let u = DVector::from_fn(b.len(), |k, _| if k == 0 { 1.0 } else { 0.05 * (k as f64).sin() });
        let ans = pnf_reconstruct(&u, &f, &b, &q).unwrap();
        let vals = ans.on_nodes(&q, &f);
        for k in 0..b.len() {
            let m = q
                .iter()
                .zip(&vals)
                .map(|((v, w), fa)| w * fa * b.eval(v)[k])
                .sum::<f64>();
            assert!((m - u[k]).abs() < 1e-10 * u.norm());
        }
    }

    #[test]
    fn first_order_peanut_matches_p1f() {
        let dw = Sym3::new(1.5, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 0.7);
        let b = pn_basis(1).unwrap();
        let q = build_quadrature(10).unwrap();
        let f = peanut_on_nodes(&dw, &q).unwrap();
        let m = MomentVector1::new(1.2, Vector3::new(0.3, -0.2, 0.1));
        let u = DVector::from_vec(m.to_array().to_vec());
        let ans = pnf_reconstruct(&u, &f, &b, &q).unwrap();
        let vals = ans.on_nodes(&q, &f);
        let mut p = Sym3::zeros();
        for ((v, w), fa) in q.iter().zip(&vals) {
            p += v * v.transpose() * (w * fa);
        }
        let anchor = AnchorMoments::symmetric(peanut_pressure_tensor(&dw).unwrap());
        let p1 = p1f_closure(&m, &anchor, 0.7).unwrap().p;
        assert!((p - p1).abs().max() < 1e-12);
    }
}
