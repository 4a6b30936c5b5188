use nalgebra::{Matrix3, Vector3};

use super::{AnchorMoments, ClosureResult, MomentVector1};
use crate::error::{Error, Result};
use crate::linalg::{outer, sym3_min_eigenvalue, Sym3};
use crate::quadrature::SphereQuadrature;

/// Linear closure `f = (a + eps v . b) F`.
pub fn p1f_closure(m: &MomentVector1, anchor: &AnchorMoments, eps: f64) -> Result<ClosureResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let a_mat = anchor.m2 - outer(&anchor.m1, &anchor.m1);
    let chol = a_mat.cholesky().ok_or_else(|| {
        Error::FlatSupport(
            "<v v F> - <v F><v F>^T is singular; the anchor support lies in a plane".into(),
        )
    })?;
    // eps * b
    let eb = chol.solve(&(m.q - anchor.m1 * m.rho));
    let a = m.rho - eb.dot(&anchor.m1);
    let mut p = anchor.m2 * a;
    for k in 0..3 {
        p += anchor.m3[k] * eb[k];
    }
    Ok(ClosureResult { p, multipliers: Some((a, eb / eps)) })
}

/// `P = rho [(1 - |q_hat|^2) D_F + q_hat q_hat^T]`.
pub fn kershaw_closure(m: &MomentVector1, df: &Sym3) -> Result<ClosureResult> {
    check_unit_trace(df)?;
    kershaw_closure_prechecked(m, df)
}

/// As [`kershaw_closure`] for a `df` already known to be a unit-trace PSD tensor.
pub(crate) fn kershaw_closure_prechecked(m: &MomentVector1, df: &Sym3) -> Result<ClosureResult> {
    if m.rho < 0.0 {
        return Err(Error::NotRealizable(format!("negative density {}", m.rho)));
    }
    if m.rho == 0.0 {
        if m.q.norm() > 0.0 {
            return Err(Error::NotRealizable("nonzero momentum at zero density".into()));
        }
        return Ok(ClosureResult { p: Sym3::zeros(), multipliers: None });
    }
    let qh = m.q / m.rho;
    let n2 = qh.norm_squared();
    if n2.sqrt() > 1.0 + 1e-12 {
        return Err(Error::NotRealizable(format!("|q_hat| = {} > 1", n2.sqrt())));
    }
    let p = (df * (1.0 - n2) + outer(&qh, &qh)) * m.rho;
    Ok(ClosureResult { p, multipliers: None })
}

/// Derivative of `P n` with respect to `q` for the Kershaw closure:
/// `-2 (D_F n) q_hat^T + (q_hat . n) I + q_hat n^T`.
pub fn kershaw_pressure_dq(m: &MomentVector1, df: &Sym3, n: &Vector3<f64>) -> Matrix3<f64> {
    let qh = m.q_hat();
    -outer(&(df * n), &qh) * 2.0 + Matrix3::identity() * qh.dot(n) + outer(&qh, n)
}

/// Check that `df` has unit trace and is positive semidefinite.
pub fn check_unit_trace(df: &Sym3) -> Result<()> {
    let tr = df.trace();
    if (tr - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidTensor(format!("D_F must have unit trace, got {tr}")));
    }
    if sym3_min_eigenvalue(df) < -1e-12 {
        return Err(Error::InvalidTensor("D_F must be positive semidefinite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct M1Options {
    /// Moment residual tolerance relative to rho.
    pub tol: f64,
    pub max_iter: usize,
    pub max_backtrack: usize,
}

impl Default for M1Options {
    fn default() -> Self {
        M1Options { tol: 1e-10, max_iter: 200, max_backtrack: 40 }
    }
}

/// Solution of the normalized entropy dual.
#[derive(Debug, Clone, PartialEq)]
pub struct M1Solution {
    /// `eps * b`.
    pub beta: Vector3<f64>,
    /// `log <exp(v . beta) F>`.
    pub log_partition: f64,
    /// `<v v exp(v . beta) F> / <exp(v . beta) F>`.
    pub p_hat: Sym3,
    pub residual: f64,
    pub iterations: usize,
}

struct DualEval {
    value: f64,
    log_z: f64,
    mean: Vector3<f64>,
    second: Sym3,
}

// Log-sum-exp stabilised moments of exp(v . beta) F on the quadrature.
fn dual_eval(beta: &Vector3<f64>, q_hat: &Vector3<f64>, anchor: &[f64], quad: &SphereQuadrature) -> DualEval {
    let shift = quad
        .nodes()
        .iter()
        .zip(anchor)
        .filter(|(_, &f)| f > 0.0)
        .map(|(v, _)| v.dot(beta))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut mean = Vector3::zeros();
    let mut second = Sym3::zeros();
    for ((v, w), &f) in quad.iter().zip(anchor) {
        if f <= 0.0 {
            continue;
        }
        let e = w * f * (v.dot(beta) - shift).exp();
        z += e;
        mean += v * e;
        second += outer(v, v) * e;
    }
    mean /= z;
    second /= z;
    let log_z = z.ln() + shift;
    DualEval { value: log_z - beta.dot(q_hat), log_z, mean, second }
}

/// Newton with backtracking on the strictly convex dual
/// `h(beta) = log <exp(v . beta) F> - beta . q_hat`.
pub fn m1f_solve(
    q_hat: &Vector3<f64>,
    anchor: &[f64],
    quad: &SphereQuadrature,
    opts: &M1Options,
) -> Result<M1Solution> {
    if anchor.len() != quad.len() {
        return Err(Error::InvalidParameter("anchor must have one value per quadrature node".into()));
    }
    if anchor.iter().any(|f| !f.is_finite() || *f < 0.0) || anchor.iter().all(|&f| f == 0.0) {
        return Err(Error::InvalidParameter("anchor must be nonnegative, finite and not identically zero".into()));
    }
    if q_hat.norm() >= 1.0 {
        return Err(Error::NotRealizable(format!(
            "M1 closure needs |q_hat| < 1, got {}",
            q_hat.norm()
        )));
    }
    let mut beta = Vector3::zeros();
    let mut cur = dual_eval(&beta, q_hat, anchor, quad);
    let mut residual = (cur.mean - q_hat).norm();
    for iter in 0..opts.max_iter {
        if residual <= opts.tol {
            return Ok(M1Solution {
                beta,
                log_partition: cur.log_z,
                p_hat: cur.second,
                residual,
                iterations: iter,
            });
        }
        let grad = cur.mean - q_hat;
        let hess = cur.second - outer(&cur.mean, &cur.mean);
        let dir = match hess.cholesky() {
            Some(c) => -c.solve(&grad),
            None => -grad,
        };
        let slope = grad.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtrack {
            let trial = beta + dir * step;
            let eval = dual_eval(&trial, q_hat, anchor, quad);
            // near the optimum the dual value stalls at roundoff; the residual still decreases
            let armijo = eval.value <= cur.value + 1e-4 * step * slope;
            let shrinks = (eval.mean - q_hat).norm() <= (1.0 - 1e-4 * step) * residual;
            if eval.value.is_finite() && (armijo || shrinks) {
                accepted = Some((trial, eval));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, eval)) => {
                beta = trial;
                cur = eval;
            }
            None => {
                // no decrease possible at working precision; accept if converged enough
                let trial = beta + dir * step;
                let eval = dual_eval(&trial, q_hat, anchor, quad);
                if (eval.mean - q_hat).norm() < residual {
                    beta = trial;
                    cur = eval;
                } else {
                    return Err(Error::NoConvergence { iterations: iter + 1, residual });
                }
            }
        }
        residual = (cur.mean - q_hat).norm();
    }
    if residual <= opts.tol {
        return Ok(M1Solution {
            beta,
            log_partition: cur.log_z,
            p_hat: cur.second,
            residual,
            iterations: opts.max_iter,
        });
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual })
}

/// Positive closure `f = a exp(eps v . b) F`; `anchor` is `F` tabulated on `quad`.
pub fn m1f_closure(
    m: &MomentVector1,
    anchor: &[f64],
    quad: &SphereQuadrature,
    eps: f64,
    opts: &M1Options,
) -> Result<ClosureResult> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if !(m.rho > 0.0) {
        if m.rho == 0.0 && m.q.norm() == 0.0 {
            return Ok(ClosureResult { p: Sym3::zeros(), multipliers: Some((0.0, Vector3::zeros())) });
        }
        return Err(Error::NotRealizable(format!("density {} must be positive", m.rho)));
    }
    let sol = m1f_solve(&m.q_hat(), anchor, quad, opts)?;
    let a = m.rho * (-sol.log_partition).exp();
    Ok(ClosureResult { p: sol.p_hat * m.rho, multipliers: Some((a, sol.beta / eps)) })
}

/// Signed realizability margins; all nonnegative means realizable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizabilityMargins {
    /// `1 - |q_hat|`.
    pub first: f64,
    /// Smallest eigenvalue of `P_hat - q_hat q_hat^T`.
    pub second: f64,
    /// `|tr(P_hat) - 1|`.
    pub trace_err: f64,
}

pub fn check_realizability(m: &MomentVector1, p: &Sym3) -> Result<RealizabilityMargins> {
    if !(m.rho > 0.0) {
        return Err(Error::InvalidParameter(format!("realizability check needs rho > 0, got {}", m.rho)));
    }
    let qh = m.q / m.rho;
    let ph = p / m.rho;
    Ok(RealizabilityMargins {
        first: 1.0 - qh.norm(),
        second: sym3_min_eigenvalue(&(ph - outer(&qh, &qh))),
        trace_err: (ph.trace() - 1.0).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::build_quadrature;
    use crate::tissue::{peanut_on_nodes, peanut_pressure_tensor};

    fn iso() -> Sym3 {
        Sym3::identity() / 3.0
    }

    #[test]
    fn p1f_symmetric_anchor_gives_equilibrium_pressure() {
        let dw = Sym3::new(3.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 2.0);
        let df = peanut_pressure_tensor(&dw).unwrap();
        let anchor = AnchorMoments::symmetric(df);
        let m = MomentVector1::new(2.0, Vector3::new(0.3, -0.2, 0.1));
        let r = p1f_closure(&m, &anchor, 0.5).unwrap();
        assert!((r.p - df * 2.0).abs().max() < 1e-14);
    }

    #[test]
    fn p1f_equilibrium_flux_has_zero_b() {
        let anchor = AnchorMoments {
            m1: Vector3::new(0.1, 0.0, 0.0),
            m2: Sym3::from_diagonal(&Vector3::new(0.4, 0.3, 0.3)),
            m3: [Sym3::zeros(); 3],
        };
        let m = MomentVector1::new(1.5, anchor.m1 * 1.5);
        let r = p1f_closure(&m, &anchor, 1.0).unwrap();
        let (a, b) = r.multipliers.unwrap();
        assert!(b.norm() < 1e-15);
        assert!((a - 1.5).abs() < 1e-15);
        assert!((r.p - anchor.m2 * 1.5).abs().max() < 1e-15);
    }

    #[test]
    fn p1f_isotropic_example() {
        let anchor = AnchorMoments::symmetric(peanut_pressure_tensor(&Sym3::identity()).unwrap());
        let m = MomentVector1::new(1.0, Vector3::new(0.1, 0.0, 0.0));
        let r = p1f_closure(&m, &anchor, 1.0).unwrap();
        let (_, b) = r.multipliers.unwrap();
        assert!((b - Vector3::new(0.3, 0.0, 0.0)).norm() < 1e-14);
        assert!((r.p - iso()).abs().max() < 1e-15);
    }

    #[test]
    fn p1f_flat_support_is_rejected() {
        let anchor = AnchorMoments::symmetric(Sym3::from_diagonal(&Vector3::new(0.5, 0.5, 0.0)));
        let m = MomentVector1::new(1.0, Vector3::zeros());
        assert!(matches!(p1f_closure(&m, &anchor, 1.0), Err(Error::FlatSupport(_))));
    }

    #[test]
    fn kershaw_examples() {
        let r = kershaw_closure(&MomentVector1::new(1.0, Vector3::zeros()), &iso()).unwrap();
        assert!((r.p - iso()).abs().max() < 1e-15);
        let r = kershaw_closure(&MomentVector1::new(1.0, Vector3::new(0.5, 0.0, 0.0)), &iso()).unwrap();
        assert!((r.p - Sym3::from_diagonal(&Vector3::new(0.5, 0.25, 0.25))).abs().max() < 1e-15);
        let df = Sym3::from_diagonal(&Vector3::new(0.5, 0.3, 0.2));
        let q = Vector3::new(0.6, 0.0, 0.8) * 2.0;
        let r = kershaw_closure(&MomentVector1::new(2.0, q), &df).unwrap();
        let qh = q / 2.0;
        assert!((r.p / 2.0 - outer(&qh, &qh)).abs().max() < 1e-15);
        assert!(kershaw_closure(&MomentVector1::new(1.0, Vector3::new(1.01, 0.0, 0.0)), &df).is_err());
    }

    #[test]
    fn realizability_examples() {
        let df = Sym3::from_diagonal(&Vector3::new(0.5, 0.3, 0.2));
        let eq = check_realizability(&MomentVector1::new(1.0, Vector3::zeros()), &df).unwrap();
        assert!(eq.first >= 0.0 && eq.second >= 0.0 && eq.trace_err < 1e-15);

        let qh = Vector3::new(0.0, 1.0, 0.0);
        let edge = check_realizability(&MomentVector1::new(1.0, qh), &outer(&qh, &qh)).unwrap();
        assert!(edge.second.abs() < 1e-15 && edge.first.abs() < 1e-15);

        let bad = check_realizability(&MomentVector1::new(1.0, Vector3::new(0.9, 0.0, 0.0)), &iso()).unwrap();
        assert!((bad.second - (1.0 / 3.0 - 0.81)).abs() < 1e-14);
        assert!(bad.second < 0.0);
        assert!(check_realizability(&MomentVector1::new(0.0, Vector3::zeros()), &iso()).is_err());
    }

    #[test]
    fn m1f_equilibrium_and_moment_match() {
        let quad = build_quadrature(10).unwrap();
        let dw = Sym3::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 1.5);
        let anchor = peanut_on_nodes(&dw, &quad).unwrap();
        let opts = M1Options::default();

        let m = MomentVector1::new(0.7, Vector3::zeros());
        let r = m1f_closure(&m, &anchor, &quad, 0.5, &opts).unwrap();
        let (a, b) = r.multipliers.unwrap();
        assert!(b.norm() < 1e-14 && (a - 0.7).abs() < 1e-12);
        assert!((r.p - peanut_pressure_tensor(&dw).unwrap() * 0.7).abs().max() < 1e-12);

        let iso_anchor = peanut_on_nodes(&Sym3::identity(), &quad).unwrap();
        let m = MomentVector1::new(1.0, Vector3::new(0.3, 0.0, 0.0));
        let r = m1f_closure(&m, &iso_anchor, &quad, 1.0, &opts).unwrap();
        let (a, b) = r.multipliers.unwrap();
        // moment residual from the returned ansatz
        let mut rho = 0.0;
        let mut q = Vector3::zeros();
        for ((v, w), &f) in quad.iter().zip(&iso_anchor) {
            let fa = a * v.dot(&b).exp() * f;
            rho += w * fa;
            q += v * (w * fa);
        }
        assert!((rho - 1.0).abs() < 1e-10 && (q - m.q).norm() < 1e-10);
        assert!((r.p.trace() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn m1f_rejects_non_realizable() {
        let quad = build_quadrature(6).unwrap();
        let anchor = vec![1.0; quad.len()];
        let m = MomentVector1::new(1.0, Vector3::new(1.0, 0.0, 0.0));
        assert!(matches!(
            m1f_closure(&m, &anchor, &quad, 1.0, &M1Options::default()),
            Err(Error::NotRealizable(_))
        ));
    }

    #[test]
    fn m1f_beyond_discrete_hull_fails_with_residual() {
        let quad = build_quadrature(4).unwrap();
        let anchor = vec![1.0; quad.len()];
        let m = MomentVector1::new(1.0, Vector3::new(0.0, 0.0, 0.99));
        match m1f_closure(&m, &anchor, &quad, 1.0, &M1Options::default()) {
            Err(Error::NoConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
