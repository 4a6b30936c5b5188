use nalgebra::{Complex, DMatrix, Matrix4, Vector3};

use super::{kershaw_pressure_dq, MomentVector1};
use crate::linalg::{eigen_report, Sym3};

/// Jacobian of the unit-speed Kershaw flux `(q . n, P n)` with respect to `(rho, q)`.
pub fn kershaw_flux_jacobian(m: &MomentVector1, df: &Sym3, n: &Vector3<f64>) -> Matrix4<f64> {
    let qh = m.q_hat();
    let dfn = df * n;
    let drho = dfn * (1.0 + qh.norm_squared()) - qh * qh.dot(n);
    let dq = kershaw_pressure_dq(m, df, n);
    let mut j = Matrix4::zeros();
    for k in 0..3 {
        j[(0, k + 1)] = n[k];
        j[(k + 1, 0)] = drho[k];
        for l in 0..3 {
            j[(k + 1, l + 1)] = dq[(k, l)];
        }
    }
    j
}

/// Closed-form eigenvalues in the frame aligned with `q_hat`, available when
/// `n` is parallel or orthogonal to `q_hat` (or `q_hat = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSpectrum {
    /// Formula as printed for the aligned direction, sorted ascending.
    pub printed: [f64; 4],
    /// Formula re-derived from the assembled matrix, sorted ascending.
    pub rederived: [f64; 4],
    /// Max deviation of the numerical eigenvalues from `printed`.
    pub residual_printed: f64,
    /// Max deviation of the numerical eigenvalues from `rederived`.
    pub residual_rederived: f64,
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// Numerical eigenvalues sorted by real part.
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_imag: f64,
    pub diagonalizable: bool,
    pub min_singular: f64,
    pub analytic: Option<AnalyticSpectrum>,
}

const ALIGN_TOL: f64 = 1e-12;

pub fn kershaw_spectrum(m: &MomentVector1, df: &Sym3, n: &Vector3<f64>) -> SpectrumReport {
    let j = kershaw_flux_jacobian(m, df, n);
    let dyn_j = DMatrix::from_iterator(4, 4, j.iter().copied());
    let rep = eigen_report(&dyn_j);

    let analytic = analytic_spectrum(m, df, n).map(|(printed, rederived)| {
        let numeric: Vec<f64> = rep.values.iter().map(|c| c.re).collect();
        let dev = |target: &[f64; 4]| {
            numeric
                .iter()
                .zip(target.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        AnalyticSpectrum {
            residual_printed: dev(&printed),
            residual_rederived: dev(&rederived),
            printed,
            rederived,
        }
    });

    SpectrumReport {
        eigenvalues: rep.values,
        max_imag: rep.max_imag,
        diagonalizable: rep.diagonalizable,
        min_singular: rep.min_singular,
        analytic,
    }
}

fn analytic_spectrum(m: &MomentVector1, df: &Sym3, n: &Vector3<f64>) -> Option<([f64; 4], [f64; 4])> {
    let qh = m.q_hat();
    let s = qh.norm();
    let n = n.normalize();
    let sorted = |mut v: [f64; 4]| {
        v.sort_by(|a, b| a.total_cmp(b));
        v
    };
    if s < ALIGN_TOL {
        let s22 = n.dot(&(df * n));
        let r = s22.max(0.0).sqrt();
        let vals = sorted([0.0, 0.0, -r, r]);
        return Some((vals, vals));
    }
    let qs = qh / s;
    let c = qs.dot(&n);
    if (c.abs() - 1.0).abs() < ALIGN_TOL {
        // n = +-q*, eigenvalues flip sign with the direction
        let sign = c.signum();
        let s11 = qs.dot(&(df * qs));
        let g = s11 * s11 * s * s + s11 * (s - 1.0).powi(2) + (1.0 - s * s);
        let pc = 1.0 - s11 * s;
        let printed = [s, s, pc + g.max(0.0).sqrt(), pc - g.max(0.0).sqrt()];
        let disc = s * s * (1.0 - s11).powi(2) + (1.0 + s * s) * s11 - s * s;
        let rc = s * (1.0 - s11);
        let rederived = [s, s, rc + disc.max(0.0).sqrt(), rc - disc.max(0.0).sqrt()];
        return Some((sorted(printed.map(|x| x * sign)), sorted(rederived.map(|x| x * sign))));
    }
    if c.abs() < ALIGN_TOL {
        let s12 = qs.dot(&(df * n));
        let s22 = n.dot(&(df * n));
        let h = s * s * s12 * s12 + s22 * (1.0 - s * s);
        let r = h.max(0.0).sqrt();
        let vals = sorted([0.0, 0.0, -s * s12 + r, -s * s12 - r]);
        return Some((vals, vals));
    }
    None
}
