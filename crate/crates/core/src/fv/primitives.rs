use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::error::{Error, Result};

/// Parameters of the central WENO weights `w(a) = (theta + dx |a|)^(-z)`,
/// where `a` is an undivided difference of neighboring cell means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WenoParams {
    pub theta: f64,
    pub z: f64,
}

impl Default for WenoParams {
    fn default() -> Self {
        WenoParams { theta: 1e-6, z: 2.0 }
    }
}

impl WenoParams {
    #[inline]
    pub fn weight(&self, a: f64, dx: f64) -> f64 {
        let base = self.theta + dx * a.abs();
        if self.z == 2.0 {
            1.0 / (base * base)
        } else {
            base.powf(-self.z)
        }
    }

    /// Weight of the undivided difference `dx * slope`.
    #[inline]
    pub fn slope_weight(&self, slope: f64, dx: f64) -> f64 {
        self.weight(dx * slope, dx)
    }
}

/// `W2(a-, a+)`: weighted average of the undivided differences
/// `d_minus = u_j - u_{j-1}` and `d_plus = u_{j+1} - u_j`.
#[inline]
pub fn weno2_slope(d_minus: f64, d_plus: f64, dx: f64, p: &WenoParams) -> f64 {
    let wm = p.weight(d_minus, dx);
    let wp = p.weight(d_plus, dx);
    (wm * d_minus + wp * d_plus) / (wm + wp)
}

/// Componentwise WENO slope from the one-sided slopes `dm`, `dp`.
pub fn componentwise_slope(dm: &[f64], dp: &[f64], dx: f64, p: &WenoParams, out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(dm).zip(dp) {
        *o = weno2_slope(dx * a, dx * b, dx, p) / dx;
    }
}

/// Global Lax-Friedrichs flux `(F(uL) + F(uR) - C (uR - uL)) / 2` from
/// precomputed physical fluxes.
#[inline]
pub fn lax_friedrichs_combine(ul: &[f64], ur: &[f64], fl: &[f64], fr: &[f64], c: f64, out: &mut [f64]) {
    for k in 0..out.len() {
        out[k] = 0.5 * (fl[k] + fr[k] - c * (ur[k] - ul[k]));
    }
}

/// Global Lax-Friedrichs flux for an arbitrary flux function.
pub fn lax_friedrichs_flux<F>(ul: &[f64], ur: &[f64], flux: F, c: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let fl = flux(ul);
    let fr = flux(ur);
    let mut out = vec![0.0; ul.len()];
    lax_friedrichs_combine(ul, ur, &fl, &fr, c, &mut out);
    out
}

/// Projector norm above which the eigendecomposition is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Characteristic WENO for a 4x4 Jacobian using spectral projectors.
///
/// Eigenvalues are clustered with tolerance `1e-5 * max(1, |J|)`; the
/// projector onto a cluster is the Lagrange polynomial of `J` through the
/// cluster means, so the projectors always sum to the identity. Each
/// projected difference pair gets one WENO weight from its Euclidean norm.
/// Returns `None` if the spectrum is not real or a projector is too large.
pub fn projector_slope4(j: &Matrix4<f64>, dm: &Vector4<f64>, dp: &Vector4<f64>, dx: f64, p: &WenoParams) -> Option<Vector4<f64>> {
    let scale = j.abs().max().max(1.0);
    let eig = j.complex_eigenvalues();
    let mut re = [0.0; 4];
    for k in 0..4 {
        if eig[k].im.abs() > 1e-7 * scale || !eig[k].re.is_finite() {
            return None;
        }
        re[k] = eig[k].re;
    }
    re.sort_by(|a, b| a.total_cmp(b));
    let tol = 1e-5 * scale;
    let mut means = [0.0; 4];
    let mut counts = [0usize; 4];
    let mut nc = 0;
    for &x in &re {
        if nc > 0 && (x - means[nc - 1]).abs() <= tol {
            let c = counts[nc - 1] as f64;
            means[nc - 1] = (means[nc - 1] * c + x) / (c + 1.0);
            counts[nc - 1] += 1;
        } else {
            means[nc] = x;
            counts[nc] = 1;
            nc += 1;
        }
    }
    let mut slope = Vector4::zeros();
    if nc == 1 {
        let wm = p.slope_weight(dm.norm(), dx);
        let wp = p.slope_weight(dp.norm(), dx);
        return Some((dm * wm + dp * wp) / (wm + wp));
    }
    for k in 0..nc {
        let mut proj = Matrix4::identity();
        for l in 0..nc {
            if l != k {
                let mut f = *j;
                for d in 0..4 {
                    f[(d, d)] -= means[l];
                }
                proj = f * proj / (means[k] - means[l]);
            }
        }
        if proj.abs().max() > CONDITION_LIMIT {
            return None;
        }
        let pm = proj * dm;
        let pp = proj * dp;
        let wm = p.slope_weight(pm.norm(), dx);
        let wp = p.slope_weight(pp.norm(), dx);
        slope += (pm * wm + pp * wp) / (wm + wp);
    }
    Some(slope)
}

/// Eigen-structure of a constant flux matrix for block WENO.
#[derive(Debug, Clone)]
pub struct LinearChar {
    pub right: DMatrix<f64>,
    pub left: DMatrix<f64>,
    pub clusters: Vec<(usize, usize)>,
    /// `R_c^T R_c` per cluster, to measure projections in physical norm.
    pub grams: Vec<DMatrix<f64>>,
}

impl LinearChar {
    pub fn new(right: DMatrix<f64>, left: DMatrix<f64>, clusters: Vec<(usize, usize)>) -> Self {
        let grams = clusters
            .iter()
            .map(|&(s, l)| {
                let r = right.columns(s, l);
                r.transpose() * r
            })
            .collect();
        LinearChar { right, left, clusters, grams }
    }

    /// Block WENO slope; `scratch` needs `3 n` entries.
    pub fn slope(&self, dm: &[f64], dp: &[f64], dx: f64, p: &WenoParams, out: &mut [f64], scratch: &mut [f64]) {
        let n = dm.len();
        let (cm, rest) = scratch.split_at_mut(n);
        let (cp, cs) = rest.split_at_mut(n);
        for r in 0..n {
            let mut a = 0.0;
            let mut b = 0.0;
            for c in 0..n {
                let l = self.left[(r, c)];
                a += l * dm[c];
                b += l * dp[c];
            }
            cm[r] = a;
            cp[r] = b;
        }
        for (ci, &(s, l)) in self.clusters.iter().enumerate() {
            let g = &self.grams[ci];
            let quad = |c: &[f64]| {
                let mut acc = 0.0;
                for x in 0..l {
                    for y in 0..l {
                        acc += c[s + x] * g[(x, y)] * c[s + y];
                    }
                }
                acc.max(0.0).sqrt()
            };
            let wm = p.slope_weight(quad(cm), dx);
            let wp = p.slope_weight(quad(cp), dx);
            for x in s..s + l {
                cs[x] = (wm * cm[x] + wp * cp[x]) / (wm + wp);
            }
        }
        for r in 0..n {
            let mut a = 0.0;
            for c in 0..n {
                a += self.right[(r, c)] * cs[c];
            }
            out[r] = a;
        }
    }
}

/// First-order realizability of the leading moments `(rho, q)`.
#[inline]
pub fn is_admissible(u: &[f64], floor: f64) -> bool {
    let rho = u[0];
    let q2 = u[1] * u[1] + u[2] * u[2] + u[3] * u[3];
    rho >= floor && q2 <= rho * rho && rho.is_finite() && q2.is_finite()
}

/// Largest `theta` in `[0, 1]` with `mean + theta (face - mean)` admissible,
/// by bisection to `1e-12`.
pub fn limiter_theta(mean: &[f64], face: &[f64], floor: f64) -> Result<f64> {
    if !is_admissible(mean, floor) {
        return Err(Error::NotRealizable(format!(
            "cell mean (rho = {:e}, |q| = {:e}) is not realizable",
            mean[0],
            (mean[1] * mean[1] + mean[2] * mean[2] + mean[3] * mean[3]).sqrt()
        )));
    }
    if is_admissible(face, floor) {
        return Ok(1.0);
    }
    let at = |t: f64| -> [f64; 4] {
        let mut v = [0.0; 4];
        for k in 0..4 {
            v[k] = mean[k] + t * (face[k] - mean[k]);
        }
        v
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if is_admissible(&at(mid), floor) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Limit a face value towards the cell mean; returns the limited value and
/// the factor used.
pub fn realizability_limit(mean: &[f64], face: &[f64], floor: f64) -> Result<(Vec<f64>, f64)> {
    let theta = limiter_theta(mean, face, floor)?;
    let out = mean.iter().zip(face).map(|(m, f)| m + theta * (f - m)).collect();
    Ok((out, theta))
}

/// Quadratic nodal DG-in-time discretisation on the reference step `[-1, 1]`
/// with nodes `-1, 0, 1` and 3-point Gauss quadrature.
#[derive(Debug, Clone)]
pub struct DgTime {
    /// `A_ij = int phi_j' phi_i` plus the upwind jump term on `(0, 0)`.
    pub lhs: [[f64; 3]; 3],
    /// `phi_i(tau_g)`.
    pub phi: [[f64; 3]; 3],
    pub gauss_w: [f64; 3],
    /// `M_ij = sum_g w_g phi_i(tau_g) phi_j(tau_g)`.
    pub mass: [[f64; 3]; 3],
}

fn phi(i: usize, t: f64) -> f64 {
    match i {
        0 => 0.5 * t * (t - 1.0),
        1 => 1.0 - t * t,
        _ => 0.5 * t * (t + 1.0),
    }
}

fn dphi(i: usize, t: f64) -> f64 {
    match i {
        0 => t - 0.5,
        1 => -2.0 * t,
        _ => t + 0.5,
    }
}

impl Default for DgTime {
    fn default() -> Self {
        Self::new()
    }
}

impl DgTime {
    pub fn new() -> Self {
        let g = (0.6f64).sqrt();
        let tau = [-g, 0.0, g];
        let gauss_w = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let mut lhs = [[0.0; 3]; 3];
        let mut ph = [[0.0; 3]; 3];
        let mut mass = [[0.0; 3]; 3];
        for i in 0..3 {
            for gq in 0..3 {
                ph[i][gq] = phi(i, tau[gq]);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let mut a = 0.0;
                let mut m = 0.0;
                for gq in 0..3 {
                    a += gauss_w[gq] * dphi(j, tau[gq]) * ph[i][gq];
                    m += gauss_w[gq] * ph[i][gq] * ph[j][gq];
                }
                lhs[i][j] = a;
                mass[i][j] = m;
            }
        }
        lhs[0][0] += 1.0;
        DgTime { lhs, phi: ph, gauss_w, mass }
    }

    /// Propagator `Phi` with `u(t + dt) = Phi u(t)` for `u' = A u`.
    pub fn linear_propagator(&self, a: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
        let n = a.nrows();
        let mut big = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..3 {
            for j in 0..3 {
                let mut blk = a * (-0.5 * dt * self.mass[i][j]);
                for d in 0..n {
                    blk[(d, d)] += self.lhs[i][j];
                }
                big.view_mut((i * n, j * n), (n, n)).copy_from(&blk);
            }
        }
        let mut rhs = DMatrix::zeros(3 * n, n);
        for d in 0..n {
            rhs[(d, d)] = 1.0;
        }
        let sol = big
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidParameter("singular DG system for linear source".into()))?;
        Ok(sol.rows(2 * n, n).into_owned())
    }

    /// Amplification factor for the scalar problem `u' = lambda u` with `z = lambda dt`.
    pub fn scalar_factor(&self, z: f64) -> f64 {
        let mut m = nalgebra::Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = self.lhs[i][j] - 0.5 * z * self.mass[i][j];
            }
        }
        let rhs = nalgebra::Vector3::new(1.0, 0.0, 0.0);
        m.lu().solve(&rhs).map(|x| x[2]).unwrap_or(f64::NAN)
    }
}

/// Newton options for the nonlinear DG solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Update tolerance relative to `max(1, |u_old|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-12, max_iter: 50 }
    }
}

/// One DG-in-time step for `u' = s(u)`; `source` returns `s(u)` and its
/// Jacobian. Linear and nonlinear sources are both handled by Newton, which
/// terminates after one iteration for affine sources.
pub fn dg_source_step<F>(u_old: &DVector<f64>, dt: f64, mut source: F, opts: &NewtonOptions) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let dg = DgTime::new();
    let n = u_old.len();
    let mut nodes = [u_old.clone(), u_old.clone(), u_old.clone()];
    let scale = u_old.amax().max(1.0);
    let mut history = Vec::new();
    for _ in 0..opts.max_iter {
        let mut res = DVector::zeros(3 * n);
        let mut jac = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..3 {
            let mut r = -&nodes[0] * 0.0;
            for j in 0..3 {
                r += &nodes[j] * dg.lhs[i][j];
            }
            if i == 0 {
                r -= u_old;
            }
            res.rows_mut(i * n, n).copy_from(&r);
            for j in 0..3 {
                for d in 0..n {
                    jac[(i * n + d, j * n + d)] += dg.lhs[i][j];
                }
            }
        }
        for g in 0..3 {
            let mut ug = DVector::zeros(n);
            for j in 0..3 {
                ug += &nodes[j] * dg.phi[j][g];
            }
            let (s, js) = source(&ug);
            for i in 0..3 {
                let c = 0.5 * dt * dg.gauss_w[g] * dg.phi[i][g];
                let mut rows = res.rows_mut(i * n, n);
                rows -= &s * c;
                for j in 0..3 {
                    let cj = c * dg.phi[j][g];
                    let mut blk = jac.view_mut((i * n, j * n), (n, n));
                    blk -= &js * cj;
                }
            }
        }
        let rnorm = res.amax();
        history.push(rnorm);
        if !rnorm.is_finite() || (history.len() > 3 && rnorm > 1e6 * history[0].max(1e-300)) {
            return Err(Error::Divergence { history });
        }
        let delta = jac.lu().solve(&res).ok_or_else(|| Error::Divergence { history: history.clone() })?;
        for i in 0..3 {
            nodes[i] -= delta.rows(i * n, n);
        }
        if delta.amax() <= opts.tol * scale {
            return Ok(nodes[2].clone());
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: history.last().copied().unwrap_or(f64::NAN) })
}
