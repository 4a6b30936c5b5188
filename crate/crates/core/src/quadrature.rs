//! Velocity-space quadrature on the unit sphere.
//!
//! Rules are tensor products of a Gauss-Legendre rule in the polar cosine
//! `mu = v_z` and an equispaced midpoint rule in the azimuth `phi`. A rule of
//! degree `d` uses `ceil((d + 1) / 2)` polar nodes and `d + 1` azimuthal nodes
//! and integrates every polynomial of total degree `<= d` in `(v_x, v_y, v_z)`
//! exactly.
//!
//! Node ordering is fixed: polar index outer (ascending `mu`), azimuthal index
//! inner (ascending `phi_j = (j + 1/2) 2 pi / m`). Summation in [`SphereQuadrature::integrate`]
//! follows that order, so results are bitwise reproducible. The azimuthal
//! node set is invariant under `phi -> -phi` and `phi -> pi - phi`, which makes
//! the rules mirror-symmetric in `v_x` and `v_y`.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MIN_DEGREE: usize = 2;
pub const MAX_DEGREE: usize = 400;

/// Default exactness degree for closure moments.
pub const DEFAULT_DEGREE: usize = 10;

#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    nodes: Vec<Vector3<f64>>,
    weights: Vec<f64>,
    order: usize,
}

impl SphereQuadrature {
    pub fn nodes(&self) -> &[Vector3<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vector3<f64>, f64)> {
        self.nodes.iter().zip(self.weights.iter().copied())
    }

    /// `sum_i w_i f(v_i)` in node order. Fails on the first non-finite value.
    pub fn integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&Vector3<f64>) -> f64,
    {
        let mut acc = 0.0;
        for (index, (v, w)) in self.iter().enumerate() {
            let value = f(v);
            if !value.is_finite() {
                return Err(Error::NonFiniteIntegrand { index });
            }
            acc += w * value;
        }
        Ok(acc)
    }

    /// Integrates a function evaluated once per node, e.g. a tabulated anchor.
    pub fn integrate_values(&self, values: &[f64]) -> Result<f64> {
        assert_eq!(values.len(), self.len(), "one value per node");
        let mut acc = 0.0;
        for (index, (&value, &w)) in values.iter().zip(&self.weights).enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteIntegrand { index });
            }
            acc += w * value;
        }
        Ok(acc)
    }
}

/// Product Gauss rule on the full sphere, exact up to `degree`.
pub fn build_quadrature(degree: usize) -> Result<SphereQuadrature> {
    check_degree(degree)?;
    let (n_polar, n_azimuth) = product_sizes(degree);
    let (mus, mu_weights) = gauss_legendre(n_polar);
    let dphi = 2.0 * PI / n_azimuth as f64;

    let mut nodes = Vec::with_capacity(n_polar * n_azimuth);
    let mut weights = Vec::with_capacity(n_polar * n_azimuth);
    for (&mu, &wmu) in mus.iter().zip(&mu_weights) {
        let s = (1.0 - mu * mu).max(0.0).sqrt();
        for j in 0..n_azimuth {
            let phi = (j as f64 + 0.5) * dphi;
            nodes.push(Vector3::new(s * phi.cos(), s * phi.sin(), mu));
            weights.push(wmu * dphi);
        }
    }
    Ok(SphereQuadrature { nodes, weights, order: degree })
}

/// Rule on the open hemisphere `{v : v . n > 0}`, exact for polynomials up to
/// `degree` restricted to the hemisphere. `normal` must be a unit vector.
pub fn build_half_range(normal: &Vector3<f64>, degree: usize) -> Result<SphereQuadrature> {
    check_degree(degree)?;
    let n = normal.normalize();
    let (t1, t2) = tangent_frame(&n);
    let (n_polar, n_azimuth) = product_sizes(degree);
    let (xs, xw) = gauss_legendre(n_polar);
    let dphi = 2.0 * PI / n_azimuth as f64;

    let mut nodes = Vec::with_capacity(n_polar * n_azimuth);
    let mut weights = Vec::with_capacity(n_polar * n_azimuth);
    for (&x, &wx) in xs.iter().zip(&xw) {
        // map [-1, 1] onto mu in (0, 1)
        let mu = 0.5 * (x + 1.0);
        let wmu = 0.5 * wx;
        let s = (1.0 - mu * mu).max(0.0).sqrt();
        for j in 0..n_azimuth {
            let phi = (j as f64 + 0.5) * dphi;
            let v = n * mu + (t1 * phi.cos() + t2 * phi.sin()) * s;
            nodes.push(v);
            weights.push(wmu * dphi);
        }
    }
    Ok(SphereQuadrature { nodes, weights, order: degree })
}

fn check_degree(degree: usize) -> Result<()> {
    if (MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
        Ok(())
    } else {
        Err(Error::UnsupportedDegree { degree, min: MIN_DEGREE, max: MAX_DEGREE })
    }
}

fn product_sizes(degree: usize) -> (usize, usize) {
    ((degree + 2) / 2, degree + 1)
}

// Deterministic tangent frame; for axis-aligned normals t1 is a coordinate axis.
fn tangent_frame(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = (helper - n * n.dot(&helper)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Gauss-Legendre nodes (ascending) and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Closed-form `int_{S^2} x^a y^b z^c dv`; used by tests as an oracle.
pub fn monomial_sphere_integral(a: u32, b: u32, c: u32) -> f64 {
    if a % 2 == 1 || b % 2 == 1 || c % 2 == 1 {
        return 0.0;
    }
    // 2 Gamma(alpha) Gamma(beta) Gamma(gamma) / Gamma(alpha + beta + gamma)
    // with alpha = (a + 1) / 2 etc.
    let half = |k: u32| (k as f64 + 1.0) / 2.0;
    let (al, be, ga) = (half(a), half(b), half(c));
    2.0 * (ln_gamma(al) + ln_gamma(be) + ln_gamma(ga) - ln_gamma(al + be + ga)).exp()
}

// Exact for the half-integer and integer arguments needed above.
fn ln_gamma(x: f64) -> f64 {
    let twice = (2.0 * x).round() as i64;
    if twice % 2 == 0 {
        let n = (twice / 2) as u64;
        (1..n).map(|k| (k as f64).ln()).sum()
    } else {
        // Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!)
        let k = ((twice - 1) / 2) as u64;
        let mut acc = 0.5 * PI.ln();
        for j in 0..k {
            acc += (j as f64 + 0.5).ln();
        }
        acc
    }
}
