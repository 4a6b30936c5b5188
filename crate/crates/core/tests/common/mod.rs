#![allow(dead_code)]

use moment_glioma::closures::ModelKind;
use moment_glioma::fv::{run, Boundary, MomentField, SolverConfig};
use moment_glioma::grid::GridSpec;
use moment_glioma::kinetic::{build_system_from_cells, CellTissue, MomentModel, ScalingParams, SystemOptions};
use moment_glioma::linalg::Sym3;
use nalgebra::Vector3;

/// Uniform isotropic tissue without haptotaxis.
pub fn isotropic_cells(n: usize) -> Vec<CellTissue> {
    (0..n).map(|_| CellTissue::peanut(Sym3::identity(), 0.0, Vector3::zeros()).unwrap()).collect()
}

pub fn system(kind: ModelKind, grid: GridSpec, cells: Vec<CellTissue>, eps: f64) -> Box<dyn MomentModel> {
    let s = ScalingParams::fiber_strand(eps, 1.0, 1.0).unwrap();
    build_system_from_cells(kind, grid, cells, &s, SystemOptions::default()).unwrap()
}

/// Exact cell averages of `a cos(k x) + b sin(k x)` along x.
pub fn cell_average_mode(g: &GridSpec, k: f64, a: f64, b: f64) -> Vec<f64> {
    (0..g.nx)
        .map(|i| {
            let (l, r) = (g.x0 + i as f64 * g.dx, g.x0 + (i + 1) as f64 * g.dx);
            (a * ((k * r).sin() - (k * l).sin()) - b * ((k * r).cos() - (k * l).cos())) / (k * g.dx)
        })
        .collect()
}

/// Linear P1 relaxation system `rho_t + q_x / eps = 0`,
/// `q_t + rho_x / (3 eps) = -q / eps^2` for one Fourier mode
/// `rho = Re(a e^{ikx})`, `q = Re(b e^{ikx})` starting from `a = 1, b = 0`.
/// Returns the complex amplitudes `(a, b)` at time `t`.
pub fn p1_mode_exact(k: f64, eps: f64, t: f64) -> ((f64, f64), (f64, f64)) {
    use nalgebra::{Complex, Matrix2, Vector2};
    let i = Complex::new(0.0, 1.0);
    let m = Matrix2::new(
        Complex::new(0.0, 0.0),
        -i * k / eps,
        -i * k / (3.0 * eps),
        Complex::new(-1.0 / (eps * eps), 0.0),
    );
    // exp(M t) via the eigenvalues of the 2x2 matrix (Sylvester's formula)
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (tr * tr - det * 4.0).sqrt();
    let (l1, l2) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
    let id = Matrix2::identity();
    let e = (m - id * l2) * ((l1 * t).exp() / (l1 - l2)) + (m - id * l1) * ((l2 * t).exp() / (l2 - l1));
    let v = e * Vector2::new(Complex::new(1.0, 0.0), Complex::new(0.0, 0.0));
    ((v[0].re, v[0].im), (v[1].re, v[1].im))
}

/// L1 error of the density and x-momentum of the P1 mode with the given
/// amplitude over a unit background, at `t_end` on `nx` cells, divided by the amplitude.
pub fn p1_mode_error(nx: usize, eps: f64, t_end: f64, amplitude: f64) -> f64 {
    let g = GridSpec::new(nx, 3, 0.0, 0.0, 1.0 / nx as f64, 1.0 / nx as f64).unwrap();
    let k = 2.0 * std::f64::consts::PI;
    let rho0 = cell_average_mode(&g, k, amplitude, 0.0);
    let init = MomentField::from_fn(g, 4, |c| vec![1.0 + rho0[c % nx], 0.0, 0.0, 0.0]).unwrap();
    let cfg = SolverConfig { t_end, ..SolverConfig::default() };
    let s = ScalingParams::fiber_strand(eps, 1.0, 1.0).unwrap();
    let sys = build_system_from_cells(ModelKind::PN(1), g, isotropic_cells(g.len()), &s, cfg.system_options()).unwrap();
    let out = run(sys.as_ref(), init, &cfg, Boundary::Periodic, &[]).unwrap();
    let u = &out.snapshots.last().unwrap().1;
    // Re((ar + i ai) e^{ikx}) = ar cos - ai sin
    let ((ar, ai), (br, bi)) = p1_mode_exact(k, eps, t_end);
    let rho = cell_average_mode(&g, k, amplitude * ar, -amplitude * ai);
    let q = cell_average_mode(&g, k, amplitude * br, -amplitude * bi);
    (0..g.len())
        .map(|c| ((u.cell(c)[0] - 1.0 - rho[c % nx]).abs() + (u.cell(c)[1] - q[c % nx]).abs()) * g.dx / 3.0)
        .sum::<f64>()
        / amplitude
}
