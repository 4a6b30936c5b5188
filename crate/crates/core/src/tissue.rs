//! Tissue description: water diffusion tensors, the peanut fibre
//! distribution, volume-fraction estimators and the haptotactic coefficient.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg::{is_symmetric, sym3_eigenvalues, Sym3};
use crate::quadrature::SphereQuadrature;

/// Peanut fibre density `3 / (4 pi tr D_W) * v^T D_W v`.
pub fn peanut_density(dw: &Sym3, v: &Vector3<f64>) -> Result<f64> {
    let tr = dw.trace();
    if !(tr > 0.0) {
        return Err(Error::InvalidTensor(format!("peanut density needs tr(D_W) > 0, got {tr}")));
    }
    Ok(3.0 / (4.0 * PI * tr) * v.dot(&(dw * v)))
}

/// `<v (x) v Q>` for the peanut distribution, `(2 D_W + tr(D_W) I) / (5 tr D_W)`.
pub fn peanut_pressure_tensor(dw: &Sym3) -> Result<Sym3> {
    let tr = dw.trace();
    if !(tr > 0.0) {
        return Err(Error::InvalidTensor(format!("pressure tensor needs tr(D_W) > 0, got {tr}")));
    }
    Ok((dw * 2.0 + Sym3::identity() * tr) / (5.0 * tr))
}

/// Tabulates the peanut density on every node of `quad`.
pub fn peanut_on_nodes(dw: &Sym3, quad: &SphereQuadrature) -> Result<Vec<f64>> {
    quad.nodes().iter().map(|v| peanut_density(dw, v)).collect()
}

pub fn fractional_anisotropy(dw: &Sym3) -> Result<f64> {
    let lambda = sym3_eigenvalues(dw);
    let sum_sq: f64 = lambda.iter().map(|l| l * l).sum();
    if !(sum_sq > 0.0) {
        return Err(Error::InvalidTensor("fractional anisotropy of a zero tensor".into()));
    }
    let mean = lambda.iter().sum::<f64>() / 3.0;
    let dev: f64 = lambda.iter().map(|l| (l - mean).powi(2)).sum();
    Ok((1.5 * dev / sum_sq).sqrt())
}

pub fn characteristic_length(dw: &Sym3) -> Result<f64> {
    let largest = sym3_eigenvalues(dw)[2];
    if !(largest > 0.0) {
        return Err(Error::InvalidTensor(format!(
            "characteristic length needs a positive largest eigenvalue, got {largest}"
        )));
    }
    Ok(1.0 - (dw.trace() / (4.0 * largest)).powf(1.5))
}

/// `g'(Q) / (1 + alpha(Q) / lambda0)` with `alpha(Q) = k+ Q + k-` and
/// `g(Q) = k+ Q / (k+ Q + k-)`.
pub fn haptotactic_coefficient(q: f64, lambda0: f64, kplus: f64, kminus: f64) -> f64 {
    let alpha = kplus * q + kminus;
    let g_prime = kplus * kminus / (alpha * alpha);
    g_prime / (1.0 + alpha / lambda0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "FA")]
    FractionalAnisotropy,
    #[serde(rename = "CL")]
    CharacteristicLength,
}

impl Estimator {
    pub fn volume_fraction(self, dw: &Sym3) -> Result<f64> {
        match self {
            Estimator::FractionalAnisotropy => fractional_anisotropy(dw),
            Estimator::CharacteristicLength => characteristic_length(dw),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimator::FractionalAnisotropy => "FA",
            Estimator::CharacteristicLength => "CL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FA" => Ok(Estimator::FractionalAnisotropy),
            "CL" => Ok(Estimator::CharacteristicLength),
            other => Err(Error::InvalidParameter(format!("unknown estimator '{other}', expected FA or CL"))),
        }
    }
}

/// Grid of symmetric water diffusion tensors (mm^2/s) on a grid in mm.
#[derive(Debug, Clone)]
pub struct WaterTensorField {
    pub grid: GridSpec,
    pub tensors: Vec<Sym3>,
}

impl WaterTensorField {
    pub fn new(grid: GridSpec, tensors: Vec<Sym3>) -> Result<Self> {
        let field = WaterTensorField { grid, tensors };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.tensors.len() != self.grid.len() {
            return Err(Error::InvalidParameter(format!(
                "tensor field has {} entries for a {}x{} grid",
                self.tensors.len(),
                self.grid.nx,
                self.grid.ny
            )));
        }
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let d = &self.tensors[self.grid.index(i, j)];
                check_tensor(d).map_err(|e| e.at_cell(i, j))?;
            }
        }
        Ok(())
    }

    pub fn at(&self, i: usize, j: usize) -> &Sym3 {
        &self.tensors[self.grid.index(i, j)]
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses the `TENSORFIELD2D nx ny x0 y0 dx dy` text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 7 || tokens[0] != "TENSORFIELD2D" {
            return Err(Error::Parse {
                line: hline + 1,
                message: "expected header 'TENSORFIELD2D nx ny x0 y0 dx dy'".into(),
            });
        }
        let int = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse { line: hline + 1, message: format!("bad integer '{s}'") })
        };
        let real = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse { line: hline + 1, message: format!("bad number '{s}'") })
        };
        let grid = GridSpec::new(
            int(tokens[1])?,
            int(tokens[2])?,
            real(tokens[3])?,
            real(tokens[4])?,
            real(tokens[5])?,
            real(tokens[6])?,
        )?;

        let mut tensors = Vec::with_capacity(grid.len());
        for (lineno, line) in lines {
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != 6 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected 6 tensor components, found {}", values.len()),
                });
            }
            let mut c = [0.0; 6];
            for (slot, s) in c.iter_mut().zip(&values) {
                *slot = s.parse().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    message: format!("bad number '{s}'"),
                })?;
            }
            if tensors.len() == grid.len() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("more than nx*ny = {} tensor lines", grid.len()),
                });
            }
            let [xx, xy, xz, yy, yz, zz] = c;
            tensors.push(Sym3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz));
        }
        if tensors.len() != grid.len() {
            return Err(Error::Parse {
                line: text.lines().count() + 1,
                message: format!("expected {} tensor lines, found {}", grid.len(), tensors.len()),
            });
        }
        WaterTensorField::new(grid, tensors)
    }

    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut out = format!(
            "TENSORFIELD2D {} {} {:?} {:?} {:?} {:?}\n",
            g.nx, g.ny, g.x0, g.y0, g.dx, g.dy
        );
        for d in &self.tensors {
            let _ = writeln!(
                out,
                "{:?} {:?} {:?} {:?} {:?} {:?}",
                d[(0, 0)],
                d[(0, 1)],
                d[(0, 2)],
                d[(1, 1)],
                d[(1, 2)],
                d[(2, 2)]
            );
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn check_tensor(d: &Sym3) -> Result<()> {
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidTensor("non-finite component".into()));
    }
    if !is_symmetric(d, 1e-12) {
        return Err(Error::InvalidTensor("tensor is not symmetric".into()));
    }
    let lmin = sym3_eigenvalues(d)[0];
    if lmin < -1e-12 * d.abs().max().max(1.0) {
        return Err(Error::InvalidTensor(format!("negative eigenvalue {lmin}")));
    }
    if !(d.trace() > 0.0) {
        return Err(Error::InvalidTensor("trace must be positive".into()));
    }
    Ok(())
}

/// Synthetic white-matter tract ending in the middle of `[0, X]^2`:
/// `D_W = diag(D00(x), 1, d33)` with
/// `D00 = 1 + 5 exp(-nu / (2 sigma^2))`,
/// `nu = max(0, x1 - X/2, |x2 - X/2| - 0.1)`.
pub fn synth_fiber_strand(extent: f64, sigma: f64, d33: f64, grid: &GridSpec) -> Result<WaterTensorField> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let mut tensors = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.center(i, j);
            let d00 = strand_d00(x, y, extent, sigma);
            tensors.push(Sym3::from_diagonal(&Vector3::new(d00, 1.0, d33)));
        }
    }
    WaterTensorField::new(*grid, tensors)
}

pub fn strand_d00(x: f64, y: f64, extent: f64, sigma: f64) -> f64 {
    let half = 0.5 * extent;
    let nu = 0.0f64.max(x - half).max((y - half).abs() - 0.1);
    1.0 + 5.0 * (-nu / (2.0 * sigma * sigma)).exp()
}

/// Rates entering the haptotactic coefficient (all in 1/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BindingRates {
    pub lambda0: f64,
    pub kplus: f64,
    pub kminus: f64,
}

/// Per-cell tissue quantities derived from a water tensor field.
#[derive(Debug, Clone)]
pub struct TissueFields {
    pub grid: GridSpec,
    pub estimator: Estimator,
    /// Volume fraction in `[0, 1)`.
    pub q: Vec<f64>,
    /// Gradient of `q` in 1/mm.
    pub grad_q: Vec<Vector2<f64>>,
    /// `<v (x) v Q>`, unit trace.
    pub df: Vec<Sym3>,
    pub lam_h: Vec<f64>,
    /// Water tensors the fields were derived from (peanut anchors).
    pub dw: Vec<Sym3>,
}

pub fn derive_tissue_fields(w: &WaterTensorField, estimator: Estimator, rates: BindingRates) -> Result<TissueFields> {
    w.validate()?;
    let g = w.grid;
    let mut q = Vec::with_capacity(g.len());
    let mut df = Vec::with_capacity(g.len());
    for j in 0..g.ny {
        for i in 0..g.nx {
            let d = w.at(i, j);
            let qv = estimator.volume_fraction(d).map_err(|e| e.at_cell(i, j))?;
            if !(0.0..1.0).contains(&qv) {
                return Err(Error::InvalidTensor(format!("volume fraction {qv} outside [0, 1)")).at_cell(i, j));
            }
            q.push(qv);
            df.push(peanut_pressure_tensor(d).map_err(|e| e.at_cell(i, j))?);
        }
    }
    let grad_q = gradient(&q, &g);
    let lam_h = q
        .iter()
        .map(|&qv| haptotactic_coefficient(qv, rates.lambda0, rates.kplus, rates.kminus))
        .collect();
    Ok(TissueFields { grid: g, estimator, q, grad_q, df, lam_h, dw: w.tensors.clone() })
}

/// Second-order central differences inside, first-order one-sided at edges.
pub fn gradient(field: &[f64], g: &GridSpec) -> Vec<Vector2<f64>> {
    let at = |i: usize, j: usize| field[g.index(i, j)];
    let mut out = Vec::with_capacity(g.len());
    for j in 0..g.ny {
        for i in 0..g.nx {
            let gx = if i == 0 {
                (at(1, j) - at(0, j)) / g.dx
            } else if i == g.nx - 1 {
                (at(i, j) - at(i - 1, j)) / g.dx
            } else {
                (at(i + 1, j) - at(i - 1, j)) / (2.0 * g.dx)
            };
            let gy = if j == 0 {
                (at(i, 1) - at(i, 0)) / g.dy
            } else if j == g.ny - 1 {
                (at(i, j) - at(i, j - 1)) / g.dy
            } else {
                (at(i, j + 1) - at(i, j - 1)) / (2.0 * g.dy)
            };
            out.push(Vector2::new(gx, gy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::build_quadrature;

    fn rates() -> BindingRates {
        BindingRates { lambda0: 1.0, kplus: 1.0, kminus: 1.0 }
    }

    #[test]
    fn peanut_examples() {
        let v = Vector3::new(0.3, -0.4, 0.5f64.sqrt() * 1.2).normalize();
        let iso = peanut_density(&Sym3::identity(), &v).unwrap();
        assert!((iso - 1.0 / (4.0 * PI)).abs() < 1e-15);
        let d = Sym3::from_diagonal(&Vector3::new(6.0, 1.0, 1.0));
        let e1 = peanut_density(&d, &Vector3::x()).unwrap();
        assert!((e1 - 18.0 / (32.0 * PI)).abs() < 1e-15);
        assert!((e1 - 0.179049).abs() < 1e-6);
        assert!(peanut_density(&Sym3::zeros(), &Vector3::x()).is_err());
    }

    #[test]
    fn pressure_tensor_examples() {
        let iso = peanut_pressure_tensor(&Sym3::identity()).unwrap();
        assert!((iso - Sym3::identity() / 3.0).abs().max() < 1e-15);
        let d = Sym3::from_diagonal(&Vector3::new(6.0, 1.0, 1.0));
        let p = peanut_pressure_tensor(&d).unwrap();
        assert!((p - Sym3::from_diagonal(&Vector3::new(0.5, 0.25, 0.25))).abs().max() < 1e-15);
        // quadrature oracle
        let quad = build_quadrature(10).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let want = quad.integrate(|v| v[a] * v[b] * peanut_density(&d, v).unwrap()).unwrap();
                assert!((p[(a, b)] - want).abs() < 1e-12);
            }
        }
        assert!(peanut_pressure_tensor(&(-Sym3::identity())).is_err());
    }

    #[test]
    fn anisotropy_examples() {
        assert!(fractional_anisotropy(&Sym3::identity()).unwrap().abs() < 1e-15);
        let d = Sym3::from_diagonal(&Vector3::new(6.0, 1.0, 1.0));
        let fa = fractional_anisotropy(&d).unwrap();
        // sqrt(1.5 * (2/3 * 25) / 38) = 5 / sqrt(38)
        assert!((fa - 5.0 / 38f64.sqrt()).abs() < 1e-14);
        assert!((fa - 0.811107).abs() < 1e-6);
        assert!((fractional_anisotropy(&(d * 7.5)).unwrap() - fa).abs() < 1e-14);
        assert!(fractional_anisotropy(&Sym3::zeros()).is_err());
    }

    #[test]
    fn characteristic_length_examples() {
        let iso = characteristic_length(&Sym3::identity()).unwrap();
        assert!((iso - (1.0 - 0.75f64.powf(1.5))).abs() < 1e-15);
        assert!((iso - 0.350481).abs() < 1e-6);
        let d = Sym3::from_diagonal(&Vector3::new(6.0, 1.0, 1.0));
        assert!((characteristic_length(&d).unwrap() - 0.807550).abs() < 1e-6);
        let line = Sym3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0));
        assert!((characteristic_length(&line).unwrap() - 0.875).abs() < 1e-15);
        assert!(characteristic_length(&Sym3::zeros()).is_err());
    }

    #[test]
    fn haptotactic_examples() {
        assert!((haptotactic_coefficient(0.0, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((haptotactic_coefficient(1.0, 1.0, 1.0, 1.0) - 1.0 / 12.0).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for k in 0..100 {
            let h = haptotactic_coefficient(k as f64 / 100.0, 2.0, 0.7, 1.3);
            assert!(h < last);
            last = h;
        }
    }

    #[test]
    fn strand_values() {
        assert_eq!(strand_d00(0.5, 1.5, 3.0, 0.1), 6.0);
        let far = strand_d00(3.0, 3.0, 3.0, 0.1);
        assert!((far - (1.0 + 5.0 * (-75.0f64).exp())).abs() < 1e-15);
        assert!((far - 1.0).abs() < 1e-30);
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let g = GridSpec::square(6, 0.0, 1.0).unwrap();
        let d = Sym3::from_diagonal(&Vector3::new(3.0, 1.0, 1.0));
        let w = WaterTensorField::new(g, vec![d; g.len()]).unwrap();
        let t = derive_tissue_fields(&w, Estimator::FractionalAnisotropy, rates()).unwrap();
        assert!(t.grad_q.iter().all(|v| v.norm() == 0.0));
        assert!(t.df.iter().all(|m| (m.trace() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gradient_exact_on_linear_data() {
        let g = GridSpec::new(7, 5, 0.0, 0.0, 0.3, 0.2).unwrap();
        let field: Vec<f64> = (0..g.len())
            .map(|k| {
                let (x, y) = g.center(k % g.nx, k / g.nx);
                0.1 + 0.05 * x - 0.02 * y
            })
            .collect();
        for v in gradient(&field, &g) {
            assert!((v.x - 0.05).abs() < 1e-12 && (v.y + 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn strand_field_is_concentrated_at_seed() {
        let g = GridSpec::square(30, 0.0, 3.0).unwrap();
        let w = synth_fiber_strand(3.0, 0.1, 1.0, &g).unwrap();
        // centre (0.55, 1.55) lies inside the tract
        assert_eq!(w.at(5, 15)[(0, 0)], 6.0);
        let t = derive_tissue_fields(&w, Estimator::FractionalAnisotropy, rates()).unwrap();
        assert!(t.q.iter().all(|&q| (0.0..1.0).contains(&q)));
    }

    #[test]
    fn tensor_file_round_trip_and_errors() {
        let g = GridSpec::new(3, 4, -1.0, 2.0, 0.5, 0.25).unwrap();
        let w = synth_fiber_strand(1.5, 0.2, 1.0, &g).unwrap();
        let back = WaterTensorField::parse(&w.to_text()).unwrap();
        assert_eq!(back.grid, w.grid);
        assert_eq!(back.tensors, w.tensors);

        let short = "TENSORFIELD2D 3 3 0 0 1 1\n1 0 0 1 0 1\n1 0 0 1 0\n";
        match WaterTensorField::parse(short).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e:?}"),
        }
        let few = "TENSORFIELD2D 3 3 0 0 1 1\n1 0 0 1 0 1\n";
        assert!(matches!(WaterTensorField::parse(few), Err(Error::Parse { .. })));
        let bad_header = "TENSORFIELD 3 3 0 0 1 1\n";
        assert!(matches!(WaterTensorField::parse(bad_header), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn invalid_tensor_reports_cell() {
        let g = GridSpec::square(3, 0.0, 1.0).unwrap();
        let mut t = vec![Sym3::identity(); 9];
        t[g.index(2, 1)] = Sym3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        match WaterTensorField::new(g, t).unwrap_err() {
            Error::Cell { i, j, .. } => assert_eq!((i, j), (2, 1)),
            e => panic!("{e:?}"),
        }
    }
}
