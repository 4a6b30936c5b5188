//! Small dense linear algebra shared by closures and the solver.

use nalgebra::{Complex, DMatrix, DVector, Matrix3, Schur, SymmetricEigen, Vector3, SVD};

pub type Sym3 = Matrix3<f64>;

/// Eigenvalues of a symmetric 3x3 matrix, ascending.
pub fn sym3_eigenvalues(m: &Sym3) -> [f64; 3] {
    let mut e: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    [e[0], e[1], e[2]]
}

pub fn sym3_min_eigenvalue(m: &Sym3) -> f64 {
    sym3_eigenvalues(m)[0]
}

pub fn symmetrize(m: &Sym3) -> Sym3 {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Sym3, tol: f64) -> bool {
    (m - m.transpose()).abs().max() <= tol
}

pub fn outer(a: &Vector3<f64>, b: &Vector3<f64>) -> Sym3 {
    a * b.transpose()
}

/// Eigen-decomposition of a real square matrix restricted to real spectra.
///
/// Eigenvalues come from a real Schur form. Numerically coincident eigenvalues
/// are grouped into clusters; each cluster's eigenvectors are the right
/// singular vectors of `A - lambda I` belonging to the smallest singular
/// values. A cluster whose null space is smaller than its multiplicity is
/// defective, which shows up as a vanishing smallest singular value of the
/// (unit-column) eigenvector matrix.
#[derive(Debug, Clone)]
pub struct EigenReport {
    /// Eigenvalues sorted by real part.
    pub values: Vec<Complex<f64>>,
    pub max_imag: f64,
    /// Smallest singular value of the unit-column eigenvector matrix.
    pub min_singular: f64,
    pub diagonalizable: bool,
    pub basis: Option<CharBasis>,
}

/// Right/left eigenvectors grouped by eigenvalue cluster.
#[derive(Debug, Clone)]
pub struct CharBasis {
    /// Unit-length right eigenvectors as columns.
    pub right: DMatrix<f64>,
    /// Inverse of `right`.
    pub left: DMatrix<f64>,
    /// `(first column, number of columns)` per cluster.
    pub clusters: Vec<(usize, usize)>,
    pub speeds: Vec<f64>,
}

pub const DIAGONALIZABLE_THRESHOLD: f64 = 1e-8;

const CLUSTER_TOL: f64 = 1e-5;
const IMAG_TOL: f64 = 1e-7;

pub fn eigen_report(a: &DMatrix<f64>) -> EigenReport {
    let n = a.nrows();
    let scale = a.abs().max().max(1.0);
    let mut values: Vec<Complex<f64>> = match Schur::try_new(a.clone(), 1e-15, 10_000) {
        Some(s) => s.complex_eigenvalues().iter().copied().collect(),
        None => {
            return EigenReport {
                values: Vec::new(),
                max_imag: f64::INFINITY,
                min_singular: 0.0,
                diagonalizable: false,
                basis: None,
            }
        }
    };
    values.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let max_imag = values.iter().map(|c| c.im.abs()).fold(0.0, f64::max);

    if max_imag > IMAG_TOL * scale {
        return EigenReport { values, max_imag, min_singular: 0.0, diagonalizable: false, basis: None };
    }

    let reals: Vec<f64> = values.iter().map(|c| c.re).collect();
    let clusters = cluster(&reals, CLUSTER_TOL * scale);

    let mut right = DMatrix::<f64>::zeros(n, n);
    let mut speeds = Vec::with_capacity(n);
    let mut ranges = Vec::with_capacity(clusters.len());
    let mut complete = true;
    let mut col = 0;
    for members in &clusters {
        let m = members.len();
        let mean = members.iter().map(|&k| reals[k]).sum::<f64>() / m as f64;
        let spread = members.iter().map(|&k| (reals[k] - mean).abs()).fold(0.0, f64::max);
        let shifted = a - DMatrix::<f64>::identity(n, n) * mean;
        let svd = SVD::new(shifted, false, true);
        let v_t = svd.v_t.expect("v_t requested");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
        let null_tol = 1e-8 * scale + 4.0 * spread;
        let nullity = order.iter().filter(|&&k| svd.singular_values[k] <= null_tol).count();
        if nullity < m {
            complete = false;
        }
        for (slot, &k) in order.iter().take(m).enumerate() {
            // a defective cluster repeats its last genuine eigenvector
            let src = if slot < nullity.max(1) { k } else { order[nullity.max(1) - 1] };
            let v = v_t.row(src).transpose();
            right.set_column(col, &v);
            speeds.push(mean);
            col += 1;
        }
        ranges.push((col - m, m));
    }

    let min_singular = {
        let s = SVD::new(right.clone(), false, false).singular_values;
        s.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let diagonalizable = complete && min_singular > DIAGONALIZABLE_THRESHOLD;
    let basis = if diagonalizable {
        right.clone().try_inverse().map(|left| CharBasis { right, left, clusters: ranges, speeds })
    } else {
        None
    };
    EigenReport { values, max_imag, min_singular, diagonalizable, basis }
}

// Greedy grouping of sorted values whose consecutive gaps are below `tol`.
fn cluster(sorted: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (k, &x) in sorted.iter().enumerate() {
        match out.last_mut() {
            Some(group) if (x - sorted[*group.last().unwrap()]).abs() <= tol => group.push(k),
            _ => out.push(vec![k]),
        }
    }
    out
}

/// Characteristic basis of `B G^{-1}` with `B` symmetric and `G` symmetric
/// positive definite. The product is similar to the symmetric matrix
/// `G^{-1/2} B G^{-1/2}`, so the decomposition is always real and complete.
pub fn symmetrizable_basis(b: &DMatrix<f64>, g: &DMatrix<f64>) -> Option<CharBasis> {
    let n = g.nrows();
    let ge = SymmetricEigen::new(g.clone());
    if ge.eigenvalues.iter().any(|&l| l <= 0.0) {
        return None;
    }
    let sqrt_d = DMatrix::from_diagonal(&ge.eigenvalues.map(f64::sqrt));
    let inv_sqrt_d = DMatrix::from_diagonal(&ge.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let g_half = &ge.eigenvectors * sqrt_d * ge.eigenvectors.transpose();
    let g_inv_half = &ge.eigenvectors * inv_sqrt_d * ge.eigenvectors.transpose();
    let sym = &g_inv_half * b * &g_inv_half;
    let sym = (&sym + sym.transpose()) * 0.5;
    let se = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| se.eigenvalues[x].total_cmp(&se.eigenvalues[y]));
    let mut right = DMatrix::<f64>::zeros(n, n);
    let mut left = DMatrix::<f64>::zeros(n, n);
    let mut speeds = Vec::with_capacity(n);
    for (col, &k) in order.iter().enumerate() {
        let w = se.eigenvectors.column(k);
        let r: DVector<f64> = &g_half * w;
        let l: DVector<f64> = &g_inv_half * w;
        let norm = r.norm();
        right.set_column(col, &(r / norm));
        left.set_row(col, &(l * norm).transpose());
        speeds.push(se.eigenvalues[k]);
    }
    let scale = speeds.iter().map(|s| s.abs()).fold(1.0, f64::max);
    let groups = cluster(&speeds, 1e-10 * scale);
    let mut clusters = Vec::with_capacity(groups.len());
    for group in groups {
        clusters.push((group[0], group.len()));
    }
    Some(CharBasis { right, left, clusters, speeds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_eigenvalues_sorted() {
        let m = Sym3::from_diagonal(&Vector3::new(3.0, -1.0, 2.0));
        assert_eq!(sym3_eigenvalues(&m), [-1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonalizable_matrix_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 0.0, 0.0, -1.0]);
        let rep = eigen_report(&a);
        assert!(rep.diagonalizable);
        let basis = rep.basis.unwrap();
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(basis.speeds.clone()));
        let back = &basis.right * lambda * &basis.left;
        assert!((back - a).abs().max() < 1e-12);
    }

    #[test]
    fn repeated_but_complete_eigenvalue_is_diagonalizable() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let rep = eigen_report(&a);
        assert!(rep.diagonalizable);
        assert_eq!(rep.basis.unwrap().clusters, vec![(0, 2), (2, 1)]);
    }

    #[test]
    fn jordan_blocks_are_flagged() {
        let j2 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(!eigen_report(&j2).diagonalizable);
        let j3 = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let rep = eigen_report(&j3);
        assert!(!rep.diagonalizable);
        assert!(rep.values.iter().all(|c| c.norm() < 1e-4));
    }

    #[test]
    fn complex_spectrum_has_no_basis() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let rep = eigen_report(&rot);
        assert!(rep.max_imag > 0.9);
        assert!(rep.basis.is_none());
    }

    #[test]
    fn symmetrizable_basis_diagonalizes_product() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.3]);
        let m = &b * g.clone().try_inverse().unwrap();
        let basis = symmetrizable_basis(&b, &g).unwrap();
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(basis.speeds.clone()));
        let back = &basis.right * lambda * &basis.left;
        assert!((back - m).abs().max() < 1e-12);
        for c in 0..2 {
            assert!((basis.right.column(c).norm() - 1.0).abs() < 1e-14);
        }
    }
}
