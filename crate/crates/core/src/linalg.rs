//! Small dense linear-algebra helpers shared by the regression and kernel code.

use nalgebra::{DMatrix, DVector};

/// `[1, x]` design matrix.
pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Solves the symmetric positive (semi)definite system `a z = b`. When `a` is
/// numerically rank deficient a ridge of `1e-8·trace(a)/dim` is added to the
/// diagonal; the second return value reports whether that happened.
pub(crate) fn solve_spd_with_ridge(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    let dim = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let deficient = !(min > 1e-12 * max) || max == 0.0;
    let mut system = a.clone();
    if deficient {
        let ridge = 1e-8 * a.trace().max(f64::MIN_POSITIVE) / dim as f64;
        for k in 0..dim {
            system[(k, k)] += ridge;
        }
    }
    let chol = system.cholesky()?;
    Some((chol.solve(b), deficient))
}

/// Pivoted Cholesky factor of a PSD matrix: `k[:, piv] = g · l_pᵀ` with `g`
/// of size `n × r`, stopping once the largest remaining diagonal drops below
/// `tol · max diag`. Columns of `g` are exactly `k[:, piv] · l_p⁻ᵀ`, where
/// `l_p = g[piv, :]` is lower triangular.
#[derive(Debug, Clone)]
pub(crate) struct PivotedCholesky {
    pub factor: DMatrix<f64>,
    pub pivots: Vec<usize>,
}

impl PivotedCholesky {
    pub fn new(k: &DMatrix<f64>, tol: f64) -> PivotedCholesky {
        let n = k.nrows();
        let mut diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
        let max_diag = diag.iter().fold(0.0f64, |m, &v| m.max(v));
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let mut pivots = Vec::new();
        let mut used = vec![false; n];
        if max_diag > 0.0 {
            let threshold = tol * max_diag;
            while pivots.len() < n {
                let (piv, d) = (0..n)
                    .filter(|&i| !used[i])
                    .map(|i| (i, diag[i]))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("remaining index");
                if d <= threshold {
                    break;
                }
                let root = d.sqrt();
                let mut col: Vec<f64> = k.column(piv).iter().copied().collect();
                for prev in &columns {
                    let c = prev[piv];
                    if c != 0.0 {
                        for (v, p) in col.iter_mut().zip(prev) {
                            *v -= p * c;
                        }
                    }
                }
                for (i, v) in col.iter_mut().enumerate() {
                    *v = if used[i] { 0.0 } else { *v / root };
                }
                col[piv] = root;
                for (dv, c) in diag.iter_mut().zip(&col) {
                    *dv -= c * c;
                }
                diag[piv] = 0.0;
                used[piv] = true;
                columns.push(col);
                pivots.push(piv);
            }
        }
        let r = columns.len();
        let mut factor = DMatrix::zeros(n, r);
        for (j, col) in columns.iter().enumerate() {
            factor.column_mut(j).copy_from_slice(col);
        }
        PivotedCholesky { factor, pivots }
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// Coefficients `v` on the pivot points with `gᵀ v = β`, i.e.
    /// `v = l_p⁻ᵀ β`.
    pub fn pivot_coefficients(&self, beta: &[f64]) -> Vec<f64> {
        let r = self.rank();
        let lp = DMatrix::from_fn(r, r, |i, j| self.factor[(self.pivots[i], j)]);
        let rhs = DVector::from_column_slice(beta);
        let v = lp
            .transpose()
            .solve_upper_triangular(&rhs)
            .expect("pivot block has positive diagonal");
        v.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_cholesky_reconstructs_full_rank_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]);
        let pc = PivotedCholesky::new(&a, 1e-14);
        assert_eq!(pc.rank(), 3);
        let rec = &pc.factor * pc.factor.transpose();
        assert!((rec - &a).abs().max() < 1e-12);
    }

    #[test]
    fn pivoted_cholesky_stops_at_numerical_rank() {
        let b = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let a = &b * b.transpose();
        let pc = PivotedCholesky::new(&a, 1e-12);
        assert_eq!(pc.rank(), 2);
        let rec = &pc.factor * pc.factor.transpose();
        assert!((rec - &a).abs().max() < 1e-10);
        // g = k[:, piv] l_p^{-T}
        let beta = [0.3, -1.2];
        let v = pc.pivot_coefficients(&beta);
        let g_beta = &pc.factor * DVector::from_column_slice(&beta);
        for i in 0..4 {
            let kv: f64 = pc.pivots.iter().zip(&v).map(|(&j, c)| a[(i, j)] * c).sum();
            assert!((kv - g_beta[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn ridge_fallback_on_singular_system() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[2.0, 2.0]);
        let (z, ridged) = solve_spd_with_ridge(&a, &b).unwrap();
        assert!(ridged);
        assert!(((&a * &z) - &b).norm() < 1e-6);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let (z, ridged) = solve_spd_with_ridge(&a, &b).unwrap();
        assert!(!ridged);
        assert!((z[0] - 1.0).abs() < 1e-14 && (z[1] - 2.0).abs() < 1e-14);
    }
}
