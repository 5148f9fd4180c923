//! Dense symmetric linear algebra shared by the estimators and the oracle:
//! sorted eigendecompositions, the PSD eigenvalue clamp, SPD solves and
//! rank-revealing pseudo-inverses.

use nalgebra::{DMatrix, DVector};

use crate::error::{NpivError, Result};

/// Relative tolerance below which negative eigenvalues are treated as
/// rounding noise and clamped to zero.
pub const PSD_CLAMP_REL_TOL: f64 = 1e-10;

/// Relative singular-value cutoff for all rank decisions.
pub const RANK_REL_CUTOFF: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and eigenvectors in matching column order.
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(mat: &DMatrix<f64>) -> SortedEigen {
    let eig = mat.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SortedEigen { values, vectors }
}

/// Clamps small negative eigenvalues to zero in place.
///
/// Eigenvalues in `[-PSD_CLAMP_REL_TOL * scale, 0)` become 0; anything more
/// negative is a genuine PSD violation and is reported as an error. `scale`
/// should be a magnitude reference for the matrix (kappa_sq for Gram
/// matrices, the largest diagonal entry otherwise).
pub fn clamp_psd_eigenvalues(values: &mut DVector<f64>, scale: f64) -> Result<()> {
    let tol = PSD_CLAMP_REL_TOL * scale.max(f64::MIN_POSITIVE);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -tol {
                return Err(NpivError::NotPsd {
                    min_eig: *v,
                    tol,
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Largest relative asymmetry `|m - m^T| / max(1, |m|_max)`.
pub fn relative_asymmetry(mat: &DMatrix<f64>) -> f64 {
    let mut max_abs = 0.0f64;
    let mut max_diff = 0.0f64;
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            max_abs = max_abs.max(mat[(i, j)].abs()).max(mat[(j, i)].abs());
            max_diff = max_diff.max((mat[(i, j)] - mat[(j, i)]).abs());
        }
        max_abs = max_abs.max(mat[(i, i)].abs());
    }
    max_diff / max_abs.max(1.0)
}

pub fn check_square_symmetric(mat: &DMatrix<f64>) -> Result<()> {
    if mat.nrows() != mat.ncols() {
        return Err(NpivError::DimensionMismatch {
            context: "square matrix",
            expected: mat.nrows(),
            got: mat.ncols(),
        });
    }
    let asym = relative_asymmetry(mat);
    if asym > 1e-10 {
        return Err(NpivError::NotSymmetric(asym));
    }
    Ok(())
}

/// Copies the upper triangle onto the lower one, making the matrix exactly
/// symmetric.
pub fn mirror_upper(mat: &mut DMatrix<f64>) {
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            mat[(j, i)] = mat[(i, j)];
        }
    }
}

/// Solves `A x = b` for symmetric positive-definite `A` via Cholesky.
///
/// On breakdown retries once with `1e-10 * trace / n` added to the diagonal
/// (rank deficiency at the rounding level), logging the retry.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let n = a.nrows();
    let jitter = 1e-10 * a.trace() / n as f64;
    log::warn!("SPD factorization failed; retrying with diagonal jitter {jitter:e}");
    let mut aj = a.clone();
    for i in 0..n {
        aj[(i, i)] += jitter;
    }
    match aj.cholesky() {
        Some(chol) => Ok(chol.solve(b)),
        None => Err(NpivError::FactorizationFailed(" (after jitter retry)")),
    }
}

pub fn spd_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let sol = spd_solve(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(DVector::from_column_slice(sol.as_slice()))
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `RANK_REL_CUTOFF * sigma_max` treated as zero.
pub fn pseudo_inverse(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = mat.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = RANK_REL_CUTOFF * smax;
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            sinv[(i, i)] = 1.0 / s;
        }
    }
    vt.transpose() * sinv * u.transpose()
}

/// Symmetric PSD square root via eigendecomposition (negative rounding noise
/// clamped first).
pub fn psd_sqrt(mat: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let mut eig = sym_eigen(mat);
    clamp_psd_eigenvalues(&mut eig.values, scale)?;
    let mut out = DMatrix::zeros(mat.nrows(), mat.ncols());
    for (j, &v) in eig.values.iter().enumerate() {
        let col = eig.vectors.column(j);
        let s = v.sqrt();
        for r in 0..mat.nrows() {
            for c in 0..mat.ncols() {
                out[(r, c)] += s * col[r] * col[c];
            }
        }
    }
    mirror_upper(&mut out);
    Ok(out)
}

/// Ordinary least-squares fit of `y = intercept + slope * x`, returning
/// `(slope, intercept, slope standard error)`.
pub fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = (x.len().saturating_sub(2)).max(1) as f64;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let se = (sse / dof / sxx).sqrt();
    (slope, intercept, se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let eig = sym_eigen(&m);
        assert_relative_eq!(eig.values[0], 5.0, epsilon = 1e-12);
        assert_relative_eq!(eig.values[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(eig.values[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn clamp_rejects_genuinely_negative() {
        let mut v = DVector::from_vec(vec![1.0, -1e-3]);
        assert!(clamp_psd_eigenvalues(&mut v, 1.0).is_err());
        let mut v = DVector::from_vec(vec![1.0, -1e-12]);
        clamp_psd_eigenvalues(&mut v, 1.0).unwrap();
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn pseudo_inverse_recovers_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let p = pseudo_inverse(&m);
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 1)], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn spd_solve_matches_direct() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = spd_solve_vec(&a, &b).unwrap();
        let r = &a * &x - &b;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn ols_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let (slope, intercept, se) = ols_line(&x, &y);
        assert_relative_eq!(slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(intercept, 1.0, epsilon = 1e-12);
        assert!(se < 1e-12);
    }
}
