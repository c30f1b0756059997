//! Small dense linear-algebra helpers shared by the fitting and set modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `M (G + lambda I) = T` for `M`, i.e. the ridge-regularized normal
/// equations of a least-squares problem written in snapshot form.
///
/// `G` must be symmetric positive semidefinite; `lambda > 0` makes the shifted
/// matrix positive definite up to conditioning.
pub fn ridge_solve(t: &DMatrix<f64>, g: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    assert_eq!(g.nrows(), g.ncols(), "Gram matrix must be square");
    assert_eq!(
        t.ncols(),
        g.nrows(),
        "T column count must match Gram dimension"
    );
    let mut g_reg = g.clone();
    for i in 0..g_reg.nrows() {
        g_reg[(i, i)] += lambda;
    }
    // M = T (G + lambda I)^-1  <=>  (G + lambda I)^T M^T = T^T, and G is symmetric.
    let chol = g_reg.cholesky().ok_or(Error::SingularGram)?;
    let mt = chol.solve(&t.transpose());
    Ok(mt.transpose())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Induced infinity norm: maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral radius via the complex eigenvalues of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    assert_eq!(m.nrows(), m.ncols(), "spectral radius needs a square matrix");
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "spectral radius input".into(),
        });
    }
    let eigs = m.clone().complex_eigenvalues();
    Ok(eigs.iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Row-major nested representation used by the JSON artifacts.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Rebuilds a matrix from the row-major nested representation.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ncols = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Dimension {
                context: format!("row {i} of row-major matrix"),
                expected: ncols,
                got: r.len(),
            });
        }
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

/// Dot product of two vectors, asserting equal lengths.
pub fn dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.dot(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ridge_solve_recovers_exact_operator() {
        // M* G = T with a well-conditioned G.
        let g = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let m_star = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.25]);
        let t = &m_star * &g;
        let m = ridge_solve(&t, &g, 1e-12).unwrap();
        assert_relative_eq!(m, m_star, epsilon = 1e-9);
    }

    #[test]
    fn inf_norm_is_max_abs_row_sum() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.25]);
        assert_relative_eq!(inf_norm(&m), 3.0);
    }

    #[test]
    fn spectral_radius_of_rotation_scaled() {
        // 0.9 * rotation has a complex pair of modulus 0.9.
        let c = 0.9 * (0.3f64).cos();
        let s = 0.9 * (0.3f64).sin();
        let m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert_relative_eq!(spectral_radius(&m).unwrap(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn row_major_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rows = to_rows(&m);
        assert_eq!(rows[1], vec![4.0, 5.0, 6.0]);
        let back = from_rows(&rows).unwrap();
        assert_eq!(m, back);
    }
}

/// Caps the spectral radius at `rho_max` by rescaling the diagonal blocks of
/// the real Schur form whose eigenvalues exceed it. Only the offending modes
/// move; returns the input unchanged when it is already within the cap.
pub fn cap_spectral_radius(m: &DMatrix<f64>, rho_max: f64) -> Result<DMatrix<f64>> {
    assert!(rho_max > 0.0 && rho_max < 1.0);
    let rho = spectral_radius(m)?;
    if rho <= rho_max {
        return Ok(m.clone());
    }
    let n = m.nrows();
    let schur = m.clone().schur();
    let (q, mut t) = schur.unpack();
    let mut i = 0;
    while i < n {
        let two_by_two = i + 1 < n && t[(i + 1, i)] != 0.0;
        if two_by_two {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let det = a * d - b * c;
            let tr = a + d;
            let disc = tr * tr - 4.0 * det;
            let modulus = if disc < 0.0 {
                det.sqrt()
            } else {
                let r1 = (tr + disc.sqrt()) / 2.0;
                let r2 = (tr - disc.sqrt()) / 2.0;
                r1.abs().max(r2.abs())
            };
            if modulus > rho_max {
                let s = rho_max / modulus;
                for (r, cidx) in [(i, i), (i, i + 1), (i + 1, i), (i + 1, i + 1)] {
                    t[(r, cidx)] *= s;
                }
            }
            i += 2;
        } else {
            if t[(i, i)].abs() > rho_max {
                t[(i, i)] *= rho_max / t[(i, i)].abs();
            }
            i += 1;
        }
    }
    Ok(&q * t * q.transpose())
}

#[cfg(test)]
mod cap_tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cap_leaves_stable_matrices_untouched() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.4]);
        let capped = cap_spectral_radius(&m, 0.999).unwrap();
        assert_eq!(m, capped);
    }

    #[test]
    fn cap_pulls_offending_modes_only() {
        // Block diagonal: an unstable rotation pair and a fast stable mode.
        let c = 1.02 * (0.3f64).cos();
        let s = 1.02 * (0.3f64).sin();
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 0.3],
        );
        let capped = cap_spectral_radius(&m, 0.995).unwrap();
        assert_relative_eq!(spectral_radius(&capped).unwrap(), 0.995, epsilon = 1e-9);
        // The fast mode is untouched.
        let eigs = capped.clone().complex_eigenvalues();
        assert!(eigs.iter().any(|e| (e.norm() - 0.3).abs() < 1e-9));
        // The rotation angle of the slow pair survives.
        let slow = eigs.iter().find(|e| (e.norm() - 0.995).abs() < 1e-9).unwrap();
        assert_relative_eq!(slow.im.atan2(slow.re).abs(), 0.3, epsilon = 1e-9);
    }

    #[test]
    fn cap_perturbation_is_small_for_near_unit_modes() {
        let c = 1.0001 * (0.1f64).cos();
        let s = 1.0001 * (0.1f64).sin();
        let m = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let capped = cap_spectral_radius(&m, 0.999).unwrap();
        assert!((&capped - &m).norm() < 2e-3);
        assert!(spectral_radius(&capped).unwrap() <= 0.999 + 1e-12);
    }
}
