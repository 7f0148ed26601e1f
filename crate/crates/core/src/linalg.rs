//! Householder QR with column pivoting, used for rank-revealing least squares.

use nalgebra::{DMatrix, DVector};

/// Relative tolerance on |R_kk| against |R_11| below which a column is
/// treated as linearly dependent on the ones already selected.
pub const RANK_TOL: f64 = 1e-10;

/// Result of a pivoted least-squares solve.
pub struct PivotedSolve {
    pub coefficients: DVector<f64>,
    /// `(R'R)^{-1}` mapped back to the original column order.
    pub inverse_gram: DMatrix<f64>,
}

/// Solves `min ||a x - b||` for full-column-rank `a`. On rank deficiency
/// returns `Err` with the original indices of the columns that were not
/// selected by the pivoting.
pub fn pivoted_least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> std::result::Result<PivotedSolve, Vec<usize>> {
    let (m, n) = a.shape();
    let mut r = a.clone();
    let mut qtb = b.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut norms = vec![0.0; n];
    let mut leading = 0.0;

    for k in 0..n.min(m) {
        // Recompute remaining column norms exactly; p is small.
        for j in k..n {
            norms[j] = r.view((k, j), (m - k, 1)).norm_squared();
        }
        let (pivot, _) = (k..n).fold((k, -1.0), |best, j| {
            if norms[j] > best.1 {
                (j, norms[j])
            } else {
                best
            }
        });
        if pivot != k {
            r.swap_columns(k, pivot);
            perm.swap(k, pivot);
            norms.swap(k, pivot);
        }
        let alpha = r.view((k, k), (m - k, 1)).norm();
        if k == 0 {
            leading = alpha;
        }
        if leading == 0.0 || alpha <= RANK_TOL * leading {
            return Err(perm[k..].to_vec());
        }
        // Householder vector v with v[0] = r_kk - sign * alpha.
        let sign = if r[(k, k)] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..n {
                let dot: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..m {
                    r[(i, j)] -= f * v[i - k];
                }
            }
            let dot: f64 = (k..m).map(|i| v[i - k] * qtb[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                qtb[i] -= f * v[i - k];
            }
        }
    }
    if m < n {
        return Err(perm[m..].to_vec());
    }

    // Back substitution R z = Q'b, then invert R.
    let mut z = DVector::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|j| r[(i, j)] * z[j]).sum();
        z[i] = (qtb[i] - s) / r[(i, i)];
    }
    let mut rinv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        rinv[(j, j)] = 1.0 / r[(j, j)];
        for i in (0..j).rev() {
            let s: f64 = ((i + 1)..=j).map(|l| r[(i, l)] * rinv[(l, j)]).sum();
            rinv[(i, j)] = -s / r[(i, i)];
        }
    }
    let inv_piv = &rinv * rinv.transpose();

    let mut coefficients = DVector::zeros(n);
    let mut inverse_gram = DMatrix::zeros(n, n);
    for i in 0..n {
        coefficients[perm[i]] = z[i];
        for j in 0..n {
            inverse_gram[(perm[i], perm[j])] = inv_piv[(i, j)];
        }
    }
    Ok(PivotedSolve {
        coefficients,
        inverse_gram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_square_system() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let b = &a * &x;
        let sol = pivoted_least_squares(&a, &b).unwrap();
        assert!((sol.coefficients - x).norm() < 1e-12);
        let gram_inv = (a.transpose() * &a).try_inverse().unwrap();
        assert!((sol.inverse_gram - gram_inv).norm() < 1e-10);
    }

    #[test]
    fn detects_dependent_column() {
        let a = DMatrix::from_row_slice(4, 3, &[
            1.0, 0.0, 2.0, //
            1.0, 1.0, 2.0, //
            1.0, 2.0, 2.0, //
            1.0, 3.0, 2.0,
        ]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let dep = pivoted_least_squares(&a, &b).err().unwrap();
        assert_eq!(dep.len(), 1);
        assert!(dep[0] == 0 || dep[0] == 2);
    }
}
