//! Thin wrappers over nalgebra's dense decompositions.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
#[allow(unused_imports)]
use num_traits::Float;

use crate::Error;

const MAX_ITER: usize = 10_000;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as
/// matching columns.
pub(crate) fn sym_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), Error> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, MAX_ITER).ok_or(Error::Eigen)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

pub(crate) fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Least-squares, minimum-norm solution of `a x = b`; singular values below
/// `rel_tol * sigma_max` are dropped.
pub(crate) fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> Result<DVector<f64>, Error> {
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, MAX_ITER).ok_or(Error::Eigen)?;
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = (rel_tol * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, cut).map_err(|_| Error::Eigen)
}

/// Principal axes of a point cloud, strongest first, as the rows of a proper
/// rotation, together with the singular values of the centred cloud.
pub(crate) fn principal_frame(points: &[&[f64]], d: usize) -> Result<(DMatrix<f64>, Vec<f64>), Error> {
    let n = points.len();
    let mut centroid = [0.0; 3];
    for p in points {
        for c in 0..d {
            centroid[c] += p[c] / n as f64;
        }
    }
    let mut scatter = DMatrix::zeros(d, d);
    for p in points {
        for r in 0..d {
            for c in 0..d {
                scatter[(r, c)] += (p[r] - centroid[r]) * (p[c] - centroid[c]);
            }
        }
    }
    let (values, vectors) = sym_eigen(&scatter)?;
    let mut q = DMatrix::zeros(d, d);
    for row in 0..d {
        let col = d - 1 - row;
        for c in 0..d {
            q[(row, c)] = vectors[(c, col)];
        }
    }
    if q.determinant() < 0.0 {
        for c in 0..d {
            q[(d - 1, c)] = -q[(d - 1, c)];
        }
    }
    let sv = values.iter().rev().map(|&l| l.max(0.0).sqrt()).collect();
    Ok((q, sv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_ascending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 5.0]);
        let (v, vecs) = sym_eigen(&m).unwrap();
        assert_eq!(v, alloc::vec![-1.0, 2.0, 5.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn min_norm_on_rank_deficient() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = min_norm_solve(&a, &DVector::from_vec(alloc::vec![2.0, 2.0]), 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn principal_frame_of_line() {
        let pts: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]];
        let (q, sv) = principal_frame(&pts, 2).unwrap();
        assert!(sv[1] < 1e-12);
        assert!((q[(0, 0)].abs() - q[(0, 1)].abs()).abs() < 1e-12);
        assert!((q.determinant() - 1.0).abs() < 1e-12);
    }
}
