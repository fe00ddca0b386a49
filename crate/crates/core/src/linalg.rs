//! Small dense linear-algebra helpers shared by the geometric modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Frobenius inner product.
pub fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order (eigenvectors permuted to match).
pub fn sorted_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn lambda_max_sym(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Singular values in increasing order.
pub fn singular_values_asc(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    s
}

pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    singular_values_asc(a).last().copied().unwrap_or(0.0)
}

/// Modified Gram-Schmidt with one re-orthogonalization pass per column.
/// Returns `None` when a column loses more than `1 - 1e-10` of its norm
/// (rank deficiency).
pub fn orthonormalize(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut q = a.clone();
    for j in 0..q.ncols() {
        let original = q.column(j).norm();
        if original == 0.0 || !original.is_finite() {
            return None;
        }
        let mut v: DVector<f64> = q.column(j).into_owned();
        for _pass in 0..2 {
            for k in 0..j {
                let qk = q.column(k);
                let c = qk.dot(&v);
                v.axpy(-c, &qk, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= 1e-10 * original {
            return None;
        }
        q.set_column(j, &(v / norm));
    }
    Some(q)
}

/// Deviation of `QᵗQ` from the identity, Frobenius.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    (g - DMatrix::identity(q.ncols(), q.ncols())).norm()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}
