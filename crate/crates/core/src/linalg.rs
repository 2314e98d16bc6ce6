//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest singular value. Zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // Gram matrix of the smaller side has the squared singular values as eigenvalues.
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let top = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &x| acc.max(x));
    top.max(0.0).sqrt()
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix, dropping eigenvalues
/// with magnitude below `rel_cutoff * max|eigenvalue|`.
pub fn pinv_symmetric(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let largest = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    let cutoff = rel_cutoff * largest;
    let inv = DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&l| {
            if l.abs() > cutoff && l != 0.0 {
                1.0 / l
            } else {
                0.0
            }
        }),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Column means.
pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Subtracts the column means from every row.
pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - means[j])
}
