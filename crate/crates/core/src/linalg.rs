//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorization with an instructive error on failure.
pub fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::SingularMatrix {
        context: context.to_string(),
    })
}

/// Quadratic form `v^T M^{-1} v` given a Cholesky factor of `M`.
pub fn inv_quad(chol: &Cholesky<f64, Dyn>, v: &DVector<f64>) -> f64 {
    chol.solve(v).dot(v)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigval(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Orthonormal basis (columns) for the span of `vectors`, via SVD with a
/// relative rank tolerance. Returns a `d x r` matrix; `r` may be zero.
pub fn orthonormal_span_basis(vectors: &[DVector<f64>], rel_tol: f64) -> DMatrix<f64> {
    if vectors.is_empty() {
        return DMatrix::zeros(0, 0);
    }
    let d = vectors[0].len();
    let mut stacked = DMatrix::zeros(d, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        stacked.set_column(j, v);
    }
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("requested U");
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if max_sv == 0.0 {
        return DMatrix::zeros(d, 0);
    }
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > rel_tol * max_sv)
        .count();
    u.columns(0, rank).into_owned()
}

/// Minimum eigenvalue of `M` restricted to the column span of `basis`
/// (assumed orthonormal): the smallest eigenvalue of `B^T M B`. An empty
/// span imposes no constraint, so the result is `+inf`.
pub fn span_min_eigval(m: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    span_min_eig_pair(m, basis).0
}

/// Like [`span_min_eigval`], but also returns the achieving unit direction
/// mapped back into the full space (the zero vector for an empty span).
pub fn span_min_eig_pair(m: &DMatrix<f64>, basis: &DMatrix<f64>) -> (f64, DVector<f64>) {
    if basis.ncols() == 0 {
        return (f64::INFINITY, DVector::zeros(m.nrows()));
    }
    let projected = basis.transpose() * m * basis;
    let eig = projected.symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    (
        eig.eigenvalues[best],
        basis * eig.eigenvectors.column(best),
    )
}
