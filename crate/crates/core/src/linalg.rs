use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution via SVD. Singular values below
/// `rcond * s_max` are treated as zero. Returns the solution and the
/// numerical rank.
pub(crate) fn lstsq_svd(a: DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Option<(DVector<f64>, usize)> {
    let svd = a.svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if !(s_max > 0.0) {
        return None;
    }
    let eps = rcond * s_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    svd.solve(b, eps).ok().map(|x| (x, rank))
}
