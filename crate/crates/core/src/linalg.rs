//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest singular value of an `n x k` matrix with `k <= n`.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().min()
}

/// Orthonormal basis for the column span (thin QR). Columns must be independent.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    let qr = m.clone().qr();
    qr.q().columns(0, m.ncols()).into_owned()
}

/// Thin QR returning `(Q, diag(R))`, used for growth-rate bookkeeping.
pub fn qr_with_diag(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let k = m.ncols();
    let qr = m.clone().qr();
    let mut q = qr.q().columns(0, k).into_owned();
    let r = qr.r();
    let mut diag = Vec::with_capacity(k);
    // fix signs so that diag(R) > 0
    for j in 0..k {
        let d = r[(j, j)];
        if d < 0.0 {
            q.column_mut(j).neg_mut();
        }
        diag.push(d.abs());
    }
    (q, diag)
}

/// Orthonormal basis of the orthogonal complement of `span(basis)`,
/// where `basis` has orthonormal columns.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    // eigenvectors of B B^T with eigenvalue ~0
    let eig = (basis * basis.transpose()).symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let cols: Vec<DVector<f64>> = idx[..n - k].iter().map(|&j| eig.eigenvectors.column(j).into_owned()).collect();
    orthonormalize(&DMatrix::from_columns(&cols))
}

/// Orthonormal basis of the null space of `m` (numerical rank by `tol`).
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let ncols = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(ncols, ncols);
    }
    // null(m) = complement of row space
    let mt = m.transpose();
    let svd = mt.clone().svd(true, false);
    let u = svd.u.expect("svd u");
    let scale = svd.singular_values.max().max(1.0);
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&j| svd.singular_values[j] > tol * scale)
        .map(|j| u.column(j).into_owned())
        .collect();
    if cols.is_empty() {
        return DMatrix::identity(ncols, ncols);
    }
    let row_space = orthonormalize(&DMatrix::from_columns(&cols));
    orthogonal_complement(&row_space)
}

/// Sine of the largest principal angle between two subspaces given by
/// orthonormal bases of equal dimension.
pub fn subspace_sin_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), b.nrows());
    if a.ncols() == 0 && b.ncols() == 0 {
        return 0.0;
    }
    if a.ncols() != b.ncols() {
        return 1.0;
    }
    let resid = a - b * (b.transpose() * a);
    spectral_norm(&resid).min(1.0)
}

/// Largest principal angle in radians.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    subspace_sin_angle(a, b).asin()
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Random unit vector inside the column span of an orthonormal `basis`.
pub fn random_in_span<R: Rng + ?Sized>(rng: &mut R, basis: &DMatrix<f64>) -> DVector<f64> {
    if basis.ncols() == 0 {
        return DVector::zeros(basis.nrows());
    }
    let c = random_unit_vector(rng, basis.ncols());
    basis * c
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn complement_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = orthonormalize(&random_matrix(&mut rng, 5, 2));
        let c = orthogonal_complement(&b);
        assert_eq!(c.ncols(), 3);
        assert!((b.transpose() * &c).amax() < 1e-12);
        assert!((c.transpose() * &c - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn angle_between_equal_spans_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = orthonormalize(&random_matrix(&mut rng, 4, 2));
        let mix = random_matrix(&mut rng, 2, 2);
        let b = orthonormalize(&(&a * mix));
        assert!(subspace_angle(&a, &b) < 1e-12);
    }

    #[test]
    fn angle_between_axes() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let t = 0.3_f64;
        let b = DMatrix::from_column_slice(2, 1, &[t.cos(), t.sin()]);
        assert!((subspace_angle(&a, &b) - t).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn complement_completes_the_basis(seed in 0u64..1000, n in 2usize..7, k in 1usize..6) {
            proptest::prop_assume!(k < n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = orthonormalize(&random_matrix(&mut rng, n, k));
            let c = orthogonal_complement(&b);
            proptest::prop_assert_eq!(c.ncols(), n - k);
            proptest::prop_assert!((b.transpose() * &c).amax() < 1e-12);
        }
    }

    #[test]
    fn null_space_of_rank_one() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let ns = null_space(&m, 1e-12);
        assert_eq!(ns.ncols(), 2);
        assert!((&m * &ns).amax() < 1e-12);
    }
}
