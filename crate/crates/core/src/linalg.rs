//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;

pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// 90-degree rotation `[[0, -1], [1, 0]]`, the real form of multiplication by `j`.
pub fn rot90() -> RMat {
    RMat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

/// Rotation matrix by `angle` radians.
pub fn rotation(angle: f64) -> RMat {
    let (s, c) = angle.sin_cos();
    RMat::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Hermitian part `(A + A*) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Skew part `S` such that `A = H + jS` with `S` Hermitian.
pub fn skew_part(a: &CMat) -> CMat {
    (a - a.adjoint()) * Complex64::new(0.0, -0.5)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(h: &CMat) -> Vec<f64> {
    let n = h.nrows();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![h[(0, 0)].re];
    }
    if n == 2 {
        let a = h[(0, 0)].re;
        let d = h[(1, 1)].re;
        let b = h[(0, 1)].norm();
        let m = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        return vec![m - r, m + r];
    }
    let mut ev: Vec<f64> = h.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Full Hermitian eigendecomposition, eigenvalues ascending with matching columns.
pub fn hermitian_eigen(h: &CMat) -> (Vec<f64>, CMat) {
    let n = h.nrows();
    let eig = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Singular values, descending.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Eigenvalues of a general complex square matrix.
pub fn eigenvalues(a: &CMat) -> Vec<Complex64> {
    let n = a.nrows();
    match n {
        0 => Vec::new(),
        1 => vec![a[(0, 0)]],
        2 => {
            let tr = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = (tr * tr * 0.25 - det).sqrt();
            vec![tr * 0.5 + disc, tr * 0.5 - disc]
        }
        _ => {
            let m = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| faer::c64::new(a[(i, j)].re, a[(i, j)].im));
            let ev = m.eigenvalues().expect("complex eigenvalue iteration did not converge");
            ev.into_iter().map(|z| Complex64::new(z.re, z.im)).collect()
        }
    }
}

/// Eigenvalues of a real square matrix.
pub fn real_eigenvalues(a: &RMat) -> Vec<Complex64> {
    let n = a.nrows();
    if n == 0 {
        return Vec::new();
    }
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let ev = m.eigenvalues().expect("real eigenvalue iteration did not converge");
    ev.into_iter().map(|z| Complex64::new(z.re, z.im)).collect()
}

pub fn inverse(a: &CMat) -> Option<CMat> {
    if a.nrows() == 0 {
        return Some(a.clone());
    }
    a.clone().try_inverse()
}

pub fn determinant(a: &CMat) -> Complex64 {
    if a.nrows() == 0 {
        return Complex64::new(1.0, 0.0);
    }
    a.determinant()
}

/// Block-diagonal stack of (possibly rectangular) blocks.
pub fn block_diag<T: nalgebra::Scalar + Zero>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Largest absolute entry; a cheap scale for relative tolerances.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn relative_error(a: &CMat, b: &CMat) -> f64 {
    let diff = (a - b).norm();
    let scale = a.norm().max(b.norm()).max(1e-300);
    diff / scale
}

/// Real 2x2 form `[[re, -im], [im, re]]` of a complex scalar.
pub fn complex_to_real2(z: Complex64) -> RMat {
    RMat::from_row_slice(2, 2, &[z.re, -z.im, z.im, z.re])
}
