//! Dense linear-algebra helpers shared by the estimation modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{GstError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex64>;

/// Thin SVD with singular values sorted in descending order.
pub struct SortedSvd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub vt: Mat,
}

pub fn svd_sorted(a: &Mat) -> SortedSvd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = Mat::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt = Mat::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    SortedSvd { u, s, vt }
}

pub fn singular_values(a: &Mat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Number of singular values above `rel_tol` times the largest.
pub fn rank(a: &Mat, rel_tol: f64) -> usize {
    let s = singular_values(a);
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&x| x > rel_tol * max).count(),
        _ => 0,
    }
}

/// Orthonormal basis (as columns) of the right nullspace of `a`.
pub fn nullspace(a: &Mat, rel_tol: f64) -> Mat {
    let n = a.ncols();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    // pad to at least square so the SVD returns a complete right basis
    let rows = a.nrows().max(n);
    let mut padded = Mat::zeros(rows, n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = svd_sorted(&padded);
    let max = svd.s.first().copied().unwrap_or(0.0);
    let cols: Vec<usize> = (0..n)
        .filter(|&i| max == 0.0 || svd.s[i] <= rel_tol * max)
        .collect();
    Mat::from_fn(n, cols.len(), |r, c| svd.vt[(cols[c], r)])
}

/// Orthonormal basis (as columns) of the column space of `a`.
pub fn range_basis(a: &Mat, rel_tol: f64) -> Mat {
    if a.ncols() == 0 || a.nrows() == 0 {
        return Mat::zeros(a.nrows(), 0);
    }
    let svd = svd_sorted(a);
    let max = svd.s.first().copied().unwrap_or(0.0);
    let k = if max > 0.0 {
        svd.s.iter().filter(|&&x| x > rel_tol * max).count()
    } else {
        0
    };
    svd.u.columns(0, k).into_owned()
}

/// Orthogonal projector onto the column space of `a`.
pub fn projector_onto(a: &Mat, rel_tol: f64) -> Mat {
    let q = range_basis(a, rel_tol);
    &q * q.transpose()
}

pub fn frobenius(a: &Mat) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn inverse(a: &Mat) -> Result<Mat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| GstError::InvalidArgument("singular matrix".into()))
}

pub fn cond(a: &Mat) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Matrix exponential (scaling and squaring with Pade approximation).
pub fn expm(a: &Mat) -> Mat {
    a.clone().exp()
}

pub fn expm_c(a: &CMat) -> CMat {
    a.clone().exp()
}

fn norm1(a: &Mat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Principal square root by the product form of the Denman-Beavers iteration.
pub fn sqrtm(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let mut m = a.clone();
    let mut y = a.clone();
    for _ in 0..100 {
        let minv = inverse(&m)?;
        y = &y * (&id + &minv) * 0.5;
        m = (&id + (&m + &minv) * 0.5) * 0.5;
        if norm1(&(&m - &id)) < 1e-15 * n as f64 {
            return Ok(y);
        }
    }
    Err(GstError::NonPrincipalLog(
        "square root iteration did not converge".into(),
    ))
}

/// Principal matrix logarithm by inverse scaling and squaring.
pub fn logm(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    for ev in a.complex_eigenvalues().iter() {
        let scale = ev.norm();
        if scale < 1e-14 || (ev.re <= 0.0 && ev.im.abs() <= 1e-10 * scale.max(1.0)) {
            return Err(GstError::NonPrincipalLog(format!(
                "eigenvalue {ev} lies on the closed negative real axis"
            )));
        }
    }
    let id = Mat::identity(n, n);
    let mut x = a.clone();
    let mut k = 0;
    while norm1(&(&x - &id)) > 0.25 {
        if k > 60 {
            return Err(GstError::NonPrincipalLog("too many square roots".into()));
        }
        x = sqrtm(&x)?;
        k += 1;
    }
    // log X = 2 atanh(W), W = (X - 1)(X + 1)^-1
    let w = (&x - &id) * inverse(&(&x + &id))?;
    let w2 = &w * &w;
    let mut term = w.clone();
    let mut acc = w.clone();
    for j in 1..200 {
        term = &term * &w2;
        let add = &term / (2 * j + 1) as f64;
        let small = norm1(&add) < 1e-18;
        acc += add;
        if small {
            break;
        }
    }
    let out = acc * (2.0 * (1u64 << k) as f64);
    let back = expm(&out);
    if norm1(&(&back - a)) > 1e-8 * norm1(a).max(1.0) {
        return Err(GstError::NonPrincipalLog(
            "exp(log A) does not reproduce A".into(),
        ));
    }
    Ok(out)
}

/// Symmetric eigen-decomposition with eigenvalues sorted ascending.
pub fn sym_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Mat::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Flatten a matrix row-major.
pub fn vec_rows(a: &Mat) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len());
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            v.push(a[(r, c)]);
        }
    }
    v
}

pub fn kron_c(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_inverts_exp_near_identity() {
        let a = Mat::from_row_slice(3, 3, &[0.1, -0.3, 0.02, 0.3, 0.05, -0.1, 0.0, 0.1, -0.2]);
        let l = logm(&expm(&a)).unwrap();
        assert!(frobenius(&(l - a)) < 1e-12);
    }

    #[test]
    fn log_of_rotation_by_large_angle() {
        let t: f64 = 2.5;
        let a = Mat::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        let l = logm(&a).unwrap();
        let expect = Mat::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        assert!(frobenius(&(l - expect)) < 1e-10);
    }

    #[test]
    fn log_rejects_negative_eigenvalue() {
        let a = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(logm(&a), Err(GstError::NonPrincipalLog(_))));
    }

    #[test]
    fn nullspace_of_wide_matrix() {
        let a = Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = nullspace(&a, 1e-10);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]);
        let s = sqrtm(&a).unwrap();
        assert!(frobenius(&(&s * &s - a)) < 1e-12);
    }
}
