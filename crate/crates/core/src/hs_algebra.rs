//! Real Hilbert-Schmidt representation of states, effects and superoperators.
//!
//! Superoperators are stored as real transfer matrices in the normalized Pauli
//! product basis ("pp"). Basis elements for n qubits are ordered
//! lexicographically over the labels `I, X, Y, Z` with the rightmost label
//! varying fastest (`II, IX, IY, IZ, XI, ...`).
//!
//! The Choi matrix uses the column-stacking convention
//! `chi = sum_ij S_ij (B_j^T kron B_i)`, which equals `(1 kron L)(|W><W|)` for
//! the unnormalized maximally entangled vector `|W> = sum_a |aa>`.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{CMat, Mat, Vector};

pub const TOL_STRUCT: f64 = 1e-12;
pub const TOL_TP: f64 = 1e-10;
pub const TOL_CP: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct HSBasis {
    pub dim: usize,
    pub elements: Vec<CMat>,
    pub labels: Vec<String>,
}

/// Serialized form of a basis: its name and qubit count.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct BasisSpec {
    pub name: String,
    pub n_qubits: usize,
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn pauli(label: char) -> CMat {
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    match label {
        'I' => CMat::from_row_slice(2, 2, &[o, z, z, o]),
        'X' => CMat::from_row_slice(2, 2, &[z, o, o, z]),
        'Y' => CMat::from_row_slice(2, 2, &[z, -i, i, z]),
        'Z' => CMat::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => panic!("unknown Pauli label {label}"),
    }
}

pub fn pauli_basis(n_qubits: usize) -> Result<HSBasis> {
    if n_qubits == 0 {
        return invalid("pauli_basis needs at least one qubit");
    }
    let dim = 1usize << n_qubits;
    let norm = 1.0 / (dim as f64).sqrt();
    let mut labels = vec![String::new()];
    for _ in 0..n_qubits {
        labels = labels
            .iter()
            .flat_map(|p| "IXYZ".chars().map(move |ch| format!("{p}{ch}")))
            .collect();
    }
    let elements = labels
        .iter()
        .map(|lab| {
            let mut m = CMat::identity(1, 1);
            for ch in lab.chars() {
                m = m.kronecker(&pauli(ch));
            }
            m * c(norm, 0.0)
        })
        .collect();
    Ok(HSBasis {
        dim,
        elements,
        labels,
    })
}

impl HSBasis {
    pub fn d2(&self) -> usize {
        self.elements.len()
    }

    pub fn n_qubits(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            name: "pp".into(),
            n_qubits: self.n_qubits(),
        }
    }

    pub fn from_spec(spec: &BasisSpec) -> Result<Self> {
        if spec.name != "pp" {
            return invalid(format!("unsupported basis '{}'", spec.name));
        }
        pauli_basis(spec.n_qubits)
    }

    /// Superket of a Hermitian operator: `v_i = Tr(B_i rho)`.
    pub fn to_superket(&self, rho: &CMat) -> Vector {
        DVector::from_iterator(
            self.d2(),
            self.elements.iter().map(|b| (b * rho).trace().re),
        )
    }

    pub fn from_superket(&self, v: &Vector) -> CMat {
        let mut m = CMat::zeros(self.dim, self.dim);
        for (b, x) in self.elements.iter().zip(v.iter()) {
            m += b * c(*x, 0.0);
        }
        m
    }

    /// Superket of the identity operator (the superbra of a complete POVM sum).
    pub fn identity_vec(&self) -> Vector {
        let mut v = Vector::zeros(self.d2());
        v[0] = (self.dim as f64).sqrt();
        v
    }

    /// Transfer matrix of a linear map given by its action on operators.
    pub fn transfer_of<F: Fn(&CMat) -> CMat>(&self, map: F) -> Mat {
        let n = self.d2();
        let images: Vec<CMat> = self.elements.iter().map(&map).collect();
        Mat::from_fn(n, n, |i, j| (&self.elements[i] * &images[j]).trace().re)
    }

    /// Same as `transfer_of` but keeps the complex entries, for maps that are
    /// not Hermiticity preserving.
    pub fn transfer_of_complex<F: Fn(&CMat) -> CMat>(&self, map: F) -> CMat {
        let n = self.d2();
        let images: Vec<CMat> = self.elements.iter().map(&map).collect();
        CMat::from_fn(n, n, |i, j| (&self.elements[i] * &images[j]).trace())
    }

    fn check_square(&self, s: &Mat) -> Result<()> {
        let n = self.d2();
        if s.nrows() != n || s.ncols() != n {
            return invalid(format!(
                "expected {n}x{n} transfer matrix, got {}x{}",
                s.nrows(),
                s.ncols()
            ));
        }
        Ok(())
    }
}

pub fn is_unitary(u: &CMat, tol: f64) -> bool {
    if u.nrows() != u.ncols() {
        return false;
    }
    let id = CMat::identity(u.nrows(), u.ncols());
    (u.adjoint() * u - id).iter().all(|x| x.norm() <= tol)
}

pub fn unitary_to_transfer(u: &CMat, basis: &HSBasis) -> Result<Mat> {
    if u.nrows() != basis.dim || !is_unitary(u, TOL_TP) {
        return invalid("unitary_to_transfer needs a unitary of the basis dimension");
    }
    let ud = u.adjoint();
    Ok(basis.transfer_of(|b| u * b * &ud))
}

pub fn transfer_to_choi(s: &Mat, basis: &HSBasis) -> Result<CMat> {
    basis.check_square(s)?;
    let n = basis.d2();
    let d2 = basis.dim * basis.dim;
    let mut chi = CMat::zeros(d2, d2);
    for j in 0..n {
        let bjt = basis.elements[j].transpose();
        for i in 0..n {
            let sij = s[(i, j)];
            if sij != 0.0 {
                chi += bjt.kronecker(&basis.elements[i]) * c(sij, 0.0);
            }
        }
    }
    Ok(chi)
}

pub fn choi_to_transfer(chi: &CMat, basis: &HSBasis) -> Result<Mat> {
    let n = basis.d2();
    let d2 = basis.dim * basis.dim;
    if chi.nrows() != d2 || chi.ncols() != d2 {
        return invalid("choi matrix dimension does not match the basis");
    }
    let mut s = Mat::zeros(n, n);
    for j in 0..n {
        let bjt = basis.elements[j].transpose();
        for i in 0..n {
            let k = bjt.kronecker(&basis.elements[i]);
            s[(i, j)] = (k.adjoint() * chi).trace().re;
        }
    }
    Ok(s)
}

/// Eigenvalues of the Choi matrix, ascending.
pub fn choi_eigenvalues(s: &Mat, basis: &HSBasis) -> Result<Vec<f64>> {
    let chi = transfer_to_choi(s, basis)?;
    let herm = (&chi + chi.adjoint()) * c(0.5, 0.0);
    let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

pub fn is_tp(s: &Mat, tol: f64) -> bool {
    s.nrows() > 0
        && (0..s.ncols()).all(|j| {
            let target = if j == 0 { 1.0 } else { 0.0 };
            (s[(0, j)] - target).abs() <= tol
        })
}

pub fn is_cp(s: &Mat, basis: &HSBasis, tol: f64) -> Result<bool> {
    Ok(choi_eigenvalues(s, basis)?[0] >= -tol)
}

pub fn depolarizing(rate: f64, basis: &HSBasis) -> Result<Mat> {
    if !(0.0..=1.0).contains(&rate) {
        return invalid(format!("depolarizing rate {rate} outside [0,1]"));
    }
    let n = basis.d2();
    let mut m = Mat::identity(n, n) * (1.0 - rate);
    m[(0, 0)] = 1.0;
    Ok(m)
}

/// Single-qubit unitary `exp(-i angle/2 axis.sigma)`.
pub fn rotation_unitary(axis: [f64; 3], angle: f64) -> Result<CMat> {
    let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > TOL_TP {
        return invalid("rotation axis must be a unit vector");
    }
    let (s, co) = (angle / 2.0).sin_cos();
    let mut u = CMat::identity(2, 2) * c(co, 0.0);
    for (k, lab) in ['X', 'Y', 'Z'].iter().enumerate() {
        u -= pauli(*lab) * c(0.0, s * axis[k]);
    }
    Ok(u)
}

pub fn rotation(axis: [f64; 3], angle: f64) -> Result<Mat> {
    let basis = pauli_basis(1)?;
    unitary_to_transfer(&rotation_unitary(axis, angle)?, &basis)
}

/// Unitary whose channel is closest to `s`: polar factor of the dominant
/// Kraus operator read off the Choi matrix.
pub fn closest_unitary(s: &Mat, basis: &HSBasis) -> Result<CMat> {
    let d = basis.dim;
    let chi = transfer_to_choi(s, basis)?;
    let herm = (&chi + chi.adjoint()) * c(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let top = (0..eig.eigenvalues.len())
        .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .unwrap_or(0);
    let v = eig.eigenvectors.column(top);
    // column stacking: K[(row b, col a)] = v[a*d + b]
    let k = CMat::from_fn(d, d, |b, a| v[a * d + b]);
    let svd = k.svd(true, true);
    let (Some(w), Some(vt)) = (svd.u, svd.v_t) else {
        return invalid("svd failed in closest_unitary");
    };
    Ok(w * vt)
}

/// Transfer matrix of `exp(-i H)` for Hermitian `H`.
pub fn hamiltonian_transfer(h: &CMat, basis: &HSBasis) -> Result<Mat> {
    let u = (h * c(0.0, -1.0)).exp();
    unitary_to_transfer(&u, basis)
}
