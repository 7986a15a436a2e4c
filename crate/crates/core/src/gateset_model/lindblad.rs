//! Lindblad error generators: `G = exp(xi) G0` with
//! `xi = sum_i a_i H_i + sum_jk b_jk S_jk`, `b = T T^dagger` positive semidefinite.

use num_complex::Complex64;

use crate::error::Result;
use crate::hs_algebra::HSBasis;
use crate::linalg::{expm, inverse, logm, CMat, Mat};

/// Error generator `log(G G0^-1)` (principal branch).
pub fn error_generator(gate: &Mat, ideal: &Mat) -> Result<Mat> {
    logm(&(gate * inverse(ideal)?))
}

pub fn generator_to_gate(xi: &Mat, ideal: &Mat) -> Mat {
    expm(xi) * ideal
}

/// Precomputed Hamiltonian and stochastic generator superoperators.
#[derive(Clone, Debug)]
pub struct LindbladBasis {
    /// Number of non-identity basis elements, `d^2 - 1`.
    pub n: usize,
    /// `H_i : rho -> i[rho, B_i]`, i over non-identity elements.
    pub ham: Vec<Mat>,
    /// `S_jk : rho -> B_j rho B_k - (B_k B_j rho + rho B_k B_j)/2`.
    pub sto: Vec<Vec<CMat>>,
    /// Pseudo-inverse of the map (hamiltonian coefficients, hermitian b params) -> vec(xi).
    decompose: Mat,
}

fn cz(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

impl LindbladBasis {
    pub fn new(basis: &HSBasis) -> Self {
        let n = basis.d2() - 1;
        let i = Complex64::new(0.0, 1.0);
        let ham = (1..=n)
            .map(|a| {
                let b = &basis.elements[a];
                basis.transfer_of(|rho| (rho * b - b * rho) * i)
            })
            .collect();
        let sto = (1..=n)
            .map(|j| {
                (1..=n)
                    .map(|k| {
                        let bj = &basis.elements[j];
                        let bk = &basis.elements[k];
                        let kj = bk * bj;
                        basis.transfer_of_complex(|rho| {
                            bj * rho * bk - (&kj * rho + rho * &kj) * cz(0.5)
                        })
                    })
                    .collect()
            })
            .collect();
        let mut lb = LindbladBasis {
            n,
            ham,
            sto,
            decompose: Mat::zeros(0, 0),
        };
        let cols = lb.generator_columns();
        let d4 = basis.d2() * basis.d2();
        let a = Mat::from_fn(d4, cols.len(), |r, c| cols[c][r]);
        lb.decompose = a.pseudo_inverse(1e-12).expect("pseudo-inverse");
        lb
    }

    /// Number of real parameters per gate.
    pub fn params_per_gate(&self) -> usize {
        self.n + self.n * self.n
    }

    /// Column-major vec of each linear generator: hamiltonian terms, then the
    /// hermitian parameterization of b (diagonal, then re/im of lower entries).
    fn generator_columns(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let flat = |m: &Mat| m.iter().copied().collect::<Vec<f64>>();
        let mut cols: Vec<Vec<f64>> = self.ham.iter().map(flat).collect();
        for j in 0..n {
            for k in 0..=j {
                if j == k {
                    cols.push(flat(&self.sto[j][j].map(|z| z.re)));
                } else {
                    let re = (&self.sto[j][k] + &self.sto[k][j]).map(|z| z.re);
                    let im = ((&self.sto[j][k] - &self.sto[k][j]) * Complex64::new(0.0, 1.0))
                        .map(|z| z.re);
                    cols.push(flat(&re));
                    cols.push(flat(&im));
                }
            }
        }
        cols
    }

    /// Lower-triangular T from its real parameter slice.
    pub fn t_from_params(&self, p: &[f64]) -> CMat {
        let n = self.n;
        let mut t = CMat::zeros(n, n);
        let mut k = 0;
        for j in 0..n {
            for l in 0..=j {
                if j == l {
                    t[(j, j)] = cz(p[k]);
                    k += 1;
                } else {
                    t[(j, l)] = Complex64::new(p[k], p[k + 1]);
                    k += 2;
                }
            }
        }
        t
    }

    pub fn t_to_params(&self, t: &CMat) -> Vec<f64> {
        let n = self.n;
        let mut p = Vec::with_capacity(n * n);
        for j in 0..n {
            for l in 0..=j {
                if j == l {
                    p.push(t[(j, j)].re);
                } else {
                    p.push(t[(j, l)].re);
                    p.push(t[(j, l)].im);
                }
            }
        }
        p
    }

    /// `xi` for hamiltonian coefficients `alpha` and stochastic matrix `b`.
    pub fn generator(&self, alpha: &[f64], b: &CMat) -> Mat {
        let d2 = self.n + 1;
        let mut xi = Mat::zeros(d2, d2);
        for (a, h) in alpha.iter().zip(&self.ham) {
            xi += h * *a;
        }
        let mut s = CMat::zeros(d2, d2);
        for j in 0..self.n {
            for k in 0..self.n {
                let bjk = b[(j, k)];
                if bjk.norm() != 0.0 {
                    s += &self.sto[j][k] * bjk;
                }
            }
        }
        xi += s.map(|z| z.re);
        // trace preservation: the first row is exactly zero
        xi.row_mut(0).fill(0.0);
        xi
    }

    /// Generator from the per-gate real parameter slice.
    pub fn generator_from_params(&self, p: &[f64]) -> Mat {
        let t = self.t_from_params(&p[self.n..]);
        let b = &t * t.adjoint();
        self.generator(&p[..self.n], &b)
    }

    /// Derivatives of `xi` with respect to every per-gate parameter.
    pub fn generator_derivatives(&self, p: &[f64]) -> Vec<Mat> {
        let n = self.n;
        let zero_alpha = vec![0.0; n];
        let mut out: Vec<Mat> = self.ham.iter().map(|h| {
            let mut h = h.clone();
            h.row_mut(0).fill(0.0);
            h
        }).collect();
        let t = self.t_from_params(&p[n..]);
        let np = n * n;
        for k in 0..np {
            let mut e = vec![0.0; np];
            e[k] = 1.0;
            let dt = self.t_from_params(&e);
            let db = &dt * t.adjoint() + &t * dt.adjoint();
            out.push(self.generator(&zero_alpha, &db));
        }
        out
    }

    /// Per-gate parameters reproducing `xi` as closely as the Lindblad form
    /// allows; the stochastic block is projected onto the PSD cone.
    pub fn params_from_generator(&self, xi: &Mat) -> Vec<f64> {
        let n = self.n;
        let flat = nalgebra::DVector::from_iterator(xi.len(), xi.iter().copied());
        let coef = &self.decompose * flat;
        let alpha: Vec<f64> = coef.iter().take(n).copied().collect();
        let mut b = CMat::zeros(n, n);
        let mut k = n;
        for j in 0..n {
            for l in 0..=j {
                if j == l {
                    b[(j, j)] = cz(coef[k]);
                    k += 1;
                } else {
                    b[(j, l)] = Complex64::new(coef[k], coef[k + 1]);
                    b[(l, j)] = Complex64::new(coef[k], -coef[k + 1]);
                    k += 2;
                }
            }
        }
        let t = psd_cholesky(&b);
        let mut p = alpha;
        p.extend(self.t_to_params(&t));
        p
    }
}

/// Lower-triangular `T` with `T T^dagger` equal to the PSD projection of `b`
/// and a non-negative real diagonal.
pub fn psd_cholesky(b: &CMat) -> CMat {
    let n = b.nrows();
    let herm = (b + b.adjoint()) * cz(0.5);
    let eig = herm.clone().symmetric_eigen();
    let mut clipped = CMat::zeros(n, n);
    let needs_clip = eig.eigenvalues.iter().any(|&x| x < 0.0);
    let psd = if needs_clip {
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 0.0 {
                let v = eig.eigenvectors.column(i);
                clipped += &v * v.adjoint() * cz(lam);
            }
        }
        clipped
    } else {
        herm
    };
    let mut t = CMat::zeros(n, n);
    let scale = psd.diagonal().iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let floor = 1e-14 * scale.max(1e-300);
    for j in 0..n {
        let mut d = psd[(j, j)].re;
        for k in 0..j {
            d -= t[(j, k)].norm_sqr();
        }
        if d <= floor {
            continue;
        }
        let djj = d.sqrt();
        t[(j, j)] = cz(djj);
        for i in (j + 1)..n {
            let mut s = psd[(i, j)];
            for k in 0..j {
                s -= t[(i, k)] * t[(j, k)].conj();
            }
            t[(i, j)] = s / djj;
        }
    }
    t
}

/// Frechet derivative of the matrix exponential at `a` in direction `e`.
pub fn expm_frechet(a: &Mat, e: &Mat) -> Mat {
    let n = a.nrows();
    let mut big = Mat::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((n, n), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, n)).copy_from(e);
    expm(&big).view((0, n), (n, n)).into_owned()
}
