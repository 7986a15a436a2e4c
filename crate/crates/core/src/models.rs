//! Standard target gate sets and the perturbation model used by the scaling checks.

use rand::Rng;
use std::f64::consts::FRAC_PI_2;

use crate::circuit_engine::Circuit;
use crate::gateset_model::GateSet;
use crate::hs_algebra::{depolarizing, pauli_basis, rotation};
use crate::linalg::Vector;

/// Single-qubit target: prep |0>, gates {Gi, Gx = X(pi/2), Gy = Y(pi/2)}, z-basis POVM.
pub fn target_xyi() -> GateSet {
    let basis = pauli_basis(1).expect("basis");
    let r = 1.0 / 2f64.sqrt();
    let mut gs = GateSet::new(basis.clone());
    gs.preps.push(Vector::from_vec(vec![r, 0.0, 0.0, r]));
    gs.add_gate("Gi", nalgebra::DMatrix::identity(4, 4));
    gs.add_gate("Gx", rotation([1.0, 0.0, 0.0], FRAC_PI_2).expect("rotation"));
    gs.add_gate("Gy", rotation([0.0, 1.0, 0.0], FRAC_PI_2).expect("rotation"));
    gs.add_povm(vec![
        Vector::from_vec(vec![r, 0.0, 0.0, r]),
        Vector::from_vec(vec![r, 0.0, 0.0, -r]),
    ]);
    gs
}

/// Noise applied to a target in each scaling trial.
#[derive(Clone, Copy, Debug)]
pub struct Perturbation {
    pub max_depolarization: f64,
    pub spam_error: f64,
    pub max_rotation: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            max_depolarization: 1e-3,
            spam_error: 1e-2,
            max_rotation: 1e-3,
        }
    }
}

fn random_axis<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0f64),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Random depolarization and rotation on each gate plus depolarized SPAM.
/// Only meaningful for single-qubit gate sets.
pub fn perturb<R: Rng>(target: &GateSet, noise: Perturbation, rng: &mut R) -> GateSet {
    let mut gs = target.clone();
    let basis = &target.basis;
    for g in gs.gates.iter_mut() {
        let dep = depolarizing(rng.random_range(0.0..=noise.max_depolarization), basis)
            .expect("rate in range");
        let rot = rotation(random_axis(rng), rng.random_range(0.0..=noise.max_rotation))
            .expect("unit axis");
        *g = rot * dep * &*g;
    }
    let shrink = 1.0 - noise.spam_error;
    for p in gs.preps.iter_mut() {
        for i in 1..p.len() {
            p[i] *= shrink;
        }
    }
    let id = basis.identity_vec();
    for povm in gs.povms.iter_mut() {
        for e in povm.iter_mut() {
            let mean = &id * (e[0] / id[0]);
            *e = &mean + (&*e - &mean) * shrink;
        }
    }
    gs
}

fn parse_all(texts: &[&str]) -> Vec<Circuit> {
    texts.iter().map(|t| Circuit::parse(t).expect("valid circuit")).collect()
}

/// Germs commonly used with [`target_xyi`].
pub fn std_germs_xyi() -> Vec<Circuit> {
    parse_all(&[
        "Gi", "Gx", "Gy", "Gx Gy", "Gx Gy Gi", "Gx Gi Gy", "Gx Gi Gi", "Gy Gi Gi",
        "Gx Gx Gi Gy", "Gx Gy Gy Gi", "Gx Gx Gy Gx Gy Gy",
    ])
}

/// The six cardinal-state fiducials for [`target_xyi`].
pub fn std_fiducials_xyi() -> Vec<Circuit> {
    parse_all(&["{}", "Gx", "Gy", "Gx Gx", "Gx Gx Gx", "Gy Gy Gy"])
}
