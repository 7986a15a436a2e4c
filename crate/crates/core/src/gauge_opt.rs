//! Gauge fixing by weighted Frobenius distance to a target.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimation::lm::{least_squares, LsqOptions};
use crate::gateset_model::{apply_gauge, expm_frechet, GateSet, GaugeElement, ParamKind};
use crate::hs_algebra::{choi_eigenvalues, transfer_to_choi};
use crate::linalg::{expm, inverse, logm, Mat, Vector};

pub const RESTARTS: usize = 5;
pub const RESTART_NORM: f64 = 0.3;
pub const DEFAULT_CP_WEIGHT: f64 = 1e3;
const RESTART_SEED: u64 = 0x6761_7567;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeMetricWeights {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Per POVM, per effect.
    pub gamma: Vec<Vec<f64>>,
}

impl GaugeMetricWeights {
    pub fn new(gs: &GateSet, gates: f64, spam: f64) -> Self {
        GaugeMetricWeights {
            alpha: vec![spam; gs.preps.len()],
            beta: vec![gates; gs.gates.len()],
            gamma: gs.povms.iter().map(|p| vec![spam; p.len()]).collect(),
        }
    }

    pub fn uniform(gs: &GateSet) -> Self {
        Self::new(gs, 1.0, 1.0)
    }

    /// Gate weight `L^2` and SPAM weight 1, for estimates from circuits whose
    /// gates repeat up to `max_length` times.
    pub fn rule_of_thumb(gs: &GateSet, max_length: usize) -> Self {
        Self::new(gs, (max_length * max_length) as f64, 1.0)
    }

    fn validate(&self, gs: &GateSet) -> Result<()> {
        let all = self.alpha.iter().chain(&self.beta).chain(self.gamma.iter().flatten());
        if self.alpha.len() != gs.preps.len()
            || self.beta.len() != gs.gates.len()
            || self.gamma.len() != gs.povms.len()
            || self.gamma.iter().zip(&gs.povms).any(|(g, p)| g.len() != p.len())
        {
            return invalid("gauge weights do not match the gate set");
        }
        let mut any = false;
        for &w in all {
            if !(w >= 0.0) || !w.is_finite() {
                return invalid(format!("gauge weight {w} is not a finite nonnegative number"));
            }
            any |= w > 0.0;
        }
        if !any {
            return invalid("all gauge weights are zero");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaugeGroupKind {
    FullGL,
    TPGroup,
    Unitary,
    SPAMGauge,
    SPAMGaugeTP,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeGroupSpec {
    pub kind: GaugeGroupKind,
    pub cp_constraint: bool,
    /// Weight of the squared negative Choi eigenvalues when `cp_constraint` is set.
    pub cp_weight: f64,
}

impl GaugeGroupSpec {
    pub fn new(kind: GaugeGroupKind) -> Self {
        GaugeGroupSpec { kind, cp_constraint: false, cp_weight: DEFAULT_CP_WEIGHT }
    }

    pub fn with_cp(mut self) -> Self {
        self.cp_constraint = true;
        self
    }
}

/// Basis of the group's Lie algebra; `M = exp(sum_j c_j K_j)`.
pub fn group_generators(gs: &GateSet, kind: GaugeGroupKind) -> Vec<Mat> {
    let n = gs.d2();
    let unit = |r: usize, c: usize| {
        let mut k = Mat::zeros(n, n);
        k[(r, c)] = 1.0;
        k
    };
    match kind {
        GaugeGroupKind::FullGL => (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| unit(r, c)).collect(),
        GaugeGroupKind::TPGroup => (1..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| unit(r, c)).collect(),
        GaugeGroupKind::Unitary => {
            let basis = &gs.basis;
            basis.elements[1..]
                .iter()
                .map(|h| basis.transfer_of(|rho| (h * rho - rho * h) * Complex64::new(0.0, -1.0)))
                .collect()
        }
        GaugeGroupKind::SPAMGauge => {
            let mut rest = Mat::identity(n, n);
            rest[(0, 0)] = 0.0;
            vec![unit(0, 0), rest]
        }
        GaugeGroupKind::SPAMGaugeTP => {
            let mut rest = Mat::identity(n, n);
            rest[(0, 0)] = 0.0;
            vec![rest]
        }
    }
}

/// Weighted sum of squared Frobenius distances of `estimate` under `m` to `target`.
pub fn gauge_objective(estimate: &GateSet, target: &GateSet, weights: &GaugeMetricWeights, m: &Mat) -> Result<f64> {
    weights.validate(estimate)?;
    let moved = apply_gauge(estimate, &GaugeElement::new(m.clone())?)?;
    Ok(distance_residuals(&moved, target, weights).norm_squared())
}

fn distance_residuals(gs: &GateSet, target: &GateSet, w: &GaugeMetricWeights) -> Vector {
    let mut out = Vec::new();
    for (i, (a, b)) in gs.preps.iter().zip(&target.preps).enumerate() {
        let s = w.alpha[i].sqrt();
        out.extend((a - b).iter().map(|x| s * x));
    }
    for (i, (a, b)) in gs.gates.iter().zip(&target.gates).enumerate() {
        let s = w.beta[i].sqrt();
        let d = a - b;
        for r in 0..d.nrows() {
            out.extend(d.row(r).iter().map(|x| s * x));
        }
    }
    for (m, (pa, pb)) in gs.povms.iter().zip(&target.povms).enumerate() {
        for (i, (a, b)) in pa.iter().zip(pb).enumerate() {
            let s = w.gamma[m][i].sqrt();
            out.extend((a - b).iter().map(|x| s * x));
        }
    }
    Vector::from_vec(out)
}

struct Problem<'a> {
    estimate: &'a GateSet,
    target: &'a GateSet,
    weights: &'a GaugeMetricWeights,
    gens: Vec<Mat>,
    spec: GaugeGroupSpec,
}

impl Problem<'_> {
    fn generator(&self, c: &Vector) -> Mat {
        let n = self.estimate.d2();
        self.gens.iter().zip(c.iter()).fold(Mat::zeros(n, n), |acc, (g, x)| acc + g * *x)
    }

    /// Residuals (distance, then CP penalty) and their Jacobian in `c`.
    fn eval(&self, c: &Vector, want_jac: bool) -> Result<(Vector, Option<Mat>)> {
        let k = self.generator(c);
        let m = expm(&k);
        let minv = inverse(&m).map_err(|_| crate::GstError::Optimizer("singular gauge element".into()))?;
        let moved = transform(self.estimate, &m, &minv);
        let mut r = distance_residuals(&moved, self.target, self.weights);
        let mut jac: Option<Mat> = None;
        let dms: Vec<Mat> = if want_jac { self.gens.iter().map(|g| expm_frechet(&k, g)).collect() } else { Vec::new() };
        if want_jac {
            let mut j = Mat::zeros(r.len(), self.gens.len());
            for (col, dm) in dms.iter().enumerate() {
                let dminv = -(&minv * dm * &minv);
                let d = differential(self.estimate, &m, &minv, dm, &dminv);
                // residual map is affine in the gate set with the target subtracted
                let zero = zero_like(self.target);
                j.set_column(col, &distance_residuals(&d, &zero, self.weights));
            }
            jac = Some(j);
        }
        if self.spec.cp_constraint {
            let s = self.spec.cp_weight.sqrt();
            let mut pen = Vec::new();
            let mut pen_rows: Vec<Vec<f64>> = Vec::new();
            for (gi, g) in moved.gates.iter().enumerate() {
                let chi = transfer_to_choi(g, &moved.basis)?;
                let herm = (&chi + chi.adjoint()) * Complex64::new(0.5, 0.0);
                let eig = herm.symmetric_eigen();
                for (e, &lam) in eig.eigenvalues.iter().enumerate() {
                    let neg = (-lam).max(0.0);
                    pen.push(s * neg);
                    if want_jac {
                        let v = eig.eigenvectors.column(e).into_owned();
                        let row: Vec<f64> = dms
                            .iter()
                            .map(|dm| {
                                if neg == 0.0 {
                                    return 0.0;
                                }
                                let dminv = -(&minv * dm * &minv);
                                let dg = dm * &self.estimate.gates[gi] * &minv + &m * &self.estimate.gates[gi] * &dminv;
                                let dchi = transfer_to_choi(&dg, &moved.basis).expect("square");
                                -s * (v.adjoint() * dchi * &v)[(0, 0)].re
                            })
                            .collect();
                        pen_rows.push(row);
                    }
                }
            }
            let base = r.len();
            r = Vector::from_iterator(base + pen.len(), r.iter().copied().chain(pen));
            if let Some(j) = jac.take() {
                let mut big = Mat::zeros(r.len(), self.gens.len());
                big.rows_mut(0, base).copy_from(&j);
                for (i, row) in pen_rows.iter().enumerate() {
                    for (c, x) in row.iter().enumerate() {
                        big[(base + i, c)] = *x;
                    }
                }
                jac = Some(big);
            }
        }
        Ok((r, jac))
    }
}

fn zero_like(gs: &GateSet) -> GateSet {
    let mut z = gs.clone();
    z.preps.iter_mut().for_each(|v| v.fill(0.0));
    z.gates.iter_mut().for_each(|g| g.fill(0.0));
    z.povms.iter_mut().flatten().for_each(|e| e.fill(0.0));
    z
}

fn transform(gs: &GateSet, m: &Mat, minv: &Mat) -> GateSet {
    let mut out = gs.clone();
    let minv_t = minv.transpose();
    out.preps.iter_mut().for_each(|v| *v = m * &*v);
    out.gates.iter_mut().for_each(|g| *g = m * &*g * minv);
    out.povms.iter_mut().flatten().for_each(|e| *e = &minv_t * &*e);
    out
}

/// Derivative of the transformed gate set along `dm`.
fn differential(gs: &GateSet, m: &Mat, minv: &Mat, dm: &Mat, dminv: &Mat) -> GateSet {
    let mut out = gs.clone();
    let dminv_t = dminv.transpose();
    out.preps.iter_mut().for_each(|v| *v = dm * &*v);
    out.gates.iter_mut().for_each(|g| *g = dm * &*g * minv + m * &*g * dminv);
    out.povms.iter_mut().flatten().for_each(|e| *e = &dminv_t * &*e);
    out
}

#[derive(Clone, Debug)]
pub struct GaugeOptResult {
    pub gateset: GateSet,
    pub m: Mat,
    pub objective: f64,
    pub initial_objective: f64,
    pub trace: Vec<f64>,
}

/// Minimizes the weighted distance to `target` over the chosen group, from
/// the identity and from `RESTARTS` random group elements.
pub fn gauge_optimize_full(
    estimate: &GateSet,
    target: &GateSet,
    group: GaugeGroupSpec,
    weights: &GaugeMetricWeights,
) -> Result<GaugeOptResult> {
    if !estimate.same_structure(target) {
        return invalid("estimate and target have different structure");
    }
    weights.validate(estimate)?;
    let problem = Problem { estimate, target, weights, gens: group_generators(estimate, group.kind), spec: group };
    let nc = problem.gens.len();
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    let mut starts = vec![Vector::zeros(nc)];
    for _ in 0..RESTARTS {
        let v = Vector::from_fn(nc, |_, _| rng.random_range(-1.0..1.0));
        let k = problem.generator(&v);
        let norm = k.norm();
        starts.push(if norm > 0.0 { v * (RESTART_NORM / norm) } else { v });
    }
    let opts = LsqOptions { rel_tol: 1e-14, grad_tol: 1e-13, ..Default::default() };
    let initial = problem.eval(&starts[0], false)?.0.norm_squared();
    let runs: Vec<Option<(Vector, f64, Vec<f64>)>> = starts
        .par_iter()
        .map(|c0| {
            least_squares(|c, want| problem.eval(c, want), c0, &opts)
                .ok()
                .map(|r| (r.theta, r.objective, r.trace))
        })
        .collect();
    let mut best = (starts[0].clone(), initial, vec![initial]);
    for run in runs.into_iter().flatten() {
        if run.1 < best.1 * (1.0 - 1e-9) - 1e-300 || (best.2.len() == 1 && run.1 <= best.1) {
            best = run;
        }
    }
    let m = expm(&problem.generator(&best.0));
    let gateset = apply_gauge(estimate, &GaugeElement::new(m.clone())?)?;
    Ok(GaugeOptResult { gateset, m, objective: best.1, initial_objective: initial, trace: best.2 })
}

pub fn gauge_optimize(
    estimate: &GateSet,
    target: &GateSet,
    group: GaugeGroupSpec,
    weights: &GaugeMetricWeights,
) -> Result<(GateSet, Mat)> {
    let r = gauge_optimize_full(estimate, target, group, weights)?;
    Ok((r.gateset, r.m))
}

/// Three-stage gauge fixing: whole group with uniform weights, then the
/// unitary group on gates only, then a SPAM-only stage under a CP penalty.
/// If the gates were CP before the SPAM stage they stay CP: the last
/// transform is shortened until they are.
pub fn staged_gauge_optimize(estimate: &GateSet, target: &GateSet, kind: ParamKind) -> Result<GateSet> {
    let mut gs = estimate.clone();
    let (first, spam) = match kind {
        ParamKind::Full => (Some(GaugeGroupKind::FullGL), GaugeGroupKind::SPAMGauge),
        ParamKind::TP => (Some(GaugeGroupKind::TPGroup), GaugeGroupKind::SPAMGaugeTP),
        ParamKind::CPTPLindblad => (None, GaugeGroupKind::SPAMGaugeTP),
    };
    if let Some(k) = first {
        gs = gauge_optimize(&gs, target, GaugeGroupSpec::new(k), &GaugeMetricWeights::uniform(&gs))?.0;
    }
    gs = gauge_optimize(&gs, target, GaugeGroupSpec::new(GaugeGroupKind::Unitary), &GaugeMetricWeights::new(&gs, 1.0, 0.0))?.0;
    let (spam_fixed, m) = gauge_optimize(&gs, target, GaugeGroupSpec::new(spam).with_cp(), &GaugeMetricWeights::new(&gs, 0.0, 1.0))?;
    let floor = min_choi_eigenvalue(&gs)?;
    if floor >= -CP_TOL && min_choi_eigenvalue(&spam_fixed)? < floor.min(0.0) {
        return back_off_to_cp(&gs, &m, floor.min(0.0));
    }
    Ok(spam_fixed)
}

const CP_TOL: f64 = 1e-9;

fn min_choi_eigenvalue(gs: &GateSet) -> Result<f64> {
    let mut min = f64::INFINITY;
    for g in &gs.gates {
        min = min.min(choi_eigenvalues(g, &gs.basis)?[0]);
    }
    Ok(min)
}

/// Largest fraction `t` of the transform `m = exp(K)` (as `exp(t K)`) that
/// keeps every Choi eigenvalue of `gs` at or above `floor`.
fn back_off_to_cp(gs: &GateSet, m: &Mat, floor: f64) -> Result<GateSet> {
    let k = logm(m)?;
    let at = |t: f64| apply_gauge(gs, &GaugeElement::from_generator(&k * t));
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if min_choi_eigenvalue(&at(mid)?)? >= floor {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit_engine::{outcome_probabilities, Circuit};
    use crate::hs_algebra::rotation;
    use crate::linalg::frobenius;
    use crate::models::{perturb, target_xyi, Perturbation};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn noisy(seed: u64) -> GateSet {
        perturb(&target_xyi(), Default::default(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn random_circuits(n: usize, seed: u64) -> Vec<Circuit> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = ["Gi", "Gx", "Gy"];
        (0..n)
            .map(|_| {
                let len = rng.random_range(0..10);
                Circuit::from_labels(&(0..len).map(|_| labels[rng.random_range(0..3)]).collect::<Vec<_>>())
            })
            .collect()
    }

    fn scramble(gs: &GateSet, seed: u64, scale: f64) -> (GateSet, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Mat::from_fn(4, 4, |_, _| rng.random_range(-scale..scale));
        let m = expm(&k);
        (apply_gauge(gs, &GaugeElement::new(m.clone()).unwrap()).unwrap(), m)
    }

    #[test]
    fn objective_examples() {
        let t = target_xyi();
        let w = GaugeMetricWeights::uniform(&t);
        assert!(gauge_objective(&t, &t, &w, &Mat::identity(4, 4)).unwrap() < 1e-28);
        let (moved, m0) = scramble(&t, 1, 0.2);
        let back = inverse(&m0).unwrap();
        assert!(gauge_objective(&moved, &t, &w, &back).unwrap() < 1e-20);
        // gate part scales linearly with beta
        let est = noisy(2);
        let gates_only = GaugeMetricWeights::new(&t, 1.0, 0.0);
        let doubled = GaugeMetricWeights::new(&t, 2.0, 0.0);
        let a = gauge_objective(&est, &t, &gates_only, &Mat::identity(4, 4)).unwrap();
        let b = gauge_objective(&est, &t, &doubled, &Mat::identity(4, 4)).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert!(gauge_objective(&est, &t, &w, &Mat::zeros(4, 4)).is_err());
    }

    #[test]
    fn weights_are_validated() {
        let t = target_xyi();
        let zero = GaugeMetricWeights::new(&t, 0.0, 0.0);
        assert!(gauge_objective(&t, &t, &zero, &Mat::identity(4, 4)).is_err());
        let mut neg = GaugeMetricWeights::uniform(&t);
        neg.beta[0] = -1.0;
        assert!(gauge_objective(&t, &t, &neg, &Mat::identity(4, 4)).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let t = target_xyi();
        let est = noisy(3);
        let w = GaugeMetricWeights::uniform(&t);
        let mut spec = GaugeGroupSpec::new(GaugeGroupKind::FullGL).with_cp();
        spec.cp_weight = 10.0;
        let p = Problem { estimate: &est, target: &t, weights: &w, gens: group_generators(&t, spec.kind), spec };
        let c = Vector::from_fn(16, |i, _| 0.01 * ((i * 7 % 5) as f64 - 2.0));
        let (_, j) = p.eval(&c, true).unwrap();
        let j = j.unwrap();
        let h = 1e-6;
        for col in 0..16 {
            let mut cp = c.clone();
            let mut cm = c.clone();
            cp[col] += h;
            cm[col] -= h;
            let fd = (p.eval(&cp, false).unwrap().0 - p.eval(&cm, false).unwrap().0) / (2.0 * h);
            assert!((&fd - j.column(col)).amax() < 1e-6, "column {col}");
        }
    }

    #[test]
    fn scrambled_target_is_recovered() {
        let t = target_xyi();
        for (seed, kind) in [(4, GaugeGroupKind::FullGL), (5, GaugeGroupKind::FullGL)] {
            let (moved, _) = scramble(&t, seed, 0.15);
            let r = gauge_optimize_full(&moved, &t, GaugeGroupSpec::new(kind), &GaugeMetricWeights::uniform(&t)).unwrap();
            assert!(r.objective < 1e-10, "objective {}", r.objective);
            for d in r.gateset.gate_distances(&t) {
                assert!(d < 1e-6);
            }
        }
        // TP group recovers a TP scramble
        let mut k = Mat::from_fn(4, 4, |r, c| 0.1 * ((r * 4 + c) as f64).sin());
        k.row_mut(0).fill(0.0);
        let moved = apply_gauge(&t, &GaugeElement::from_generator(k)).unwrap();
        let r = gauge_optimize_full(&moved, &t, GaugeGroupSpec::new(GaugeGroupKind::TPGroup), &GaugeMetricWeights::uniform(&t)).unwrap();
        assert!(r.objective < 1e-10);
        assert!(r.m.row(0).iter().enumerate().all(|(i, x)| (x - if i == 0 { 1.0 } else { 0.0 }).abs() < 1e-12));
    }

    #[test]
    fn unitary_group_preserves_spectra() {
        let t = target_xyi();
        let est = noisy(6);
        let (out, m) = gauge_optimize(&est, &t, GaugeGroupSpec::new(GaugeGroupKind::Unitary), &GaugeMetricWeights::uniform(&t)).unwrap();
        // a unitary superoperator is orthogonal in this basis
        assert!(frobenius(&(m.transpose() * &m - Mat::identity(4, 4))) < 1e-10);
        for (a, b) in est.gates.iter().zip(&out.gates) {
            let mut ea: Vec<f64> = a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
            let mut eb: Vec<f64> = b.complex_eigenvalues().iter().map(|z| z.norm()).collect();
            ea.sort_by(f64::total_cmp);
            eb.sort_by(f64::total_cmp);
            for (x, y) in ea.iter().zip(&eb) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn spam_groups_have_the_documented_form() {
        let t = target_xyi();
        let est = noisy(7);
        for kind in [GaugeGroupKind::SPAMGauge, GaugeGroupKind::SPAMGaugeTP] {
            let (_, m) = gauge_optimize(&est, &t, GaugeGroupSpec::new(kind), &GaugeMetricWeights::uniform(&t)).unwrap();
            for r in 0..4 {
                for c in 0..4 {
                    if r != c {
                        assert_eq!(m[(r, c)], 0.0);
                    }
                }
            }
            assert!((m[(1, 1)] - m[(2, 2)]).abs() < 1e-14 && (m[(2, 2)] - m[(3, 3)]).abs() < 1e-14);
            if kind == GaugeGroupKind::SPAMGaugeTP {
                assert_eq!(m[(0, 0)], 1.0);
            }
        }
    }

    #[test]
    fn staged_perfect_data_returns_target() {
        let t = target_xyi();
        for kind in [ParamKind::Full, ParamKind::TP, ParamKind::CPTPLindblad] {
            let (moved, _) = scramble(&t, 8, 0.1);
            let start = if kind == ParamKind::CPTPLindblad {
                // only the unitary and SPAM stages run, so scramble within those
                let u = rotation([0.6, 0.0, 0.8], 0.4).unwrap();
                apply_gauge(&t, &GaugeElement::new(u).unwrap()).unwrap()
            } else if kind == ParamKind::TP {
                let mut k = Mat::from_fn(4, 4, |r, c| 0.05 * ((r + 2 * c) as f64).cos());
                k.row_mut(0).fill(0.0);
                apply_gauge(&t, &GaugeElement::from_generator(k)).unwrap()
            } else {
                moved
            };
            let out = staged_gauge_optimize(&start, &t, kind).unwrap();
            assert!(out.max_abs_diff(&t) < 1e-8, "{kind}: {}", out.max_abs_diff(&t));
        }
    }

    #[test]
    fn staged_is_idempotent() {
        let t = target_xyi();
        let est = noisy(9);
        for kind in [ParamKind::Full, ParamKind::TP] {
            let once = staged_gauge_optimize(&est, &t, kind).unwrap();
            let twice = staged_gauge_optimize(&once, &t, kind).unwrap();
            assert!(once.max_abs_diff(&twice) < 1e-8, "{}", once.max_abs_diff(&twice));
        }
    }

    #[test]
    fn staged_attributes_relational_error_to_spam() {
        // gate error 1e-4 (depolarization), SPAM coherent error 1e-2, then
        // a gauge transformation that hides part of the SPAM error in the gates
        let t = target_xyi();
        let mut truth = t.clone();
        for g in truth.gates.iter_mut() {
            let mut dep = Mat::identity(4, 4) * (1.0 - 1e-4);
            dep[(0, 0)] = 1.0;
            *g = &dep * &*g;
        }
        truth.preps[0][3] *= 1.0 - 1e-2;
        for e in truth.povms[0].iter_mut() {
            e[3] *= 1.0 - 1e-2;
        }
        let mut k = Mat::zeros(4, 4);
        for i in 1..4 {
            k[(i, i)] = 0.02;
        }
        let est = apply_gauge(&truth, &GaugeElement::from_generator(k)).unwrap();
        let out = staged_gauge_optimize(&est, &t, ParamKind::Full).unwrap();
        let gate_err: f64 = out.gate_distances(&t).iter().map(|x| x * x).sum();
        let spam_err = out.spam_distance(&t).powi(2);
        assert!(gate_err < 0.1 * (gate_err + spam_err), "gates {gate_err} spam {spam_err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn output_is_gauge_equivalent(seed in 0u64..500) {
            let t = target_xyi();
            let est = perturb(&t, Perturbation { max_depolarization: 0.02, spam_error: 0.02, max_rotation: 0.05 }, &mut ChaCha8Rng::seed_from_u64(seed));
            let w = GaugeMetricWeights::uniform(&t);
            for kind in [GaugeGroupKind::FullGL, GaugeGroupKind::TPGroup] {
                let r = gauge_optimize_full(&est, &t, GaugeGroupSpec::new(kind), &w).unwrap();
                prop_assert!(r.objective <= r.initial_objective);
                for c in random_circuits(20, seed) {
                    let a = outcome_probabilities(&est, &c).unwrap();
                    let b = outcome_probabilities(&r.gateset, &c).unwrap();
                    for (x, y) in a.iter().zip(&b) {
                        prop_assert!((x - y).abs() < 1e-10);
                    }
                }
            }
            let out = staged_gauge_optimize(&est, &t, ParamKind::TP).unwrap();
            prop_assert!(out.is_tp(1e-10));
            let ev = choi_eigenvalues(&out.gates[0], &t.basis).unwrap();
            prop_assert!(ev.iter().all(|x| x.is_finite()));
        }
    }
}
