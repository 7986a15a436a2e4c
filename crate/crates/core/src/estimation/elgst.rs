//! Extended linear inversion: germ powers estimated by linear inversion,
//! refined jointly across powers, then gates fitted to the germ estimates.

use super::lm::{least_squares, LsqOptions};
use crate::circuit_engine::{compose, Circuit, DataSet};
use crate::error::{invalid, GstError, Result};
use crate::experiment_design::germs::germ_jacobian;
use crate::experiment_design::FiducialSet;
use crate::gateset_model::{GateSet, ParamKind, Parameterization};
use crate::lgst::{estimate_probabilities, reconstruct, sandwich_matrix};
use crate::linalg::{frobenius, Mat, Vector};

/// Largest Frobenius misfit of any power after a refinement stage before the
/// powers are declared mutually inconsistent.
pub const BRANCH_TOL: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct ElgstResult {
    pub gateset: GateSet,
    /// Linear-inversion estimate (same gauge).
    pub lgst: GateSet,
    /// Refined `tau(g)` per germ.
    pub germ_estimates: Vec<Mat>,
    /// Powers used per germ.
    pub powers: Vec<Vec<usize>>,
    /// Per germ, the refined `tau(g)` after each stage.
    pub stage_estimates: Vec<Vec<Mat>>,
}

fn flatten(m: &Mat) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |r| (0..m.ncols()).map(move |c| m[(r, c)]))
}

fn unflatten(v: &Vector, n: usize) -> Mat {
    Mat::from_fn(n, n, |r, c| v[r * n + c])
}

/// `sum_i |T^{p_i} - E_i|^2` for the given (power, estimate) pairs.
pub fn delta_objective(t: &Mat, estimates: &[(usize, Mat)]) -> f64 {
    estimates.iter().map(|(p, e)| (t.pow(*p as u32) - e).norm_squared()).sum()
}

/// Residuals `T^p - E` for each pair and their Jacobian in the entries of `T`.
fn power_residuals(t: &Mat, estimates: &[(usize, Mat)], want_jac: bool) -> (Vector, Option<Mat>) {
    let n = t.nrows();
    let nn = n * n;
    let maxp = estimates.iter().map(|e| e.0).max().unwrap_or(1);
    let mut pows = vec![Mat::identity(n, n)];
    for k in 1..=maxp {
        let next = &pows[k - 1] * t;
        pows.push(next);
    }
    let mut r = Vector::zeros(nn * estimates.len());
    let mut j = if want_jac { Some(Mat::zeros(nn * estimates.len(), nn)) } else { None };
    for (s, (p, e)) in estimates.iter().enumerate() {
        let d = &pows[*p] - e;
        for (i, x) in flatten(&d).enumerate() {
            r[s * nn + i] = x;
        }
        if let Some(j) = j.as_mut() {
            // d(T^p)/dT_{uv} = sum_a T^a E_{uv} T^{p-1-a}
            for a in 0..*p {
                let left = &pows[a];
                let right = &pows[p - 1 - a];
                for u in 0..n {
                    for v in 0..n {
                        let col = u * n + v;
                        for row in 0..n {
                            let l = left[(row, u)];
                            if l == 0.0 {
                                continue;
                            }
                            for c in 0..n {
                                j[(s * nn + row * n + c, col)] += l * right[(v, c)];
                            }
                        }
                    }
                }
            }
        }
    }
    (r, j)
}

/// Refines `tau(g)` from linear-inversion estimates of its powers. The first
/// entry must be power 1; returns the estimate after each stage.
pub fn refine_germ(estimates: &[(usize, Mat)]) -> Result<Vec<Mat>> {
    match estimates.first() {
        Some((1, _)) => {}
        _ => return invalid("germ refinement needs the power-1 estimate first"),
    }
    if estimates.windows(2).any(|w| w[1].0 <= w[0].0) {
        return invalid("germ powers must be strictly increasing");
    }
    let n = estimates[0].1.nrows();
    let mut t = estimates[0].1.clone();
    let mut out = vec![t.clone()];
    let opts = LsqOptions { rel_tol: 1e-14, grad_tol: 1e-14, ..Default::default() };
    for stage in 1..estimates.len() {
        let used = &estimates[..=stage];
        let theta0 = Vector::from_iterator(n * n, flatten(&t));
        let res = least_squares(|v, want| Ok(power_residuals(&unflatten(v, n), used, want)), &theta0, &opts)?;
        t = unflatten(&res.theta, n);
        for (p, e) in used {
            let misfit = frobenius(&(t.pow(*p as u32) - e));
            if misfit > BRANCH_TOL {
                return Err(GstError::BranchAmbiguity(format!(
                    "power {p} misfit {misfit:.3} after refining with powers up to {}; the power-1 estimate does not pin the branch",
                    used[stage].0
                )));
            }
        }
        out.push(t.clone());
    }
    Ok(out)
}

/// Distinct powers `floor(L / |g|) >= 1` over `max_depths`, always including 1.
pub fn germ_powers(germ: &Circuit, max_depths: &[usize]) -> Vec<usize> {
    let len = germ.depth().max(1);
    let mut p: Vec<usize> = std::iter::once(1).chain(max_depths.iter().map(|l| l / len).filter(|&p| p >= 1)).collect();
    p.sort_unstable();
    p.dedup();
    p
}

/// Runs extended linear inversion on data containing the fiducial sandwiches
/// of every germ power `floor(L / |g|)`.
pub fn elgst(
    ds: &DataSet,
    fids: &FiducialSet,
    germs: &[Circuit],
    max_depths: &[usize],
    target: &GateSet,
) -> Result<ElgstResult> {
    if germs.is_empty() {
        return invalid("no germs given");
    }
    let it = estimate_probabilities(ds, fids, target)?;
    let lgst = reconstruct(&it, target, &it.b0)?;
    let n = target.d2();
    let mut germ_estimates = Vec::new();
    let mut powers = Vec::new();
    let mut stage_estimates = Vec::new();
    for g in germs {
        g.resolve(target)?;
        let ps = germ_powers(g, max_depths);
        let ests = ps
            .iter()
            .map(|&p| Ok((p, it.estimate_operation(&sandwich_matrix(ds, fids, &it.rows, &g.repeat(p))?, &it.b0)?)))
            .collect::<Result<Vec<_>>>()?;
        let stages = refine_germ(&ests).map_err(|e| match e {
            GstError::BranchAmbiguity(m) => GstError::BranchAmbiguity(format!("germ '{g}': {m}")),
            other => other,
        })?;
        germ_estimates.push(stages.last().expect("nonempty").clone());
        stage_estimates.push(stages);
        powers.push(ps);
    }
    let gateset = fit_gates(&lgst, germs, &germ_estimates)?;
    debug_assert_eq!(gateset.d2(), n);
    Ok(ElgstResult { gateset, lgst, germ_estimates, powers, stage_estimates })
}

/// Least-squares fit of the gates to refined germ estimates, starting from
/// (and keeping the SPAM of) `start`.
fn fit_gates(start: &GateSet, germs: &[Circuit], targets: &[Mat]) -> Result<GateSet> {
    let param = Parameterization::new(ParamKind::Full, start);
    let ng = param.num_gate_params();
    let full = param.to_vector(start)?;
    let n = start.d2();
    let nn = n * n;
    let with_gates = |v: &Vector| {
        let mut t = full.clone();
        t.rows_mut(0, ng).copy_from(v);
        param.from_vector(&t)
    };
    let residuals = |v: &Vector, want: bool| -> Result<(Vector, Option<Mat>)> {
        let gs = with_gates(v)?;
        let mut r = Vector::zeros(nn * germs.len());
        let mut j = if want { Some(Mat::zeros(nn * germs.len(), ng)) } else { None };
        for (i, (g, t)) in germs.iter().zip(targets).enumerate() {
            let d = compose(g, &gs)? - t;
            for (k, x) in flatten(&d).enumerate() {
                r[i * nn + k] = x;
            }
            if let Some(j) = j.as_mut() {
                j.rows_mut(i * nn, nn).copy_from(&germ_jacobian(g, &gs, &param)?);
            }
        }
        Ok((r, j))
    };
    let opts = LsqOptions { rel_tol: 1e-14, grad_tol: 1e-14, ..Default::default() };
    let res = least_squares(residuals, &full.rows(0, ng).into_owned(), &opts)?;
    with_gates(&res.theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit_engine::{exact_dataset, outcome_probabilities, simulate};
    use crate::experiment_design::build_design;
    use crate::hs_algebra::rotation;
    use crate::linalg::sqrtm;
    use crate::models::{perturb, std_fiducials_xyi, std_germs_xyi, target_xyi};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn std_fids() -> FiducialSet {
        FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() }
    }

    #[test]
    fn power_jacobian_matches_finite_differences() {
        let t = rotation([0.6, 0.0, 0.8], 0.7).unwrap() * 0.98;
        let ests = vec![(1, Mat::identity(4, 4)), (3, Mat::zeros(4, 4))];
        let (_, j) = power_residuals(&t, &ests, true);
        let j = j.unwrap();
        let h = 1e-6;
        let v = Vector::from_iterator(16, flatten(&t));
        for col in 0..16 {
            let mut a = v.clone();
            let mut b = v.clone();
            a[col] += h;
            b[col] -= h;
            let fd = (power_residuals(&unflatten(&a, 4), &ests, false).0 - power_residuals(&unflatten(&b, 4), &ests, false).0) / (2.0 * h);
            assert!((fd - j.column(col)).amax() < 1e-8);
        }
    }

    #[test]
    fn exact_data_recovers_the_germs() {
        let truth = perturb(&target_xyi(), Default::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let design = build_design(&target_xyi(), &std_fids(), &std_germs_xyi(), &[1, 2, 4, 8]).unwrap();
        let ds = exact_dataset(&truth, design.circuits(), 1_000_000_000_000).unwrap();
        let res = elgst(&ds, &std_fids(), &std_germs_xyi(), &[1, 2, 4, 8], &target_xyi()).unwrap();
        for c in design.circuits() {
            let a = outcome_probabilities(&truth, c).unwrap();
            let b = outcome_probabilities(&res.gateset, c).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-8, "{c}: {x} vs {y}");
            }
        }
        assert_eq!(res.powers[0], vec![1, 2, 4, 8]);
    }

    fn rotation_angle(t: &Mat) -> f64 {
        let tr = t[(1, 1)] + t[(2, 2)] + t[(3, 3)];
        ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn over_rotation_accuracy_improves_with_power() {
        let theta = FRAC_PI_2 + 0.01;
        let mut truth = target_xyi();
        truth.gates[1] = rotation([1.0, 0.0, 0.0], theta).unwrap();
        let germs = vec![Circuit::parse("Gx").unwrap()];
        let depths = [1, 2, 4, 8, 16, 32, 64];
        let design = build_design(&target_xyi(), &std_fids(), &germs, &depths).unwrap();
        let trials = 8;
        let mut err = vec![0.0; depths.len()];
        for seed in 0..trials {
            let ds = simulate(&truth, design.circuits(), 2000, seed).unwrap();
            let res = elgst(&ds, &std_fids(), &germs, &depths, &target_xyi()).unwrap();
            for (k, t) in res.stage_estimates[0].iter().enumerate() {
                err[k] += (rotation_angle(t) - theta).powi(2) / trials as f64;
            }
        }
        let rms: Vec<f64> = err.iter().map(|e| e.sqrt()).collect();
        // 1/l scaling: 64x longer sequences should give at least 10x better angles
        assert!(rms[6] < rms[0] / 10.0, "{rms:?}");
        assert!(rms[6] < 1e-3, "{rms:?}");
    }

    #[test]
    fn square_root_branch_is_resolved_by_lower_power() {
        // tau(g) = pi rotation about z; its square is the identity, whose
        // principal square root is far from tau(g)
        let z = rotation([0.0, 0.0, 1.0], std::f64::consts::PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut noise = |s: f64| Mat::from_fn(4, 4, |r, _| if r == 0 { 0.0 } else { rng.random_range(-s..s) });
        let e1 = &z + noise(1e-2);
        let e2 = &z * &z + noise(1e-3);
        let ests = vec![(1, e1), (2, e2.clone())];
        let naive = sqrtm(&e2).unwrap();
        let refined = refine_germ(&ests).unwrap().pop().unwrap();
        let d_naive = delta_objective(&naive, &ests);
        let d_refined = delta_objective(&refined, &ests);
        assert!(d_refined < d_naive / 100.0, "{d_refined} vs {d_naive}");
        assert!(frobenius(&(refined - z)) < 0.05);
    }

    #[test]
    fn inconsistent_powers_are_a_branch_error() {
        // power-4 data unrelated to the power-1 estimate
        let ests = vec![(1, rotation([0.0, 1.0, 0.0], FRAC_PI_2).unwrap()), (4, rotation([1.0, 0.0, 0.0], 1.0).unwrap())];
        assert!(matches!(refine_germ(&ests), Err(GstError::BranchAmbiguity(_))));
    }
}
