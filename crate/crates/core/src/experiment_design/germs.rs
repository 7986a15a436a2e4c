//! Germ amplification analysis: twirled Jacobians, amplificational
//! completeness, and germ-set selection.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit_engine::{compose, Circuit};
use crate::error::{GstError, Result};
use crate::gateset_model::{gauge_space_projector, GateSet, ParamKind, Parameterization};
use crate::hs_algebra::{closest_unitary, hamiltonian_transfer, unitary_to_transfer};
use crate::linalg::{cond, nullspace, svd_sorted, sym_eigen, CMat, Mat};

pub const RANK_TOL: f64 = 1e-6;
pub const CLUSTER_TOL: f64 = 1e-8;
pub const PERTURBATION: f64 = 1e-4;
const GREEDY_REG: f64 = 1e-2;

/// Copy of `target` with gates only, each replaced by its closest unitary
/// and then kicked by a small seeded random unitary.
pub fn germ_model(target: &GateSet, seed: u64) -> Result<GateSet> {
    let basis = &target.basis;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gs = GateSet::new(basis.clone());
    for (label, g) in target.gate_labels.iter().zip(&target.gates) {
        let u = closest_unitary(g, basis)?;
        let mut h = CMat::zeros(basis.dim, basis.dim);
        for b in basis.elements.iter().skip(1) {
            h += b * Complex64::new(rng.random_range(-PERTURBATION..PERTURBATION), 0.0);
        }
        let kick = hamiltonian_transfer(&h, basis)?;
        gs.add_gate(label, kick * unitary_to_transfer(&u, basis)?);
    }
    Ok(gs)
}

/// `d tau(g) / d theta` over the gate parameters, one column per parameter,
/// entries of `tau` flattened row-major.
pub fn germ_jacobian(germ: &Circuit, gs: &GateSet, param: &Parameterization) -> Result<Mat> {
    let idx = germ.resolve(gs)?;
    let n = gs.d2();
    let v = param.to_vector(gs)?;
    let jac = param.jacobian(&v)?;
    let prep_off = gs.preps.len() * n;
    let len = idx.len();
    // before[k] = G_{k-1} ... G_0, after[k] = G_{L-1} ... G_{k+1}
    let mut before = vec![Mat::identity(n, n); len + 1];
    for k in 0..len {
        before[k + 1] = &gs.gates[idx[k]] * &before[k];
    }
    let mut after = vec![Mat::identity(n, n); len + 1];
    for k in (0..len).rev() {
        after[k] = if k + 1 < len {
            &after[k + 1] * &gs.gates[idx[k + 1]]
        } else {
            Mat::identity(n, n)
        };
    }
    let ng = param.num_gate_params();
    let mut out = Mat::zeros(n * n, ng);
    for (pos, &gi) in idx.iter().enumerate() {
        let row0 = prep_off + gi * n * n;
        for c in param.gate_range(gi) {
            let dg = Mat::from_fn(n, n, |r, cc| jac[(row0 + r * n + cc, c)]);
            let term = &after[pos] * dg * &before[pos];
            for r in 0..n {
                for cc in 0..n {
                    out[(r * n + cc, c)] += term[(r, cc)];
                }
            }
        }
    }
    Ok(out)
}

/// Orthogonal projection onto the commutant of a (normal) superoperator.
pub struct CommutantProjector {
    q: CMat,
    cluster: Vec<usize>,
}

impl CommutantProjector {
    pub fn new(tau: &Mat) -> Result<Self> {
        let c = cond(tau);
        if !c.is_finite() || c > 1e12 {
            return Err(GstError::InvalidArgument(
                "germ superoperator is not invertible".into(),
            ));
        }
        let n = tau.nrows();
        let schur = nalgebra::linalg::Schur::new(tau.map(|x| Complex64::new(x, 0.0)));
        let (q, t) = schur.unpack();
        let ev: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
        // union eigenvalues closer than the clustering tolerance
        let mut cluster: Vec<usize> = (0..n).collect();
        fn root(c: &mut [usize], mut i: usize) -> usize {
            while c[i] != i {
                c[i] = c[c[i]];
                i = c[i];
            }
            i
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (ev[i] - ev[j]).norm() < CLUSTER_TOL {
                    let (a, b) = (root(&mut cluster, i), root(&mut cluster, j));
                    cluster[a.max(b)] = a.min(b);
                }
            }
        }
        for i in 0..n {
            cluster[i] = root(&mut cluster, i);
        }
        Ok(CommutantProjector { q, cluster })
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let xc = x.map(|v| Complex64::new(v, 0.0));
        let mut y = self.q.adjoint() * xc * &self.q;
        let n = y.nrows();
        for i in 0..n {
            for j in 0..n {
                if self.cluster[i] != self.cluster[j] {
                    y[(i, j)] = Complex64::new(0.0, 0.0);
                }
            }
        }
        (&self.q * y * self.q.adjoint()).map(|z| z.re)
    }
}

/// Large-power limit of the germ Jacobian: each column projected onto the
/// commutant of `tau(g)`.
pub fn twirled_germ_jacobian(germ: &Circuit, gs: &GateSet, param: &Parameterization) -> Result<Mat> {
    let tau = compose(germ, gs)?;
    let proj = CommutantProjector::new(&tau)?;
    let j1 = germ_jacobian(germ, gs, param)?;
    let n = gs.d2();
    let mut out = Mat::zeros(j1.nrows(), j1.ncols());
    for c in 0..j1.ncols() {
        let m = Mat::from_fn(n, n, |r, cc| j1[(r * n + cc, c)]);
        let t = proj.apply(&m);
        for r in 0..n {
            for cc in 0..n {
                out[(r * n + cc, c)] = t[(r, cc)];
            }
        }
    }
    Ok(out)
}

/// Everything needed to score germs against one design model.
pub struct GermContext {
    pub model: GateSet,
    pub param: Parameterization,
    /// Orthonormal basis of the non-gauge gate-parameter directions (columns).
    pub nongauge: Mat,
    pub gauge_rank: usize,
}

impl GermContext {
    pub fn new(target: &GateSet, kind: ParamKind, seed: u64) -> Result<Self> {
        let model = germ_model(target, seed)?;
        let param = Parameterization::new(kind, &model);
        let gauge = gauge_space_projector(&model, &param)?;
        let nongauge = nullspace(&gauge.basis.transpose(), 1e-10);
        let nongauge = if gauge.rank == 0 {
            Mat::identity(param.num_params(), param.num_params())
        } else {
            nongauge
        };
        Ok(GermContext {
            model,
            param,
            nongauge,
            gauge_rank: gauge.rank,
        })
    }

    /// Non-gauge gate-parameter count the germs must amplify.
    pub fn required_rank(&self) -> usize {
        self.param.num_gate_params() - self.gauge_rank
    }

    pub fn twirled(&self, germ: &Circuit) -> Result<Mat> {
        twirled_germ_jacobian(germ, &self.model, &self.param)
    }

    /// Twirled Jacobian expressed in non-gauge coordinates.
    pub fn projected(&self, germ: &Circuit) -> Result<Mat> {
        Ok(self.twirled(germ)? * &self.nongauge)
    }

    pub fn param_label(&self, i: usize) -> String {
        param_label(&self.param, i)
    }
}

/// Human-readable name of a gate parameter.
pub fn param_label(param: &Parameterization, i: usize) -> String {
    let t = param.template();
    let n = t.d2();
    for (g, label) in t.gate_labels.iter().enumerate() {
        let r = param.gate_range(g);
        if r.contains(&i) {
            let a = i - r.start;
            return match param.kind {
                ParamKind::Full => format!("{label}[{},{}]", a / n, a % n),
                ParamKind::TP => format!("{label}[{},{}]", 1 + a / n, a % n),
                ParamKind::CPTPLindblad if a < n - 1 => format!("{label}:H{}", a + 1),
                ParamKind::CPTPLindblad => format!("{label}:S{}", a - (n - 1)),
            };
        }
    }
    format!("spam[{}]", i - param.num_gate_params())
}

fn stack(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), b.shape()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Rank of `J^T J` and the score `N_g Tr[(J^T J)^-1]` over its non-null part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GermScore {
    pub rank: usize,
    /// Sum over nonzero eigenvalues only; equals the true score when complete.
    pub partial: f64,
    pub n_germs: usize,
}

impl GermScore {
    pub fn score(&self, required: usize) -> f64 {
        if self.rank >= required {
            self.partial
        } else {
            f64::INFINITY
        }
    }
}

fn score_blocks(blocks: &[&Mat]) -> GermScore {
    if blocks.is_empty() {
        return GermScore { rank: 0, partial: f64::INFINITY, n_germs: 0 };
    }
    let j = stack(blocks);
    let (ev, _) = sym_eigen(&(j.transpose() * &j));
    let max = ev.last().copied().unwrap_or(0.0);
    let tol = RANK_TOL * RANK_TOL * max;
    let mut rank = 0;
    let mut sum = 0.0;
    for &l in &ev {
        if max > 0.0 && l > tol {
            rank += 1;
            sum += 1.0 / l;
        }
    }
    GermScore {
        rank,
        partial: blocks.len() as f64 * sum,
        n_germs: blocks.len(),
    }
}

#[derive(Clone, Debug)]
pub struct AmplificationReport {
    pub complete: bool,
    pub achieved: usize,
    pub required: usize,
    pub unamplified: Vec<String>,
}

fn describe_unamplified(ctx: &GermContext, blocks: &[&Mat]) -> Vec<String> {
    let k = ctx.nongauge.ncols();
    let j = if blocks.is_empty() { Mat::zeros(1, k) } else { stack(blocks) };
    let svd = svd_sorted(&(j.transpose() * &j));
    let max = svd.s.first().copied().unwrap_or(0.0);
    let mut out = Vec::new();
    for (i, &s) in svd.s.iter().enumerate() {
        if max > 0.0 && s > RANK_TOL * RANK_TOL * max {
            continue;
        }
        let dir = &ctx.nongauge * svd.u.column(i);
        let mut comps: Vec<(usize, f64)> = dir.iter().copied().enumerate().collect();
        comps.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        let text: Vec<String> = comps
            .iter()
            .take(3)
            .filter(|(_, v)| v.abs() > 1e-3)
            .map(|(p, v)| format!("{v:+.3}*{}", ctx.param_label(*p)))
            .collect();
        out.push(text.join(" "));
    }
    out
}

pub fn is_amplificationally_complete(germs: &[Circuit], ctx: &GermContext) -> Result<AmplificationReport> {
    let mats = germs.iter().map(|g| ctx.projected(g)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Mat> = mats.iter().collect();
    let s = score_blocks(&refs);
    let required = ctx.required_rank();
    let complete = s.rank >= required;
    Ok(AmplificationReport {
        complete,
        achieved: s.rank,
        required,
        unamplified: if complete { Vec::new() } else { describe_unamplified(ctx, &refs) },
    })
}

/// Score of a germ set (infinite when not amplificationally complete).
pub fn germ_set_score(germs: &[Circuit], ctx: &GermContext) -> Result<f64> {
    let mats = germs.iter().map(|g| ctx.projected(g)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Mat> = mats.iter().collect();
    Ok(score_blocks(&refs).score(ctx.required_rank()))
}

#[derive(Clone, Debug)]
pub struct GermSet {
    pub germs: Vec<Circuit>,
    /// Rank of each germ's twirled Jacobian in non-gauge coordinates.
    pub amplified_ranks: Vec<usize>,
    pub score: f64,
}

/// Per-germ amplified ranks.
pub fn amplified_ranks(germs: &[Circuit], ctx: &GermContext) -> Result<Vec<usize>> {
    germs
        .iter()
        .map(|g| Ok(score_blocks(&[&ctx.projected(g)?]).rank))
        .collect()
}

/// Greedy completion from the single-gate germs followed by add/remove/swap
/// moves that lower the score.
pub fn select_germs(ctx: &GermContext, candidates: &[Circuit]) -> Result<GermSet> {
    let singles: Vec<Circuit> = ctx
        .model
        .gate_labels
        .iter()
        .map(|l| Circuit::from_labels(&[l]))
        .collect();
    let mut pool: Vec<Circuit> = singles.clone();
    for c in candidates {
        if !pool.contains(c) {
            pool.push(c.clone());
        }
    }
    let mats: Vec<Mat> = pool
        .par_iter()
        .map(|g| ctx.projected(g))
        .collect::<Result<Vec<_>>>()?;
    let required = ctx.required_rank();
    let eval = |set: &[usize]| -> GermScore {
        let refs: Vec<&Mat> = set.iter().map(|&i| &mats[i]).collect();
        score_blocks(&refs)
    };
    let fixed = singles.len();
    let mut chosen: Vec<usize> = (0..fixed).collect();
    let mut current = eval(&chosen);

    {
        let all: Vec<usize> = (0..pool.len()).collect();
        let s = eval(&all);
        if s.rank < required {
            let refs: Vec<&Mat> = mats.iter().collect();
            return Err(GstError::NotAmplificationallyComplete {
                achieved: s.rank,
                required,
                unamplified: describe_unamplified(ctx, &refs),
            });
        }
    }
    // greedy completion on a regularized score, so that directions only
    // weakly amplified do not count as progress
    let regularized = |set: &[usize]| -> f64 {
        let k = ctx.nongauge.ncols();
        let mut jtj = Mat::zeros(k, k);
        for &i in set {
            jtj += mats[i].transpose() * &mats[i];
        }
        sym_eigen(&jtj).0.iter().map(|l| 1.0 / (l.max(0.0) + GREEDY_REG)).sum::<f64>()
    };
    while current.rank < required {
        let (i, _) = (fixed..pool.len())
            .filter(|i| !chosen.contains(i))
            .map(|i| {
                let mut s = chosen.clone();
                s.push(i);
                (i, regularized(&s))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("pool is complete, so a candidate remains");
        chosen.push(i);
        current = eval(&chosen);
    }

    // local search
    let better = |a: f64, b: f64| a < b * (1.0 - 1e-12);
    for _ in 0..200 {
        let base = current.score(required);
        let mut moved = false;
        for pos in fixed..chosen.len() {
            let mut s = chosen.clone();
            s.remove(pos);
            let sc = eval(&s);
            if better(sc.score(required), base) {
                chosen = s;
                current = sc;
                moved = true;
                break;
            }
        }
        if moved {
            continue;
        }
        for i in fixed..pool.len() {
            if chosen.contains(&i) {
                continue;
            }
            let mut s = chosen.clone();
            s.push(i);
            let sc = eval(&s);
            if better(sc.score(required), base) {
                chosen = s;
                current = sc;
                moved = true;
                break;
            }
        }
        if moved {
            continue;
        }
        'swap: for pos in fixed..chosen.len() {
            for i in fixed..pool.len() {
                if chosen.contains(&i) {
                    continue;
                }
                let mut s = chosen.clone();
                s[pos] = i;
                let sc = eval(&s);
                if better(sc.score(required), base) {
                    chosen = s;
                    current = sc;
                    moved = true;
                    break 'swap;
                }
            }
        }
        if !moved {
            break;
        }
    }
    let germs: Vec<Circuit> = chosen.iter().map(|&i| pool[i].clone()).collect();
    let amplified_ranks = chosen.iter().map(|&i| eval(&[i]).rank).collect();
    Ok(GermSet {
        germs,
        amplified_ranks,
        score: current.score(required),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment_design::germ_candidates;
    use crate::hs_algebra::rotation;
    use crate::linalg::{frobenius, Vector};
    use crate::models::{std_germs_xyi, target_xyi};
    use std::f64::consts::FRAC_PI_2;

    fn gates_only(t: &GateSet) -> GateSet {
        let mut g = t.clone();
        g.preps.clear();
        g.povms.clear();
        g.effect_labels.clear();
        g
    }

    fn tp_direction(param: &Parameterization, gate: usize, dg: &Mat) -> Vector {
        let n = dg.nrows();
        let mut v = Vector::zeros(param.num_params());
        let r = param.gate_range(gate);
        for a in 0..n * (n - 1) {
            v[r.start + a] = dg[(1 + a / n, a % n)];
        }
        v / dg.norm()
    }

    #[test]
    fn commutant_projector_is_idempotent_and_keeps_commuting_parts() {
        let t = target_xyi();
        let tau = t.gate("Gx").unwrap() * t.gate("Gy").unwrap();
        let p = CommutantProjector::new(&tau).unwrap();
        let x = Mat::from_fn(4, 4, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let px = p.apply(&x);
        assert!(frobenius(&(p.apply(&px) - &px)) < 1e-10);
        assert!(frobenius(&(&px * &tau - &tau * &px)) < 1e-10);
        assert!(frobenius(&(p.apply(&tau) - &tau)) < 1e-10);
    }

    #[test]
    fn gx_amplifies_over_rotation_not_tilt() {
        let gs = gates_only(&target_xyi());
        let param = Parameterization::new(ParamKind::TP, &gs);
        let j = twirled_germ_jacobian(&Circuit::from_labels(&["Gx"]), &gs, &param).unwrap();
        let h = 1e-6;
        let over = (rotation([1.0, 0.0, 0.0], FRAC_PI_2 + h).unwrap()
            - rotation([1.0, 0.0, 0.0], FRAC_PI_2 - h).unwrap())
            / (2.0 * h);
        let gx = gs.gate_index("Gx").unwrap();
        let v = tp_direction(&param, gx, &over);
        assert!((&j * &v).norm() >= 1.0 - 1e-6);
        let tilt = (rotation([h.cos(), h.sin(), 0.0], FRAC_PI_2).unwrap()
            - rotation([(-h).cos(), (-h).sin(), 0.0], FRAC_PI_2).unwrap())
            / (2.0 * h);
        let v = tp_direction(&param, gx, &tilt);
        assert!((&j * &v).norm() < 1e-6);
        let jxy = twirled_germ_jacobian(&Circuit::from_labels(&["Gx", "Gy"]), &gs, &param).unwrap();
        assert!((&jxy * &v).norm() > 0.1);
    }

    #[test]
    fn twirl_matches_high_power_finite_difference() {
        // germs whose ideal period divides 512, so the power average is exact
        let gs = gates_only(&target_xyi());
        let param = Parameterization::new(ParamKind::TP, &gs);
        let p = 512;
        let theta0 = param.to_vector(&gs).unwrap();
        for germ in ["Gx", "Gy", "Gi"] {
            let g = Circuit::from_labels(&[germ]);
            let j = twirled_germ_jacobian(&g, &gs, &param).unwrap();
            let tau = compose(&g, &gs).unwrap();
            let tp1 = tau.pow((p - 1) as u32);
            let h = 1e-7;
            for c in 0..param.num_params() {
                let mut tp = theta0.clone();
                let mut tm = theta0.clone();
                tp[c] += h;
                tm[c] -= h;
                let up = compose(&g.repeat(p), &param.from_vector(&tp).unwrap()).unwrap();
                let dn = compose(&g.repeat(p), &param.from_vector(&tm).unwrap()).unwrap();
                let fd = (up - dn) / (2.0 * h * p as f64);
                let col = Mat::from_fn(4, 4, |r, cc| j[(r * 4 + cc, c)]) * &tp1;
                let scale = fd.norm().max(1.0);
                assert!(frobenius(&(fd - col)) / scale < 1e-4, "germ {germ} column {c}");
            }
        }
    }

    #[test]
    fn singletons_are_incomplete_standard_germs_complete() {
        let t = target_xyi();
        let ctx = GermContext::new(&t, ParamKind::TP, 0).unwrap();
        assert_eq!(ctx.required_rank(), 25);
        let singles: Vec<Circuit> = ["Gi", "Gx", "Gy"].iter().map(|l| Circuit::from_labels(&[l])).collect();
        let r = is_amplificationally_complete(&singles, &ctx).unwrap();
        assert!(!r.complete && r.achieved < r.required);
        assert!(!r.unamplified.is_empty());
        let r = is_amplificationally_complete(&std_germs_xyi(), &ctx).unwrap();
        assert!(r.complete, "{r:?}");
        let empty = is_amplificationally_complete(&[], &ctx).unwrap();
        assert_eq!((empty.complete, empty.achieved), (false, 0));
    }

    #[test]
    fn selected_germs_are_complete_and_locally_minimal() {
        let t = target_xyi();
        let ctx = GermContext::new(&t, ParamKind::TP, 0).unwrap();
        let cands = germ_candidates(&t.gate_labels, crate::experiment_design::DEFAULT_GERM_CUTOFF);
        let set = select_germs(&ctx, &cands).unwrap();
        assert!(set.score <= germ_set_score(&std_germs_xyi(), &ctx).unwrap());
        assert!(is_amplificationally_complete(&set.germs, &ctx).unwrap().complete);
        assert!(set.germs.len() <= cands.len());
        for l in ["Gi", "Gx", "Gy"] {
            assert!(set.germs.contains(&Circuit::from_labels(&[l])));
        }
        for i in 3..set.germs.len() {
            let mut fewer = set.germs.clone();
            fewer.remove(i);
            let s = germ_set_score(&fewer, &ctx).unwrap();
            assert!(s >= set.score);
        }
        // singletons plus every depth-2 germ
        let mut depth2: Vec<Circuit> = cands.iter().filter(|c| c.depth() <= 2).cloned().collect();
        depth2.dedup();
        assert!(set.score <= germ_set_score(&depth2, &ctx).unwrap());
    }
}
