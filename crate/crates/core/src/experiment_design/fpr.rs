use rayon::prelude::*;

use super::{effective_effects, effective_preps, ExperimentDesign, GermContext};
use crate::error::Result;
use crate::gateset_model::{GateSet, ParamKind};
use crate::linalg::{rank, svd_sorted, Mat};

#[derive(Clone, Debug)]
pub struct FprReport {
    /// Rank of the amplified-direction sensitivity with all pairs, per germ.
    pub full_ranks: Vec<usize>,
    pub kept_ranks: Vec<usize>,
    pub kept_pairs: Vec<Vec<(usize, usize)>>,
    pub circuits_before: usize,
    pub circuits_after: usize,
}

fn rank_abs(rows: &[Vec<f64>], cols: usize, thresh: f64) -> usize {
    if rows.is_empty() || cols == 0 {
        return 0;
    }
    let m = Mat::from_fn(rows.len(), cols, |r, c| rows[r][c]);
    svd_sorted(&m).s.iter().filter(|&&s| s > thresh).count()
}

/// Sensitivity rows of pair (a, b) to each amplified direction of one germ.
fn pair_rows(
    effects: &[Vec<crate::linalg::Vector>],
    preps: &[crate::linalg::Vector],
    dirs: &[Mat],
    a: usize,
    b: usize,
) -> Vec<Vec<f64>> {
    effects[a]
        .iter()
        .map(|e| dirs.iter().map(|m| e.dot(&(m * &preps[b]))).collect())
        .collect()
}

fn reduce_germ(
    ctx: &GermContext,
    germ: &crate::circuit_engine::Circuit,
    target: &GateSet,
    effects: &[Vec<crate::linalg::Vector>],
    preps: &[crate::linalg::Vector],
) -> Result<(usize, usize, Vec<(usize, usize)>)> {
    let n = target.d2();
    let tw = ctx.twirled(germ)?;
    let jp = &tw * &ctx.nongauge;
    let svd = svd_sorted(&jp);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let dirs: Vec<Mat> = svd
        .s
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax > 0.0 && s > 1e-6 * smax)
        .map(|(i, _)| {
            let col = &tw * (&ctx.nongauge * svd.vt.row(i).transpose());
            Mat::from_fn(n, n, |r, c| col[r * n + c])
        })
        .collect();
    let k = dirs.len();
    let pairs: Vec<(usize, usize)> = (0..effects.len())
        .flat_map(|a| (0..preps.len()).map(move |b| (a, b)))
        .collect();
    let rows: Vec<Vec<Vec<f64>>> = pairs.iter().map(|&(a, b)| pair_rows(effects, preps, &dirs, a, b)).collect();
    let all: Vec<Vec<f64>> = rows.iter().flatten().cloned().collect();
    let all_m = Mat::from_fn(all.len(), k, |r, c| all[r][c]);
    let smax_all = svd_sorted(&all_m).s.first().copied().unwrap_or(0.0);
    let thresh = 1e-6 * smax_all;
    let full = if k == 0 { 0 } else { rank(&all_m, 1e-6) };

    let mut chosen: Vec<usize> = Vec::new();
    let mut chosen_rows: Vec<Vec<f64>> = Vec::new();
    let mut cur = 0;
    while cur < full {
        // basis of the current row span, for the residual tie-break
        let basis = if chosen_rows.is_empty() {
            Mat::zeros(k, 0)
        } else {
            let m = Mat::from_fn(chosen_rows.len(), k, |r, c| chosen_rows[r][c]);
            let s = svd_sorted(&m);
            let r = s.s.iter().filter(|&&x| x > thresh).count();
            s.vt.rows(0, r).transpose()
        };
        let mut best: Option<(usize, usize, f64)> = None;
        for (pi, pr) in rows.iter().enumerate() {
            if chosen.contains(&pi) {
                continue;
            }
            let mut trial = chosen_rows.clone();
            trial.extend(pr.iter().cloned());
            let r = rank_abs(&trial, k, thresh);
            let resid: f64 = pr
                .iter()
                .map(|row| {
                    let v = crate::linalg::Vector::from_vec(row.clone());
                    let proj = &basis * (basis.transpose() * &v);
                    (v - proj).norm_squared()
                })
                .sum();
            let better = match best {
                None => true,
                Some((_, br, bres)) => r > br || (r == br && resid > bres * (1.0 + 1e-12)),
            };
            if better {
                best = Some((pi, r, resid));
            }
        }
        match best {
            Some((pi, r, _)) if r > cur => {
                chosen.push(pi);
                chosen_rows.extend(rows[pi].iter().cloned());
                cur = r;
            }
            _ => break,
        }
    }
    // prune pairs that became redundant
    let mut i = 0;
    while i < chosen.len() {
        let trial: Vec<Vec<f64>> = chosen
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, &pi)| rows[pi].iter().cloned())
            .collect();
        if rank_abs(&trial, k, thresh) >= cur {
            chosen.remove(i);
        } else {
            i += 1;
        }
    }
    let mut kept: Vec<(usize, usize)> = chosen.iter().map(|&pi| pairs[pi]).collect();
    kept.sort_unstable();
    Ok((full, cur, kept))
}

/// Per germ, a minimal set of fiducial pairs that keeps the rank of the
/// sensitivity to that germ's amplified parameters. Linear-inversion
/// circuits are unaffected.
pub fn reduce_fiducial_pairs(
    design: &ExperimentDesign,
    target: &GateSet,
    kind: ParamKind,
    seed: u64,
) -> Result<(ExperimentDesign, FprReport)> {
    let ctx = GermContext::new(target, kind, seed)?;
    let mut model = ctx.model.clone();
    model.preps = target.preps.clone();
    model.povms = target.povms.clone();
    model.effect_labels = target.effect_labels.clone();
    let preps = effective_preps(&model, &design.fiducials.preps)?;
    let mut effects = vec![Vec::new(); design.fiducials.meas.len()];
    for e in effective_effects(&model, &design.fiducials.meas)? {
        effects[e.fiducial].push(e.vector);
    }
    let per_germ: Vec<(usize, usize, Vec<(usize, usize)>)> = design
        .germs
        .par_iter()
        .map(|g| reduce_germ(&ctx, g, &model, &effects, &preps))
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<Vec<(usize, usize)>> = per_germ.iter().map(|p| p.2.clone()).collect();
    let reduced = design.with_kept_pairs(kept.clone())?;
    let report = FprReport {
        full_ranks: per_germ.iter().map(|p| p.0).collect(),
        kept_ranks: per_germ.iter().map(|p| p.1).collect(),
        kept_pairs: kept,
        circuits_before: design.circuits().len(),
        circuits_after: reduced.circuits().len(),
    };
    Ok((reduced, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment_design::{build_design, FiducialSet};
    use crate::models::{std_fiducials_xyi, std_germs_xyi, target_xyi};

    #[test]
    fn reduction_keeps_rank_and_halves_circuits() {
        let t = target_xyi();
        let f = FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() };
        let d = build_design(&t, &f, &std_germs_xyi(), &[1, 2, 4, 8, 16, 32]).unwrap();
        let (r, rep) = reduce_fiducial_pairs(&d, &t, ParamKind::TP, 0).unwrap();
        assert_eq!(rep.full_ranks, rep.kept_ranks);
        assert!(rep.full_ranks.iter().all(|&k| k > 0));
        assert!(rep.circuits_after * 2 <= rep.circuits_before, "{} -> {}", rep.circuits_before, rep.circuits_after);
        for c in &d.lgst_circuits {
            assert!(r.circuits().contains(c));
        }
    }

    #[test]
    fn dropping_a_kept_pair_loses_rank() {
        let t = target_xyi();
        let f = FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() };
        let germs = std_germs_xyi();
        let d = build_design(&t, &f, &germs, &[1, 2, 4]).unwrap();
        let ctx = GermContext::new(&t, ParamKind::TP, 0).unwrap();
        let mut model = ctx.model.clone();
        model.preps = t.preps.clone();
        model.povms = t.povms.clone();
        model.effect_labels = t.effect_labels.clone();
        let preps = effective_preps(&model, &d.fiducials.preps).unwrap();
        let mut effects = vec![Vec::new(); d.fiducials.meas.len()];
        for e in effective_effects(&model, &d.fiducials.meas).unwrap() {
            effects[e.fiducial].push(e.vector);
        }
        let (_, kr, kept) = reduce_germ(&ctx, &germs[3], &model, &effects, &preps).unwrap();
        assert!(kept.len() > 1);
        let n = t.d2();
        let tw = ctx.twirled(&germs[3]).unwrap();
        let svd = svd_sorted(&(&tw * &ctx.nongauge));
        let smax = svd.s[0];
        let dirs: Vec<Mat> = (0..svd.s.len())
            .filter(|&i| svd.s[i] > 1e-6 * smax)
            .map(|i| {
                let col = &tw * (&ctx.nongauge * svd.vt.row(i).transpose());
                Mat::from_fn(n, n, |r, c| col[r * n + c])
            })
            .collect();
        for drop in 0..kept.len() {
            let rows: Vec<Vec<f64>> = kept
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != drop)
                .flat_map(|(_, &(a, b))| pair_rows(&effects, &preps, &dirs, a, b))
                .collect();
            let m = Mat::from_fn(rows.len(), dirs.len(), |r, c| rows[r][c]);
            assert!(rank(&m, 1e-6) < kr);
        }
    }
}
