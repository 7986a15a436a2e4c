//! Linear-inversion GST from fiducial-pair and single-gate-sandwich data.

use crate::circuit_engine::{outcome_probabilities, Circuit, DataSet};
use crate::error::{GstError, Result};
use crate::experiment_design::{effective_preps, lgst_circuits, FiducialSet};
use crate::gateset_model::GateSet;
use crate::linalg::{cond, inverse, singular_values, svd_sorted, Mat, Vector};

/// Measured matrices of linear inversion. Rows index (measurement fiducial,
/// outcome) pairs; columns index prep fiducials.
#[derive(Clone, Debug)]
pub struct LgstIntermediates {
    pub gram: Mat,
    pub pk: Vec<Mat>,
    /// Per prep, one entry per row.
    pub r: Vec<Vector>,
    /// Per POVM and effect, one entry per prep fiducial.
    pub q: Vec<Vec<Vector>>,
    /// `d^2 x N_cols`, orthonormal rows spanning the dominant right singular space.
    pub pi: Mat,
    pub b0: Mat,
    /// (measurement fiducial, outcome) of each row.
    pub rows: Vec<(usize, usize)>,
    /// Smallest number of shots over the rows used, or `None` for exact input.
    pub min_shots: Option<u64>,
}

fn intermediates_from<F>(
    freq: F,
    fids: &FiducialSet,
    target: &GateSet,
    min_shots: Option<u64>,
) -> Result<LgstIntermediates>
where
    F: Fn(&Circuit) -> Result<Vec<f64>>,
{
    let d2 = target.d2();
    let mut rows = Vec::new();
    for (i, h) in fids.meas.iter().enumerate() {
        let k = target
            .povms
            .get(h.povm)
            .ok_or_else(|| GstError::InvalidArgument(format!("no POVM {}", h.povm)))?
            .len();
        rows.extend((0..k).map(|t| (i, t)));
    }
    let nr = rows.len();
    let nc = fids.preps.len();
    if nc < d2 || nr < d2 {
        return Err(GstError::InformationalIncompleteness {
            msg: format!("{nr} x {nc} Gram matrix cannot have rank {d2}"),
            spectrum: Vec::new(),
        });
    }
    let sandwich = |pre: &Circuit, mid: &Circuit| -> Result<Vec<Vec<f64>>> {
        // [meas fiducial][outcome]
        fids.meas.iter().map(|h| freq(&pre.then(mid).then(h))).collect()
    };
    let fill = |mid: &Circuit| -> Result<Mat> {
        let mut m = Mat::zeros(nr, nc);
        for (j, f) in fids.preps.iter().enumerate() {
            let p = sandwich(f, mid)?;
            for (r, &(i, t)) in rows.iter().enumerate() {
                m[(r, j)] = p[i][t];
            }
        }
        Ok(m)
    };
    let gram = fill(&Circuit::empty())?;
    let pk = target
        .gate_labels
        .iter()
        .map(|l| fill(&Circuit::from_labels(&[l])))
        .collect::<Result<Vec<_>>>()?;
    let mut r = Vec::new();
    for l in 0..target.preps.len() {
        let p = sandwich(&Circuit::empty().with_spam(l, 0), &Circuit::empty())?;
        r.push(Vector::from_iterator(nr, rows.iter().map(|&(i, t)| p[i][t])));
    }
    let mut q = Vec::new();
    for (m, povm) in target.povms.iter().enumerate() {
        let per_prep = fids
            .preps
            .iter()
            .map(|f| freq(&f.then(&Circuit::empty().with_spam(0, m))))
            .collect::<Result<Vec<_>>>()?;
        q.push(
            (0..povm.len())
                .map(|t| Vector::from_iterator(nc, per_prep.iter().map(|p| p[t])))
                .collect(),
        );
    }
    let svd = svd_sorted(&gram);
    let pi = svd.vt.rows(0, d2).into_owned();
    let b_target = columns(&effective_preps(target, &fids.preps)?);
    let b0 = b_target * pi.transpose();
    Ok(LgstIntermediates { gram, pk, r, q, pi, b0, rows, min_shots })
}

fn columns(vs: &[Vector]) -> Mat {
    let n = vs.first().map(|v| v.len()).unwrap_or(0);
    Mat::from_fn(n, vs.len(), |r, c| vs[c][r])
}

/// Intermediates from observed frequencies.
pub fn estimate_probabilities(ds: &DataSet, fids: &FiducialSet, target: &GateSet) -> Result<LgstIntermediates> {
    if ds.is_empty() {
        return Err(GstError::InvalidArgument("data set is empty".into()));
    }
    let needed = lgst_circuits(target, fids);
    let missing = ds.missing(&needed);
    if !missing.is_empty() {
        return Err(GstError::MissingCircuits(missing));
    }
    let min_shots = needed.iter().filter_map(|c| ds.get(c)).map(|r| r.total).min();
    intermediates_from(
        |c| {
            let row = ds.get(c).ok_or_else(|| GstError::MissingCircuits(vec![c.to_string()]))?;
            Ok(row.frequencies())
        },
        fids,
        target,
        min_shots,
    )
}

/// Intermediates from the exact probabilities of `truth`.
pub fn exact_intermediates(truth: &GateSet, fids: &FiducialSet, target: &GateSet) -> Result<LgstIntermediates> {
    intermediates_from(|c| outcome_probabilities(truth, c), fids, target, None)
}

pub fn gram_spectrum(ds: &DataSet, fids: &FiducialSet, target: &GateSet) -> Result<Vec<f64>> {
    Ok(singular_values(&estimate_probabilities(ds, fids, target)?.gram))
}

/// Threshold on the `d^2`-th Gram singular value.
pub fn feasibility_threshold(min_shots: Option<u64>) -> f64 {
    match min_shots {
        Some(n) if n > 0 => (5.0 / (n as f64).sqrt()).max(1e-6),
        _ => 1e-6,
    }
}

/// Gate set reconstructed with gauge fixed by `b0`.
pub fn reconstruct(it: &LgstIntermediates, target: &GateSet, b0: &Mat) -> Result<GateSet> {
    let d2 = target.d2();
    let spectrum = singular_values(&it.gram);
    let thresh = feasibility_threshold(it.min_shots);
    if spectrum.len() < d2 || spectrum[d2 - 1] < thresh {
        return Err(GstError::InformationalIncompleteness {
            msg: format!(
                "Gram matrix singular value {d2} is below {thresh:.3e}; add or change fiducials"
            ),
            spectrum,
        });
    }
    let ipt = &it.gram * it.pi.transpose();
    let normal = ipt.transpose() * &ipt;
    let normal_inv = inverse(&normal)?;
    let b0_inv = inverse(b0)?;
    let mut gs = GateSet::new(target.basis.clone());
    for (label, pk) in target.gate_labels.iter().zip(&it.pk) {
        let g = b0 * &normal_inv * ipt.transpose() * pk * it.pi.transpose() * &b0_inv;
        gs.add_gate(label, g);
    }
    for r in &it.r {
        gs.preps.push(b0 * &normal_inv * ipt.transpose() * r);
    }
    for (m, effects) in it.q.iter().enumerate() {
        let povm: Vec<Vector> = effects
            .iter()
            .map(|q| (q.transpose() * it.pi.transpose() * &b0_inv).transpose())
            .collect();
        gs.add_povm(povm);
        gs.effect_labels[m] = target.effect_labels[m].clone();
    }
    Ok(gs)
}

impl LgstIntermediates {
    /// Estimate of the operation `X` whose fiducial sandwich matrix is `p`,
    /// in the same gauge as [`reconstruct`] with `b0`.
    pub fn estimate_operation(&self, p: &Mat, b0: &Mat) -> Result<Mat> {
        if p.shape() != self.gram.shape() {
            return Err(GstError::InvalidArgument("sandwich matrix shape does not match the Gram matrix".into()));
        }
        let ipt = &self.gram * self.pi.transpose();
        let normal_inv = inverse(&(ipt.transpose() * &ipt))?;
        Ok(b0 * normal_inv * ipt.transpose() * p * self.pi.transpose() * inverse(b0)?)
    }
}

/// Observed frequencies of `F_j mid H_i` laid out like the Gram matrix.
pub fn sandwich_matrix(ds: &DataSet, fids: &FiducialSet, rows: &[(usize, usize)], mid: &Circuit) -> Result<Mat> {
    let mut m = Mat::zeros(rows.len(), fids.preps.len());
    let mut missing = Vec::new();
    for (j, f) in fids.preps.iter().enumerate() {
        for (r, &(i, t)) in rows.iter().enumerate() {
            let c = f.then(mid).then(&fids.meas[i]);
            match ds.get(&c) {
                Some(row) => m[(r, j)] = row.frequencies().get(t).copied().unwrap_or(0.0),
                None => missing.push(c.to_string()),
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(GstError::MissingCircuits(missing));
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct LgstResult {
    pub gateset: GateSet,
    pub gram_spectrum: Vec<f64>,
    pub cond_b0: f64,
    pub cond_gram: f64,
}

impl LgstResult {
    pub fn diagnostics_json(&self) -> serde_json::Value {
        let d2 = self.gateset.d2();
        serde_json::json!({
            "gram_spectrum": self.gram_spectrum,
            "cond_b0": self.cond_b0,
            "cond_gram_top": self.gram_spectrum.first().copied().unwrap_or(0.0)
                / self.gram_spectrum.get(d2 - 1).copied().unwrap_or(f64::NAN),
        })
    }
}

pub fn run_lgst_from(it: &LgstIntermediates, target: &GateSet) -> Result<LgstResult> {
    let gateset = reconstruct(it, target, &it.b0)?;
    let gram_spectrum = singular_values(&it.gram);
    Ok(LgstResult {
        gateset,
        cond_b0: cond(&it.b0),
        cond_gram: cond(&(&it.gram * it.pi.transpose())),
        gram_spectrum,
    })
}

pub fn run_lgst(ds: &DataSet, fids: &FiducialSet, target: &GateSet) -> Result<LgstResult> {
    run_lgst_from(&estimate_probabilities(ds, fids, target)?, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit_engine::simulate;
    use crate::experiment_design::effective_effects;
    use crate::linalg::rank;
    use crate::models::{perturb, std_fiducials_xyi, std_germs_xyi, target_xyi};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_fids() -> FiducialSet {
        FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() }
    }

    fn noisy(seed: u64) -> GateSet {
        perturb(&target_xyi(), Default::default(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn test_circuits() -> Vec<Circuit> {
        let mut cs: Vec<Circuit> = std_germs_xyi();
        for g in std_germs_xyi() {
            for f in std_fiducials_xyi() {
                cs.push(f.then(&g.repeat(3)));
            }
        }
        cs
    }

    fn max_prob_diff(a: &GateSet, b: &GateSet) -> f64 {
        test_circuits()
            .iter()
            .map(|c| {
                let pa = outcome_probabilities(a, c).unwrap();
                let pb = outcome_probabilities(b, c).unwrap();
                pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn exact_gram_matches_fiducial_vectors() {
        let truth = noisy(1);
        let f = std_fids();
        let it = exact_intermediates(&truth, &f, &target_xyi()).unwrap();
        let a: Vec<Vector> = effective_effects(&truth, &f.meas).unwrap().into_iter().map(|e| e.vector).collect();
        let b = columns(&effective_preps(&truth, &f.preps).unwrap());
        let ab = columns(&a).transpose() * b;
        assert!((&it.gram - ab).amax() < 1e-12);
        let pp = &it.pi * it.pi.transpose();
        assert!((pp - Mat::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn overcomplete_exact_recovers_probabilities() {
        let truth = noisy(2);
        let r = run_lgst_from(&exact_intermediates(&truth, &std_fids(), &target_xyi()).unwrap(), &target_xyi()).unwrap();
        assert!(max_prob_diff(&r.gateset, &truth) < 1e-10);
    }

    /// Square-case inversion written directly: A = I B0^-1, G = B0 I^-1 P B0^-1.
    fn square_oracle(truth: &GateSet, target: &GateSet) -> GateSet {
        let fids: Vec<Circuit> = ["{}", "Gx", "Gy", "Gx Gx"].iter().map(|s| Circuit::parse(s).unwrap()).collect();
        let prob = |c: &Circuit| outcome_probabilities(truth, c).unwrap()[0];
        let mat = |mid: &Circuit| Mat::from_fn(4, 4, |i, j| prob(&fids[j].then(mid).then(&fids[i])));
        let gram = mat(&Circuit::empty());
        let b0 = columns(&effective_preps(target, &fids).unwrap());
        let gi = gram.clone().try_inverse().unwrap();
        let b0i = b0.clone().try_inverse().unwrap();
        let mut gs = GateSet::new(target.basis.clone());
        for l in &target.gate_labels {
            gs.add_gate(l, &b0 * &gi * mat(&Circuit::from_labels(&[l])) * &b0i);
        }
        let r = Vector::from_fn(4, |i, _| prob(&fids[i]));
        gs.preps.push(&b0 * &gi * r);
        let e0 = Vector::from_fn(4, |j, _| prob(&fids[j])).transpose() * &b0i;
        let e0 = e0.transpose();
        let e1 = Vector::from_fn(4, |j, _| outcome_probabilities(truth, &fids[j]).unwrap()[1]).transpose() * &b0i;
        gs.add_povm(vec![e0, e1.transpose()]);
        gs
    }

    #[test]
    fn square_and_overcomplete_agree() {
        let truth = noisy(3);
        let t = target_xyi();
        let square = square_oracle(&truth, &t);
        let four: Vec<Circuit> = ["{}", "Gx", "Gy", "Gx Gx"].iter().map(|s| Circuit::parse(s).unwrap()).collect();
        let f = FiducialSet { preps: four.clone(), meas: four };
        let over = run_lgst_from(&exact_intermediates(&truth, &f, &t).unwrap(), &t).unwrap();
        assert!(max_prob_diff(&square, &over.gateset) < 1e-10);
        assert!(max_prob_diff(&square, &truth) < 1e-10);
    }

    #[test]
    fn b0_only_changes_gauge() {
        let truth = noisy(4);
        let t = target_xyi();
        let it = exact_intermediates(&truth, &std_fids(), &t).unwrap();
        let a = reconstruct(&it, &t, &it.b0).unwrap();
        let other = &it.b0 + Mat::from_fn(4, 4, |i, j| 0.1 * ((i * 3 + j) % 5) as f64 - 0.2);
        let b = reconstruct(&it, &t, &other).unwrap();
        assert!(max_prob_diff(&a, &b) < 1e-12);
        assert!((&a.gates[1] - &b.gates[1]).amax() > 1e-3);
    }

    #[test]
    fn pi_is_best_rank_d2_projector() {
        let truth = noisy(5);
        let it = exact_intermediates(&truth, &std_fids(), &target_xyi()).unwrap();
        let noise = Mat::from_fn(it.gram.nrows(), it.gram.ncols(), |i, j| 1e-3 * (((i * 7 + j * 13) % 11) as f64 - 5.0));
        let g = &it.gram + noise;
        let pi = svd_sorted(&g).vt.rows(0, 4).into_owned();
        let err = |p: &Mat| (&g - &g * p.transpose() * p).norm_squared();
        let best = err(&pi);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        for _ in 0..50 {
            let m = Mat::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
            let q = m.transpose().qr().q().transpose();
            assert!(err(&q) >= best - 1e-12);
        }
    }

    #[test]
    fn gram_spectrum_has_d2_large_values() {
        let t = target_xyi();
        let it = exact_intermediates(&t, &std_fids(), &t).unwrap();
        let s = singular_values(&it.gram);
        assert_eq!(s.iter().filter(|&&x| x > 1e-6).count(), 4);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let bad: Vec<Circuit> = ["{}", "Gi", "Gx Gx", "Gi Gi", "Gx Gx Gi", "Gi Gx Gx"].iter().map(|s| Circuit::parse(s).unwrap()).collect();
        let f = FiducialSet { preps: bad.clone(), meas: bad };
        let it = exact_intermediates(&t, &f, &t).unwrap();
        assert!(rank(&it.gram, 1e-6) < 4);
        assert!(matches!(run_lgst_from(&it, &t), Err(GstError::InformationalIncompleteness { .. })));
    }

    #[test]
    fn sampled_data_frequencies_and_errors() {
        let truth = noisy(6);
        let t = target_xyi();
        let f = std_fids();
        let ds = simulate(&truth, &lgst_circuits(&t, &f), 10_000, 1).unwrap();
        let it = estimate_probabilities(&ds, &f, &t).unwrap();
        assert!(it.gram.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let r = run_lgst_from(&it, &t).unwrap();
        assert!(max_prob_diff(&r.gateset, &truth) < 0.05);
        assert!(matches!(estimate_probabilities(&DataSet::new(), &f, &t), Err(GstError::InvalidArgument(_))));
        let mut partial = DataSet::new();
        let first = ds.rows()[0].clone();
        partial.insert(first.circuit, first.counts);
        assert!(matches!(estimate_probabilities(&partial, &f, &t), Err(GstError::MissingCircuits(_))));
    }
}
