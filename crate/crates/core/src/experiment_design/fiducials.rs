use super::{effective_effects, effective_preps, FiducialSet};
use crate::circuit_engine::Circuit;
use crate::error::{GstError, Result};
use crate::gateset_model::GateSet;
use crate::linalg::{singular_values, Mat, Vector};

const MIN_SCORE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct FiducialScores {
    /// `sigma_{d^2}` of the effective prep matrix over `sqrt(n_preps)`.
    pub prep: f64,
    pub meas: f64,
    /// Singular values of the fiducial-pair Gram matrix.
    pub gram_spectrum: Vec<f64>,
}

impl FiducialScores {
    pub fn is_complete(&self) -> bool {
        self.prep > MIN_SCORE && self.meas > MIN_SCORE
    }
}

fn columns(vs: &[Vector]) -> Mat {
    let n = vs.first().map(|v| v.len()).unwrap_or(0);
    Mat::from_fn(n, vs.len(), |r, c| vs[c][r])
}

/// Smallest relevant singular value over `sqrt(columns)`; below `d^2`
/// columns, the geometric mean of the available ones.
fn set_score(vs: &[Vector], d2: usize) -> (f64, f64) {
    if vs.is_empty() {
        return (0.0, 0.0);
    }
    let s = singular_values(&columns(vs));
    let k = vs.len().min(d2);
    let volume: f64 = s.iter().take(k).map(|x| x.max(1e-300).ln()).sum::<f64>() / k as f64;
    let score = if vs.len() >= d2 { s[d2 - 1] / (vs.len() as f64).sqrt() } else { 0.0 };
    (score, volume)
}

pub fn fiducial_scores(target: &GateSet, fids: &FiducialSet) -> Result<FiducialScores> {
    let d2 = target.d2();
    let preps = effective_preps(target, &fids.preps)?;
    let effects: Vec<Vector> = effective_effects(target, &fids.meas)?.into_iter().map(|e| e.vector).collect();
    let gram = columns(&effects).transpose() * columns(&preps);
    Ok(FiducialScores {
        prep: set_score(&preps, d2).0,
        meas: set_score(&effects, d2).0,
        gram_spectrum: singular_values(&gram),
    })
}

/// Picks a subset of `vectors[i]` (grouped per candidate) maximizing the score.
fn select_one_side(
    groups: &[Vec<Vector>],
    lengths: &[usize],
    d2: usize,
    sizes: (usize, usize),
) -> (Vec<usize>, f64) {
    let eval = |set: &[usize]| {
        let vs: Vec<Vector> = set.iter().flat_map(|&i| groups[i].iter().cloned()).collect();
        set_score(&vs, d2)
    };
    let total_len = |set: &[usize]| set.iter().map(|&i| lengths[i]).sum::<usize>();
    // (score, -length) ordering; `a` beats `b`
    let beats = |a: (f64, usize), b: (f64, usize)| {
        if a.0 > b.0 * (1.0 + 1e-9) + 1e-15 {
            true
        } else {
            (a.0 - b.0).abs() <= 1e-9 * b.0.max(1e-15) && a.1 < b.1
        }
    };
    let mut best: (Vec<usize>, f64) = (Vec::new(), 0.0);
    for size in sizes.0..=sizes.1 {
        let mut set: Vec<usize> = Vec::new();
        while set.len() < size {
            let mut pick: Option<(usize, (f64, f64))> = None;
            for i in 0..groups.len() {
                if set.contains(&i) {
                    continue;
                }
                let mut s = set.clone();
                s.push(i);
                let sc = eval(&s);
                let better = match pick {
                    None => true,
                    Some((_, p)) => (sc.0, sc.1) > (p.0 * (1.0 + 1e-9), p.1 + 1e-9),
                };
                if better {
                    pick = Some((i, sc));
                }
            }
            match pick {
                Some((i, _)) => set.push(i),
                None => break,
            }
        }
        if set.len() < size {
            continue;
        }
        // swap passes
        let mut cur = (eval(&set).0, total_len(&set));
        loop {
            let mut improved = false;
            for pos in 0..set.len() {
                for i in 0..groups.len() {
                    if set.contains(&i) {
                        continue;
                    }
                    let mut s = set.clone();
                    s[pos] = i;
                    let sc = (eval(&s).0, total_len(&s));
                    if beats(sc, cur) {
                        set = s;
                        cur = sc;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        let best_len = total_len(&best.0);
        if best.0.is_empty() || beats((cur.0, cur.1), (best.1, best_len)) {
            set.sort_unstable();
            best = (set, cur.0);
        }
    }
    best
}

/// Runs the search over candidates with distinct effective vectors, keeping
/// the first (shortest) of each equivalent group.
fn select_distinct(
    groups: &[Vec<Vector>],
    lengths: &[usize],
    d2: usize,
    sizes: (usize, usize),
) -> (Vec<usize>, f64) {
    let mut keep: Vec<usize> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let dup = keep.iter().any(|&j| {
            groups[j].len() == g.len() && groups[j].iter().zip(g).all(|(a, b)| (a - b).amax() < 1e-9)
        });
        if !dup {
            keep.push(i);
        }
    }
    let sub: Vec<Vec<Vector>> = keep.iter().map(|&i| groups[i].clone()).collect();
    let sub_len: Vec<usize> = keep.iter().map(|&i| lengths[i]).collect();
    let (set, score) = select_one_side(&sub, &sub_len, d2, sizes);
    (set.into_iter().map(|i| keep[i]).collect(), score)
}

/// Chooses prep and measurement fiducials from `candidates` with set sizes in
/// `count_range`, maximizing the smallest singular value of the effective
/// prep (effect) matrix per fiducial.
pub fn select_fiducials(
    target: &GateSet,
    candidates: &[Circuit],
    count_range: (usize, usize),
) -> Result<FiducialSet> {
    if count_range.0 == 0 || count_range.0 > count_range.1 {
        return Err(GstError::InvalidArgument(format!("bad fiducial count range {count_range:?}")));
    }
    let d2 = target.d2();
    let lengths: Vec<usize> = candidates.iter().map(|c| c.depth()).collect();
    let prep_groups: Vec<Vec<Vector>> = effective_preps(target, candidates)?.into_iter().map(|v| vec![v]).collect();
    let mut meas_groups: Vec<Vec<Vector>> = vec![Vec::new(); candidates.len()];
    for e in effective_effects(target, candidates)? {
        meas_groups[e.fiducial].push(e.vector);
    }
    let (pi, ps) = select_distinct(&prep_groups, &lengths, d2, count_range);
    let (mi, ms) = select_distinct(&meas_groups, &lengths, d2, count_range);
    if ps < MIN_SCORE || ms < MIN_SCORE {
        let all: Vec<Vector> = prep_groups.iter().flatten().cloned().collect();
        return Err(GstError::InformationalIncompleteness {
            msg: format!("no fiducial set spans the {d2}-dimensional state space (prep score {ps:.3e}, measurement score {ms:.3e})"),
            spectrum: singular_values(&columns(&all)),
        });
    }
    Ok(FiducialSet {
        preps: pi.iter().map(|&i| candidates[i].clone()).collect(),
        meas: mi.iter().map(|&i| candidates[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment_design::fiducial_candidates;
    use crate::models::{std_fiducials_xyi, target_xyi};

    #[test]
    fn standard_fiducials_are_complete() {
        let t = target_xyi();
        let f = FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() };
        let s = fiducial_scores(&t, &f).unwrap();
        assert!(s.is_complete());
        assert!(s.gram_spectrum[3] > 1e-6);
    }

    #[test]
    fn selection_finds_a_complete_set() {
        let t = target_xyi();
        let cands = fiducial_candidates(&t.gate_labels, 3);
        let f = select_fiducials(&t, &cands, (4, 6)).unwrap();
        let s = fiducial_scores(&t, &f).unwrap();
        assert!(s.is_complete());
        let std = fiducial_scores(&t, &FiducialSet { preps: std_fiducials_xyi(), meas: std_fiducials_xyi() }).unwrap();
        assert!(s.prep >= std.prep * (1.0 - 1e-9));
        assert!(s.meas >= std.meas * (1.0 - 1e-9));
    }

    #[test]
    fn selection_spans_the_cardinal_states() {
        let t = target_xyi();
        let f = select_fiducials(&t, &fiducial_candidates(&t.gate_labels, 3), (4, 6)).unwrap();
        let got = effective_preps(&t, &f.preps).unwrap();
        let want = effective_preps(&t, &std_fiducials_xyi()).unwrap();
        assert_eq!(got.len(), 6);
        for w in &want {
            assert!(got.iter().any(|g| (g - w).amax() < 1e-12));
        }
    }

    #[test]
    fn four_fiducials_give_full_gram_rank() {
        let t = target_xyi();
        let f = select_fiducials(&t, &fiducial_candidates(&t.gate_labels, 3), (4, 4)).unwrap();
        assert_eq!(f.preps.len(), 4);
        let s = fiducial_scores(&t, &f).unwrap();
        assert_eq!(s.gram_spectrum.iter().filter(|&&x| x > 1e-6 * s.gram_spectrum[0]).count(), 4);
    }

    #[test]
    fn identity_only_is_incomplete() {
        let mut t = target_xyi();
        t.gates.truncate(1);
        t.gate_labels.truncate(1);
        let cands = fiducial_candidates(&t.gate_labels, 3);
        let e = select_fiducials(&t, &cands, (4, 6)).unwrap_err();
        assert!(matches!(e, GstError::InformationalIncompleteness { .. }));
    }
}
