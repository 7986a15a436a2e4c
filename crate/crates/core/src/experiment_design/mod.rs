//! Fiducial and germ selection, long-sequence design construction, and
//! fiducial-pair reduction.

mod fiducials;
mod fpr;
pub mod germs;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::circuit_engine::{compose, Circuit};
use crate::error::{GstError, Result};
use crate::gateset_model::GateSet;
use crate::linalg::Vector;

pub use fiducials::{fiducial_scores, select_fiducials, FiducialScores};
pub use fpr::{reduce_fiducial_pairs, FprReport};
pub use germs::{
    amplified_ranks, germ_jacobian, germ_model, germ_set_score, is_amplificationally_complete,
    select_germs, twirled_germ_jacobian, AmplificationReport, CommutantProjector, GermContext,
    GermSet,
};

/// Candidate fiducial depth cutoff.
pub const DEFAULT_FIDUCIAL_CUTOFF: usize = 3;
/// Candidate germ depth cutoff. Depth 4 reaches completeness on one qubit only
/// through the degeneracy-breaking perturbation, so the default is 6.
pub const DEFAULT_GERM_CUTOFF: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiducialSet {
    pub preps: Vec<Circuit>,
    pub meas: Vec<Circuit>,
}

/// `tau(F_j) rho`, using the prep index carried by each fiducial.
pub fn effective_preps(gs: &GateSet, fids: &[Circuit]) -> Result<Vec<Vector>> {
    fids.iter()
        .map(|f| {
            let rho = gs
                .preps
                .get(f.prep)
                .ok_or_else(|| GstError::InvalidArgument(format!("no prep {}", f.prep)))?;
            Ok(compose(f, gs)? * rho)
        })
        .collect()
}

/// One effective effect `tau(H_h)^T E_t` per (fiducial, outcome).
#[derive(Clone, Debug)]
pub struct EffectiveEffect {
    pub fiducial: usize,
    pub outcome: usize,
    pub vector: Vector,
}

pub fn effective_effects(gs: &GateSet, fids: &[Circuit]) -> Result<Vec<EffectiveEffect>> {
    let mut out = Vec::new();
    for (h, f) in fids.iter().enumerate() {
        let povm = gs
            .povms
            .get(f.povm)
            .ok_or_else(|| GstError::InvalidArgument(format!("no POVM {}", f.povm)))?;
        let t = compose(f, gs)?.transpose();
        for (k, e) in povm.iter().enumerate() {
            out.push(EffectiveEffect {
                fiducial: h,
                outcome: k,
                vector: &t * e,
            });
        }
    }
    Ok(out)
}

/// Every label sequence of length `min_len..=max_len`, ordered by length and
/// then lexicographically by label position.
pub fn all_sequences(labels: &[String], min_len: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut level: Vec<Vec<usize>> = vec![Vec::new()];
    for len in 0..=max_len {
        if len >= min_len {
            out.extend(level.iter().cloned());
        }
        let mut next = Vec::with_capacity(level.len() * labels.len());
        for s in &level {
            for i in 0..labels.len() {
                let mut t = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        level = next;
    }
    out
}

fn to_circuit(labels: &[String], seq: &[usize]) -> Circuit {
    let l: Vec<&str> = seq.iter().map(|&i| labels[i].as_str()).collect();
    Circuit::from_labels(&l)
}

/// Candidate fiducials: all sequences up to `max_len`, shortest first.
pub fn fiducial_candidates(labels: &[String], max_len: usize) -> Vec<Circuit> {
    all_sequences(labels, 0, max_len)
        .iter()
        .map(|s| to_circuit(labels, s))
        .collect()
}

fn is_power(seq: &[usize]) -> bool {
    let n = seq.len();
    (1..n).any(|k| n % k == 0 && (0..n).all(|i| seq[i] == seq[i % k]))
}

fn is_min_rotation(seq: &[usize]) -> bool {
    let n = seq.len();
    (1..n).all(|r| {
        let rot: Vec<usize> = (0..n).map(|i| seq[(i + r) % n]).collect();
        seq <= rot.as_slice()
    })
}

/// Candidate germs: one representative per cyclic class, powers dropped.
pub fn germ_candidates(labels: &[String], max_len: usize) -> Vec<Circuit> {
    all_sequences(labels, 1, max_len)
        .iter()
        .filter(|s| !is_power(s) && is_min_rotation(s))
        .map(|s| to_circuit(labels, s))
        .collect()
}

/// One long-sequence tuple: measurement fiducial `a`, prep fiducial `b`,
/// germ `germ`, nominal depth `l`, germ power `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignEntry {
    pub meas: usize,
    pub prep: usize,
    pub germ: usize,
    pub l: usize,
    pub power: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentDesign {
    pub fiducials: FiducialSet,
    pub germs: Vec<Circuit>,
    pub max_depths: Vec<usize>,
    pub entries: Vec<DesignEntry>,
    /// Circuits needed by linear inversion, present at every depth.
    pub lgst_circuits: Vec<Circuit>,
    /// Per germ, the (meas, prep) fiducial pairs kept after reduction.
    pub kept_pairs: Option<Vec<Vec<(usize, usize)>>>,
    circuits: Vec<Circuit>,
    gate_labels: Vec<String>,
    n_preps: usize,
    n_povms: usize,
}

#[derive(Serialize, Deserialize)]
struct DesignJson {
    prep_fiducials: Vec<String>,
    meas_fiducials: Vec<String>,
    germs: Vec<String>,
    max_depths: Vec<usize>,
    gate_labels: Vec<String>,
    n_preps: usize,
    n_povms: usize,
    entries: Vec<[usize; 5]>,
    kept_pairs: Option<Vec<Vec<(usize, usize)>>>,
    lgst_circuits: Vec<String>,
    circuits: Vec<String>,
}

impl ExperimentDesign {
    pub fn entry_circuit(&self, e: &DesignEntry) -> Circuit {
        self.fiducials.preps[e.prep]
            .then(&self.germs[e.germ].repeat(e.power))
            .then(&self.fiducials.meas[e.meas])
    }

    /// Unique circuits in first-appearance order.
    pub fn circuits(&self) -> &[Circuit] {
        &self.circuits
    }

    /// Circuits whose germ-power depth `|g| p` is at most `depth`, plus the
    /// linear-inversion circuits.
    pub fn truncated(&self, depth: usize) -> Vec<Circuit> {
        let mut keep: HashSet<Circuit> = self.lgst_circuits.iter().cloned().collect();
        for e in &self.entries {
            if self.germs[e.germ].depth() * e.power <= depth {
                keep.insert(self.entry_circuit(e));
            }
        }
        self.circuits.iter().filter(|c| keep.contains(c)).cloned().collect()
    }

    /// Circuit lists for each stage `max_depths[0..=k]`.
    pub fn stages(&self) -> Vec<(usize, Vec<Circuit>)> {
        self.max_depths.iter().map(|&l| (l, self.truncated(l))).collect()
    }

    fn rebuild_circuits(&mut self) {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let entry_circuits: Vec<Circuit> = self.entries.iter().map(|e| self.entry_circuit(e)).collect();
        for c in self.lgst_circuits.iter().chain(entry_circuits.iter()) {
            if seen.insert(c.clone()) {
                out.push(c.clone());
            }
        }
        self.circuits = out;
    }

    /// Keeps only entries whose (meas, prep) pair is listed for their germ.
    pub fn with_kept_pairs(&self, kept: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        if kept.len() != self.germs.len() {
            return Err(GstError::InvalidArgument("one pair list per germ required".into()));
        }
        let sets: Vec<HashSet<(usize, usize)>> = kept.iter().map(|k| k.iter().copied().collect()).collect();
        let mut d = self.clone();
        d.entries.retain(|e| sets[e.germ].contains(&(e.meas, e.prep)));
        d.kept_pairs = Some(kept);
        d.rebuild_circuits();
        Ok(d)
    }

    pub fn to_json(&self) -> Value {
        let texts = |v: &[Circuit]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>();
        let doc = DesignJson {
            prep_fiducials: texts(&self.fiducials.preps),
            meas_fiducials: texts(&self.fiducials.meas),
            germs: texts(&self.germs),
            max_depths: self.max_depths.clone(),
            gate_labels: self.gate_labels.clone(),
            n_preps: self.n_preps,
            n_povms: self.n_povms,
            entries: self
                .entries
                .iter()
                .map(|e| [e.meas, e.prep, e.germ, e.l, e.power])
                .collect(),
            kept_pairs: self.kept_pairs.clone(),
            lgst_circuits: texts(&self.lgst_circuits),
            circuits: texts(&self.circuits),
        };
        serde_json::to_value(doc).expect("serializable")
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let doc: DesignJson = serde_json::from_value(v.clone())?;
        let parse = |v: &[String]| v.iter().map(|t| Circuit::parse(t)).collect::<Result<Vec<_>>>();
        let mut d = ExperimentDesign {
            fiducials: FiducialSet {
                preps: parse(&doc.prep_fiducials)?,
                meas: parse(&doc.meas_fiducials)?,
            },
            germs: parse(&doc.germs)?,
            max_depths: doc.max_depths,
            entries: doc
                .entries
                .iter()
                .map(|e| DesignEntry { meas: e[0], prep: e[1], germ: e[2], l: e[3], power: e[4] })
                .collect(),
            lgst_circuits: parse(&doc.lgst_circuits)?,
            kept_pairs: doc.kept_pairs,
            circuits: Vec::new(),
            gate_labels: doc.gate_labels,
            n_preps: doc.n_preps,
            n_povms: doc.n_povms,
        };
        for e in &d.entries {
            if e.meas >= d.fiducials.meas.len() || e.prep >= d.fiducials.preps.len() || e.germ >= d.germs.len() {
                return Err(GstError::Parse { line: 0, msg: format!("design entry {e:?} out of range") });
            }
        }
        d.rebuild_circuits();
        if parse(&doc.circuits)? != d.circuits {
            return Err(GstError::Parse {
                line: 0,
                msg: "circuit list does not match the design tuples".into(),
            });
        }
        Ok(d)
    }
}

/// Linear-inversion circuits: fiducial pairs, gate sandwiches, and the
/// extra SPAM tomography circuits for additional preps and POVMs.
pub fn lgst_circuits(target: &GateSet, fids: &FiducialSet) -> Vec<Circuit> {
    let mut out = Vec::new();
    for f in &fids.preps {
        for h in &fids.meas {
            out.push(f.then(h));
        }
    }
    for label in &target.gate_labels {
        let g = Circuit::from_labels(&[label]);
        for f in &fids.preps {
            for h in &fids.meas {
                out.push(f.then(&g).then(h));
            }
        }
    }
    for l in 0..target.preps.len() {
        for h in &fids.meas {
            out.push(Circuit::empty().with_spam(l, 0).then(h));
        }
    }
    for f in &fids.preps {
        for m in 0..target.povms.len() {
            out.push(f.then(&Circuit::empty().with_spam(0, m)));
        }
    }
    out
}

/// Long-sequence design: `F_b g^p H_a` for every fiducial pair, germ and
/// depth `l` with `p = floor(l / |g|) >= 1`.
pub fn build_design(
    target: &GateSet,
    fids: &FiducialSet,
    germs: &[Circuit],
    max_depths: &[usize],
) -> Result<ExperimentDesign> {
    if fids.preps.is_empty() || fids.meas.is_empty() {
        return Err(GstError::InvalidArgument("empty fiducial set".into()));
    }
    if max_depths.is_empty() || max_depths.windows(2).any(|w| w[0] >= w[1]) || max_depths[0] == 0 {
        return Err(GstError::InvalidArgument(
            "max depths must be positive and strictly increasing".into(),
        ));
    }
    for c in fids.preps.iter().chain(&fids.meas).chain(germs) {
        c.resolve(target)?;
    }
    if let Some(g) = germs.iter().find(|g| g.depth() == 0) {
        return Err(GstError::InvalidArgument(format!("empty germ '{g}'")));
    }
    let mut entries = Vec::new();
    for &l in max_depths {
        for (gi, g) in germs.iter().enumerate() {
            let p = l / g.depth();
            if p == 0 {
                continue;
            }
            for a in 0..fids.meas.len() {
                for b in 0..fids.preps.len() {
                    entries.push(DesignEntry { meas: a, prep: b, germ: gi, l, power: p });
                }
            }
        }
    }
    let mut d = ExperimentDesign {
        fiducials: fids.clone(),
        germs: germs.to_vec(),
        max_depths: max_depths.to_vec(),
        entries,
        lgst_circuits: lgst_circuits(target, fids),
        kept_pairs: None,
        circuits: Vec::new(),
        gate_labels: target.gate_labels.clone(),
        n_preps: target.preps.len(),
        n_povms: target.povms.len(),
    };
    d.rebuild_circuits();
    Ok(d)
}

/// Powers of two `1, 2, 4, ..., <= max`.
pub fn powers_of_two(max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |l| l.checked_mul(2))
        .take_while(|&l| l <= max)
        .collect()
}

/// Number of distinct (fiducial pair, germ, power) circuits; depths that
/// give the same power share a circuit.
pub fn count_by_germ(d: &ExperimentDesign) -> HashMap<usize, usize> {
    let mut out = HashMap::new();
    let mut seen = HashSet::new();
    for e in &d.entries {
        if seen.insert(d.entry_circuit(e)) {
            *out.entry(e.germ).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{std_fiducials_xyi, std_germs_xyi, target_xyi};

    fn std_fids() -> FiducialSet {
        FiducialSet {
            preps: std_fiducials_xyi(),
            meas: std_fiducials_xyi(),
        }
    }

    #[test]
    fn germ_candidates_are_primitive_cycle_representatives() {
        let labels: Vec<String> = ["Gi", "Gx", "Gy"].iter().map(|s| s.to_string()).collect();
        let c = germ_candidates(&labels, 4);
        // necklace counts of primitive words: 3 + 3 + 8 + 18
        assert_eq!(c.len(), 32);
        assert!(c.contains(&Circuit::parse("Gx Gy").unwrap()));
        assert!(!c.contains(&Circuit::parse("Gy Gx").unwrap()));
        assert!(!c.contains(&Circuit::parse("Gx Gx").unwrap()));
        assert_eq!(fiducial_candidates(&labels, 3).len(), 1 + 3 + 9 + 27);
    }

    #[test]
    fn germ_power_from_depth() {
        let t = target_xyi();
        let g = Circuit::parse("Gx Gy Gi Gx Gy").unwrap();
        let d = build_design(&t, &std_fids(), &[g], &[1, 2, 4, 8, 16]).unwrap();
        let powers: Vec<(usize, usize)> = d.entries.iter().map(|e| (e.l, e.power)).collect();
        assert!(powers.contains(&(8, 1)));
        assert!(powers.contains(&(16, 3)));
        assert!(!powers.iter().any(|&(l, _)| l < 5));
    }

    #[test]
    fn standard_design_size() {
        let t = target_xyi();
        let depths = powers_of_two(8192);
        let d = build_design(&t, &std_fids(), &std_germs_xyi(), &depths).unwrap();
        let tuples: usize = d.entries.len();
        // 11 germs over 14 depths, minus depths shorter than each germ
        let expected: usize = std_germs_xyi()
            .iter()
            .map(|g| depths.iter().filter(|&&l| l >= g.depth()).count() * 36)
            .sum();
        assert_eq!(tuples, expected);
        // unique circuits are fewer (shared fiducial products, l=1 overlaps)
        assert!(d.circuits().len() <= tuples + d.lgst_circuits.len());
        let mut uniq = HashSet::new();
        assert!(d.circuits().iter().all(|c| uniq.insert(c.clone())));
    }

    #[test]
    fn truncation_is_nested_and_contains_lgst() {
        let t = target_xyi();
        let d = build_design(&t, &std_fids(), &std_germs_xyi(), &[1, 2, 4, 8]).unwrap();
        let stages = d.stages();
        for w in stages.windows(2) {
            let prev: HashSet<&Circuit> = w[0].1.iter().collect();
            let next: HashSet<&Circuit> = w[1].1.iter().collect();
            assert!(prev.is_subset(&next));
        }
        for c in &d.lgst_circuits {
            assert!(stages[0].1.contains(c));
        }
        assert_eq!(stages.last().unwrap().1.len(), d.circuits().len());
    }

    #[test]
    fn json_round_trip() {
        let t = target_xyi();
        let d = build_design(&t, &std_fids(), &std_germs_xyi(), &[1, 2, 4]).unwrap();
        let back = ExperimentDesign::from_json(&d.to_json()).unwrap();
        assert_eq!(back.circuits(), d.circuits());
        assert_eq!(back.entries, d.entries);
        let mut bad = d.to_json();
        bad["circuits"][0] = Value::String("Gx Gx Gx Gx Gx".into());
        assert!(ExperimentDesign::from_json(&bad).is_err());
    }

    #[test]
    fn rejects_bad_depths() {
        let t = target_xyi();
        assert!(build_design(&t, &std_fids(), &std_germs_xyi(), &[2, 1]).is_err());
        assert!(build_design(&t, &std_fids(), &std_germs_xyi(), &[]).is_err());
    }
}
