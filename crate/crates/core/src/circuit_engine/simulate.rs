use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use super::{outcome_probabilities, Circuit, DataSet};
use crate::error::{GstError, Result};
use crate::gateset_model::GateSet;
use crate::util::substream_seed;

const NEGATIVE_TOL: f64 = 1e-8;

/// Multinomial draw by a chain of conditional binomials.
pub(crate) fn multinomial(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            out.push(left);
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = if left == 0 || q == 0.0 {
            0
        } else if q >= 1.0 {
            left
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        out.push(k);
        left -= k;
        mass -= p;
    }
    out
}

/// Clipped and renormalized distribution; errors on clearly negative entries.
pub(crate) fn sampling_distribution(p: &[f64], circuit: &Circuit) -> Result<Vec<f64>> {
    if let Some(&bad) = p.iter().find(|&&x| x < -NEGATIVE_TOL) {
        return Err(GstError::SimulationDomain(format!(
            "probability {bad:e} for circuit '{circuit}'"
        )));
    }
    let clipped: Vec<f64> = p.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let s: f64 = clipped.iter().sum();
    if s <= 0.0 {
        return Err(GstError::SimulationDomain(format!(
            "all probabilities vanish for circuit '{circuit}'"
        )));
    }
    Ok(clipped.into_iter().map(|x| x / s).collect())
}

/// Samples `shots` repetitions of every circuit. Row `i` draws from its own
/// substream of `seed`, so the result does not depend on thread count.
pub fn simulate(gs: &GateSet, circuits: &[Circuit], shots: u64, seed: u64) -> Result<DataSet> {
    if shots == 0 {
        return Err(GstError::InvalidArgument("shots per circuit must be >= 1".into()));
    }
    let rows: Vec<Result<Vec<(String, u64)>>> = circuits
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let p = sampling_distribution(&outcome_probabilities(gs, c)?, c)?;
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, i as u64));
            let counts = multinomial(&mut rng, shots, &p);
            Ok(gs.effect_labels[c.povm].iter().cloned().zip(counts).collect())
        })
        .collect();
    let mut ds = DataSet::new();
    ds.meta.seed = Some(seed);
    ds.meta.gateset_hash = Some(gs.hash_hex());
    for (c, r) in circuits.iter().zip(rows) {
        ds.insert(c.clone(), r?);
    }
    Ok(ds)
}

/// Rows of exact expected frequencies at `shots` repetitions (rounded to
/// integers); with very large `shots` this stands in for infinite data.
pub fn exact_dataset(gs: &GateSet, circuits: &[Circuit], shots: u64) -> Result<DataSet> {
    let mut ds = DataSet::new();
    for c in circuits {
        let p = sampling_distribution(&outcome_probabilities(gs, c)?, c)?;
        let mut counts: Vec<u64> = p.iter().map(|x| (x * shots as f64).round() as u64).collect();
        // keep the total exact by adjusting the largest entry
        let sum: u64 = counts.iter().sum();
        let imax = (0..counts.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
        counts[imax] = (counts[imax] + shots).saturating_sub(sum);
        ds.insert(c.clone(), gs.effect_labels[c.povm].iter().cloned().zip(counts).collect());
    }
    ds.meta.gateset_hash = Some(gs.hash_hex());
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::target_xyi;

    #[test]
    fn deterministic_circuit_gives_all_counts() {
        let t = target_xyi();
        let ds = simulate(&t, &[Circuit::empty()], 1000, 99).unwrap();
        let r = ds.get(&Circuit::empty()).unwrap();
        assert_eq!(r.count("0"), 1000);
        assert_eq!(r.count("1"), 0);
    }

    #[test]
    fn half_probability_frequency() {
        let t = target_xyi();
        let c = Circuit::from_labels(&["Gx"]);
        let n = 1_000_000;
        let ds = simulate(&t, &[c.clone()], n, 5).unwrap();
        let f = ds.get(&c).unwrap().count("0") as f64 / n as f64;
        // 5 sigma of a binomial at p = 0.5
        assert!((f - 0.5).abs() < 5.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn same_seed_same_bytes() {
        let t = target_xyi();
        let cs: Vec<Circuit> = ["Gx", "Gx Gy", "Gy^3", "Gi Gx Gx"]
            .iter()
            .map(|s| Circuit::parse(s).unwrap())
            .collect();
        let a = simulate(&t, &cs, 100, 11).unwrap().to_text();
        let b = simulate(&t, &cs, 100, 11).unwrap().to_text();
        assert_eq!(a, b);
        let c = simulate(&t, &cs, 100, 12).unwrap().to_text();
        assert_ne!(a, c);
    }

    #[test]
    fn negative_probability_rejected() {
        let mut t = target_xyi();
        t.povms[0][0][3] = 2.0;
        t.povms[0][1][3] = -2.0;
        let err = simulate(&t, &[Circuit::empty()], 10, 0).unwrap_err();
        assert!(matches!(err, GstError::SimulationDomain(_)));
    }

    #[test]
    fn frequencies_converge() {
        let t = crate::models::perturb(&target_xyi(), Default::default(), &mut ChaCha8Rng::seed_from_u64(3));
        let labels = ["Gi", "Gx", "Gy"];
        let cs: Vec<Circuit> = (0..300)
            .map(|k| {
                let l: Vec<&str> = (0..(k % 7)).map(|j| labels[(k * 7 + j * 3) % 3]).collect();
                Circuit::from_labels(&l).repeat(1 + k % 3)
            })
            .collect();
        let mut uniq = Vec::new();
        for c in cs {
            if !uniq.contains(&c) {
                uniq.push(c);
            }
        }
        let n = 2000;
        let ds = simulate(&t, &uniq, n, 8).unwrap();
        let mut ok = 0;
        for c in &uniq {
            let p = outcome_probabilities(&t, c).unwrap()[0].clamp(0.0, 1.0);
            let f = ds.get(c).unwrap().count("0") as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            if (f - p).abs() < 5.0 * sd + 1e-12 {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.99 * uniq.len() as f64);
    }
}
