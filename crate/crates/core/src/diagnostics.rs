//! Goodness of fit: the total loglikelihood-ratio statistic in standard
//! deviations, per-circuit contributions, plaquette export, and the
//! two-circuit chi-squared bias example.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::circuit_engine::{Circuit, DataSet};
use crate::error::{invalid, Result};
use crate::estimation::objective::{deviance_term, row_probabilities, CompiledData, DEFAULT_P_MIN};
use crate::experiment_design::ExperimentDesign;
use crate::gateset_model::{num_nongauge_params, GateSet, ParamKind, Parameterization};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// `(2 (logL_max - logL) - k) / (2 sqrt k)`.
pub fn n_sigma(logl: f64, logl_max: f64, k: i64) -> Result<f64> {
    if k <= 0 {
        return invalid(format!("degrees of freedom must be positive, got {k}"));
    }
    let k = k as f64;
    Ok((2.0 * (logl_max - logl) - k) / (2.0 * k.sqrt()))
}

#[derive(Clone, Debug, Serialize)]
pub struct CircuitViolation {
    pub circuit: String,
    pub two_delta_logl: f64,
    pub dof: usize,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ViolationReport {
    pub two_delta_logl: f64,
    pub k: i64,
    pub n_outcomes: usize,
    pub n_nongauge_params: usize,
    pub n_sigma: f64,
    pub per_circuit: Vec<CircuitViolation>,
    /// Circuits of `per_circuit`, in the same order.
    #[serde(skip)]
    pub circuits: Vec<Circuit>,
    /// Per-circuit flagging threshold for one degree of freedom.
    pub threshold_per_circuit: f64,
    /// Confidence level each circuit is tested at, `(1 - alpha)^(1/K)`.
    pub per_test_confidence: f64,
    pub alpha: f64,
}

impl ViolationReport {
    pub fn flagged_fraction(&self) -> f64 {
        if self.per_circuit.is_empty() {
            return 0.0;
        }
        self.per_circuit.iter().filter(|c| c.flagged).count() as f64 / self.per_circuit.len() as f64
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }
}

fn chi2_quantile(dof: usize, q: f64) -> f64 {
    ChiSquared::new(dof as f64).map(|d| d.inverse_cdf(q)).unwrap_or(f64::INFINITY)
}

/// Loglikelihood-ratio statistics of `gs` on `circuits` of `ds`, with
/// `k = N_o - N_p^nongauge` and Sidak-adjusted per-circuit flags.
pub fn violation_report(
    gs: &GateSet,
    ds: &DataSet,
    circuits: &[Circuit],
    kind: ParamKind,
    alpha: f64,
) -> Result<ViolationReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    let data = CompiledData::new(gs, ds, circuits)?;
    let param = Parameterization::new(kind, gs);
    let n_nongauge = num_nongauge_params(gs, &param)?;
    let n_outcomes = data.num_independent_outcomes();
    let k = n_outcomes as i64 - n_nongauge as i64;
    let conf = (1.0 - alpha).powf(1.0 / circuits.len().max(1) as f64);
    let mut thresholds: HashMap<usize, f64> = HashMap::new();
    let mut per_circuit = Vec::with_capacity(circuits.len());
    let mut total = 0.0;
    for (row, c) in data.rows.iter().zip(circuits) {
        let p = row_probabilities(gs, row);
        let v: f64 = row
            .counts
            .iter()
            .zip(&p)
            .map(|(&n, &pb)| deviance_term(n, row.total, pb, DEFAULT_P_MIN))
            .sum::<f64>()
            .max(0.0);
        total += v;
        let dof = row.counts.len().saturating_sub(1).max(1);
        let thr = *thresholds.entry(dof).or_insert_with(|| chi2_quantile(dof, conf));
        per_circuit.push(CircuitViolation { circuit: c.to_string(), two_delta_logl: v, dof, flagged: v > thr });
    }
    let n_sigma = if k > 0 { (total - k as f64) / (2.0 * (k as f64).sqrt()) } else { f64::NAN };
    Ok(ViolationReport {
        two_delta_logl: total,
        k,
        n_outcomes,
        n_nongauge_params: n_nongauge,
        n_sigma,
        per_circuit,
        circuits: circuits.to_vec(),
        threshold_per_circuit: chi2_quantile(1, conf),
        per_test_confidence: conf,
        alpha,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BoxCell {
    pub germ: String,
    pub l: usize,
    pub prep_fid: usize,
    pub meas_fid: usize,
    pub two_dlogl: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoxplotGrid {
    pub cells: Vec<BoxCell>,
    /// 95th percentile of the cell values, the color-scale break point.
    pub break_point: f64,
}

/// One cell per design entry with data in the report, keyed by
/// (germ, L, prep fiducial, measurement fiducial).
pub fn boxplot_grid(report: &ViolationReport, design: &ExperimentDesign) -> BoxplotGrid {
    let by_circuit: HashMap<&Circuit, &CircuitViolation> = report.circuits.iter().zip(&report.per_circuit).collect();
    let mut cells = Vec::new();
    for e in &design.entries {
        if let Some(v) = by_circuit.get(&design.entry_circuit(e)) {
            cells.push(BoxCell {
                germ: design.germs[e.germ].to_string(),
                l: e.l,
                prep_fid: e.prep,
                meas_fid: e.meas,
                two_dlogl: v.two_delta_logl,
                flagged: v.flagged,
            });
        }
    }
    let mut vals: Vec<f64> = cells.iter().map(|c| c.two_dlogl).collect();
    vals.sort_by(f64::total_cmp);
    let break_point = if vals.is_empty() {
        0.0
    } else {
        vals[((vals.len() as f64 * 0.95).ceil() as usize).clamp(1, vals.len()) - 1]
    };
    BoxplotGrid { cells, break_point }
}

/// Writes the grid as CSV, or as JSON (with the break point) when the path
/// ends in `.json`.
pub fn export_boxplot(report: &ViolationReport, design: &ExperimentDesign, path: &Path) -> Result<()> {
    let grid = boxplot_grid(report, design);
    let text = if path.extension().is_some_and(|e| e == "json") {
        serde_json::to_string_pretty(&json!({
            "break_point": grid.break_point,
            "cells": grid.cells,
        }))?
    } else {
        let mut s = String::from("germ,L,prep_fid,meas_fid,two_dlogl,flagged\n");
        for c in &grid.cells {
            s.push_str(&format!(
                "\"{}\",{},{},{},{},{}\n",
                c.germ, c.l, c.prep_fid, c.meas_fid, c.two_dlogl, c.flagged
            ));
        }
        s
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BiasExample {
    pub mle: f64,
    pub min_chi2: f64,
}

/// Two binary circuits with `n_i` successes out of `N_i`: the pooled MLE and
/// the minimizer of `sum_i N_i (p - f_i)^2 / (p (1 - p))`.
pub fn chi2_bias_example(n1: u64, big_n1: u64, n2: u64, big_n2: u64) -> Result<BiasExample> {
    if big_n1 == 0 || big_n2 == 0 || n1 > big_n1 || n2 > big_n2 {
        return invalid("need 0 <= n_i <= N_i and N_i > 0");
    }
    let mle = (n1 + n2) as f64 / (big_n1 + big_n2) as f64;
    let rows = [(n1 as f64, big_n1 as f64), (n2 as f64, big_n2 as f64)];
    let a: f64 = rows.iter().map(|r| r.1).sum();
    let b: f64 = rows.iter().map(|r| r.0).sum();
    let c: f64 = rows.iter().map(|r| r.0 * r.0 / r.1).sum();
    // stationarity: (A - 2B) p^2 + 2 C p - C = 0
    let q = a - 2.0 * b;
    let min_chi2 = if c == 0.0 {
        0.0
    } else if q.abs() < 1e-12 * a {
        0.5
    } else {
        (-c + (c * c + q * c).sqrt()) / q
    };
    Ok(BiasExample { mle, min_chi2 })
}

/// Expected minimum-chi-squared estimate over all outcome pairs of two
/// `N`-shot circuits with true probability `p`.
pub fn chi2_bias_expectation(p: f64, n: u64) -> Result<f64> {
    let pmf = binomial_pmf(p, n);
    let mut e = 0.0;
    for (i, pi) in pmf.iter().enumerate() {
        for (j, pj) in pmf.iter().enumerate() {
            if pi * pj == 0.0 {
                continue;
            }
            e += pi * pj * chi2_bias_example(i as u64, n, j as u64, n)?.min_chi2;
        }
    }
    Ok(e)
}

fn binomial_pmf(p: f64, n: u64) -> Vec<f64> {
    use statrs::distribution::{Binomial, Discrete};
    let b = Binomial::new(p, n).expect("valid binomial");
    (0..=n).map(|k| b.pmf(k)).collect()
}
