//! Per-circuit objective terms (chi-squared, loglikelihood) with the
//! small-probability regularization, and their probability derivatives.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit_engine::{Circuit, DataSet};
use crate::error::{invalid, GstError, Result};
use crate::gateset_model::{GateSet, Parameterization};
use crate::linalg::{Mat, Vector};

pub const DEFAULT_P_MIN: f64 = 1e-4;
const TP_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Chi2,
    LogLTP,
    LogLPoisson,
}

impl FromStr for ObjectiveKind {
    type Err = GstError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chi2" => Ok(ObjectiveKind::Chi2),
            "logl" | "logl-tp" | "logltp" => Ok(ObjectiveKind::LogLTP),
            "logl-poisson" | "loglpoisson" | "poisson" => Ok(ObjectiveKind::LogLPoisson),
            _ => invalid(format!("unknown objective '{s}'")),
        }
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Chi2 => "chi2",
            ObjectiveKind::LogLTP => "logl-tp",
            ObjectiveKind::LogLPoisson => "logl-poisson",
        })
    }
}

/// Least-squares weight `1/p`, capped smoothly below `a`: equals `1/a` at
/// `p = a` with matching slope and tends to `2/a` as `p -> -inf`.
pub fn chi2_weight(p: f64, a: f64) -> (f64, f64) {
    if p >= a {
        (1.0 / p, -1.0 / (p * p))
    } else {
        let u = (a - p) / a;
        let h = u / (1.0 + u);
        ((1.0 + h) / a, -1.0 / (a * a * (1.0 + u) * (1.0 + u)))
    }
}

/// `log p`, replaced by its second-order Taylor expansion about `a` below `a`.
pub fn reg_log(p: f64, a: f64) -> (f64, f64, f64) {
    if p >= a {
        (p.ln(), 1.0 / p, -1.0 / (p * p))
    } else {
        let x = p - a;
        (a.ln() + x / a - x * x / (2.0 * a * a), 1.0 / a - x / (a * a), -1.0 / (a * a))
    }
}

/// Chi-squared term `N (p - f)^2 w(p)` and its derivative in `p`.
pub fn chi2_term(n: f64, total: f64, p: f64, a: f64) -> (f64, f64) {
    let f = n / total;
    let (w, dw) = chi2_weight(p, a);
    let d = p - f;
    (total * d * d * w, total * (2.0 * d * w + d * d * dw))
}

/// Poisson-picture loglikelihood term `n log p - N p` (regularized), value,
/// first and second derivative. Zero-count terms get a curvature penalty
/// below zero so that negative probabilities are never rewarded.
pub fn poisson_term(n: f64, total: f64, p: f64, a: f64) -> (f64, f64, f64) {
    if n > 0.0 {
        let (l, dl, ddl) = reg_log(p, a);
        (n * l - total * p, n * dl - total, n * ddl)
    } else if p >= 0.0 {
        (-total * p, -total, 0.0)
    } else {
        (-total * p - total * p * p / (2.0 * a), -total - total * p / a, -total / a)
    }
}

/// Multinomial (TP) loglikelihood term: Poisson term plus `N p`.
pub fn tp_term(n: f64, total: f64, p: f64, a: f64) -> (f64, f64) {
    let (v, d, _) = poisson_term(n, total, p, a);
    (v + total * p, d + total)
}

/// Deviance `2 (l_max - l(p))` of one outcome, computed stably near `p = f`.
pub fn deviance_term(n: f64, total: f64, p: f64, a: f64) -> f64 {
    if n > 0.0 && p >= a {
        let f = n / total;
        let u = (p - f) / f;
        2.0 * n * (u - u.ln_1p())
    } else {
        let lmax = if n > 0.0 { n * (n / total).ln() - n } else { 0.0 };
        2.0 * (lmax - poisson_term(n, total, p, a).0)
    }
}

/// One data row resolved against a gate set.
#[derive(Clone, Debug)]
pub(crate) struct Row {
    pub idx: Vec<usize>,
    pub prep: usize,
    pub povm: usize,
    pub counts: Vec<f64>,
    pub total: f64,
}

/// Data rows for a fixed circuit list, resolved once.
#[derive(Clone, Debug)]
pub struct CompiledData {
    pub(crate) rows: Vec<Row>,
    pub circuits: Vec<Circuit>,
}

impl CompiledData {
    pub fn new(gs: &GateSet, ds: &DataSet, circuits: &[Circuit]) -> Result<Self> {
        let missing = ds.missing(circuits);
        if !missing.is_empty() {
            return Err(GstError::MissingCircuits(missing));
        }
        let mut rows = Vec::with_capacity(circuits.len());
        for c in circuits {
            let r = ds.get(c).expect("checked above");
            let labels = gs
                .effect_labels
                .get(c.povm)
                .ok_or_else(|| GstError::InvalidArgument(format!("no POVM {}", c.povm)))?;
            if c.prep >= gs.preps.len() {
                return invalid(format!("no prep {}", c.prep));
            }
            for (l, _) in &r.counts {
                if !labels.contains(l) {
                    return invalid(format!("unknown outcome '{l}' in row '{c}'"));
                }
            }
            rows.push(Row {
                idx: c.resolve(gs)?,
                prep: c.prep,
                povm: c.povm,
                counts: labels.iter().map(|l| r.count(l) as f64).collect(),
                total: r.total as f64,
            });
        }
        Ok(CompiledData { rows, circuits: circuits.to_vec() })
    }

    /// Every row of `ds`, in sorted circuit order.
    pub fn all(gs: &GateSet, ds: &DataSet) -> Result<Self> {
        let cs: Vec<Circuit> = ds.sorted_rows().iter().map(|r| r.circuit.clone()).collect();
        Self::new(gs, ds, &cs)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of outcome entries (residuals).
    pub fn num_outcomes(&self) -> usize {
        self.rows.iter().map(|r| r.counts.len()).sum()
    }

    /// Independent outcome count: one fewer than the outcomes per row.
    pub fn num_independent_outcomes(&self) -> usize {
        self.rows.iter().map(|r| r.counts.len().saturating_sub(1)).sum()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total).collect()
    }

    pub fn counts(&self, i: usize) -> &[f64] {
        &self.rows[i].counts
    }
}

pub(crate) fn row_probabilities(gs: &GateSet, row: &Row) -> Vec<f64> {
    let mut v = gs.preps[row.prep].clone();
    for &k in &row.idx {
        v = &gs.gates[k] * v;
    }
    gs.povms[row.povm].iter().map(|e| e.dot(&v)).collect()
}

/// Probabilities and their parameter derivatives (outcomes x N_p), given the
/// element Jacobian `pj` of the parameterization.
pub(crate) fn row_probabilities_grad(gs: &GateSet, row: &Row, pj: &Mat) -> (Vec<f64>, Mat) {
    let n = gs.d2();
    let len = row.idx.len();
    let mut fwd: Vec<Vector> = Vec::with_capacity(len + 1);
    fwd.push(gs.preps[row.prep].clone());
    for &k in &row.idx {
        let v = &gs.gates[k] * fwd.last().expect("nonempty");
        fwd.push(v);
    }
    let gate_off = gs.preps.len() * n;
    let eff_before: usize = gs.povms[..row.povm].iter().map(|p| p.len()).sum();
    let eff_off = gate_off + gs.gates.len() * n * n + eff_before * n;
    let effects = &gs.povms[row.povm];
    let mut probs = Vec::with_capacity(effects.len());
    let mut out = Mat::zeros(effects.len(), pj.ncols());
    let mut grad = Vector::zeros(gs.num_elements());
    for (b, e) in effects.iter().enumerate() {
        grad.fill(0.0);
        probs.push(e.dot(&fwd[len]));
        for i in 0..n {
            grad[eff_off + b * n + i] = fwd[len][i];
        }
        let mut w = e.clone();
        for i in (0..len).rev() {
            let k = row.idx[i];
            let base = gate_off + k * n * n;
            let v = &fwd[i];
            for r in 0..n {
                let wr = w[r];
                if wr != 0.0 {
                    for c in 0..n {
                        grad[base + r * n + c] += wr * v[c];
                    }
                }
            }
            w = gs.gates[k].tr_mul(&w);
        }
        for i in 0..n {
            grad[row.prep * n + i] += w[i];
        }
        out.row_mut(b).copy_from(&grad.tr_mul(pj));
    }
    (probs, out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub p_min: f64,
}

impl Objective {
    pub fn new(kind: ObjectiveKind, p_min: f64) -> Self {
        Objective { kind, p_min }
    }

    /// Objective value in its natural sign: chi-squared (minimized) or
    /// loglikelihood (maximized).
    fn row_value(&self, row: &Row, p: &[f64]) -> Result<f64> {
        let a = self.p_min;
        if self.kind == ObjectiveKind::LogLTP {
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > TP_TOL {
                return invalid(format!("probabilities sum to {s}, multinomial likelihood needs 1"));
            }
        }
        Ok(row
            .counts
            .iter()
            .zip(p)
            .map(|(&n, &pb)| match self.kind {
                ObjectiveKind::Chi2 => chi2_term(n, row.total, pb, a).0,
                ObjectiveKind::LogLTP => tp_term(n, row.total, pb, a).0,
                ObjectiveKind::LogLPoisson => poisson_term(n, row.total, pb, a).0,
            })
            .sum())
    }

    pub fn value(&self, gs: &GateSet, data: &CompiledData) -> Result<f64> {
        let parts: Vec<Result<f64>> = data
            .rows
            .par_iter()
            .map(|r| self.row_value(r, &row_probabilities(gs, r)))
            .collect();
        parts.into_iter().sum()
    }

    /// Value and gradient with respect to the parameters at `theta`.
    pub fn value_and_gradient(
        &self,
        param: &Parameterization,
        theta: &Vector,
        data: &CompiledData,
    ) -> Result<(f64, Vector)> {
        let gs = param.from_vector(theta)?;
        let pj = param.jacobian(theta)?;
        let a = self.p_min;
        let parts: Vec<Result<(f64, Vector)>> = data
            .rows
            .par_iter()
            .map(|r| {
                let (p, dp) = row_probabilities_grad(&gs, r, &pj);
                let v = self.row_value(r, &p)?;
                let mut g = Vector::zeros(pj.ncols());
                for (b, (&n, &pb)) in r.counts.iter().zip(&p).enumerate() {
                    let d = match self.kind {
                        ObjectiveKind::Chi2 => chi2_term(n, r.total, pb, a).1,
                        ObjectiveKind::LogLTP => tp_term(n, r.total, pb, a).1,
                        ObjectiveKind::LogLPoisson => poisson_term(n, r.total, pb, a).1,
                    };
                    g += dp.row(b).transpose() * d;
                }
                Ok((v, g))
            })
            .collect();
        let mut total = 0.0;
        let mut grad = Vector::zeros(pj.ncols());
        for part in parts {
            let (v, g) = part?;
            total += v;
            grad += g;
        }
        Ok((total, grad))
    }

    /// Least-squares residuals whose squared norm is the minimized quantity:
    /// chi-squared itself, or the deviance `2 (logL_max - logL)`.
    pub fn residuals(
        &self,
        param: &Parameterization,
        theta: &Vector,
        data: &CompiledData,
        want_jacobian: bool,
    ) -> Result<(Vector, Option<Mat>)> {
        let gs = param.from_vector(theta)?;
        let pj = if want_jacobian { Some(param.jacobian(theta)?) } else { None };
        let a = self.p_min;
        let kind = self.kind;
        let parts: Vec<(Vec<f64>, Option<Mat>)> = data
            .rows
            .par_iter()
            .map(|r| {
                let (p, dp) = match &pj {
                    Some(pj) => {
                        let (p, dp) = row_probabilities_grad(&gs, r, pj);
                        (p, Some(dp))
                    }
                    None => (row_probabilities(&gs, r), None),
                };
                let mut res = Vec::with_capacity(p.len());
                let mut drow = Vec::with_capacity(p.len());
                for (&n, &pb) in r.counts.iter().zip(&p) {
                    let (v, dv) = residual(kind, n, r.total, pb, a);
                    res.push(v);
                    drow.push(dv);
                }
                let jac = dp.map(|mut dp| {
                    for (b, d) in drow.iter().enumerate() {
                        dp.row_mut(b).scale_mut(*d);
                    }
                    dp
                });
                (res, jac)
            })
            .collect();
        let m: usize = parts.iter().map(|p| p.0.len()).sum();
        let mut r = Vector::zeros(m);
        let mut j = pj.as_ref().map(|pj| Mat::zeros(m, pj.ncols()));
        let mut k = 0;
        for (res, jac) in parts {
            for (i, v) in res.iter().enumerate() {
                r[k + i] = *v;
            }
            if let (Some(j), Some(jac)) = (j.as_mut(), jac) {
                j.rows_mut(k, jac.nrows()).copy_from(&jac);
            }
            k += res.len();
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(GstError::Optimizer("non-finite residual".into()));
        }
        Ok((r, j.take()))
    }
}

/// Residual and its derivative in `p` for one outcome.
fn residual(kind: ObjectiveKind, n: f64, total: f64, p: f64, a: f64) -> (f64, f64) {
    match kind {
        ObjectiveKind::Chi2 => {
            let f = n / total;
            let (w, dw) = chi2_weight(p, a);
            let sw = w.sqrt();
            let d = p - f;
            (total.sqrt() * d * sw, total.sqrt() * (sw + d * dw / (2.0 * sw)))
        }
        _ => {
            let t = deviance_term(n, total, p, a).max(0.0);
            let (_, dl, ddl) = poisson_term(n, total, p, a);
            let s = if n > 0.0 && p < n / total { -1.0 } else { 1.0 };
            let r = s * t.sqrt();
            let curv = (-ddl).max(0.0).sqrt();
            // t' = -2 l'; r' = t' / (2 r), with the p = f limit sqrt(-l'')
            let dr = if t > 1e-14 * total.max(1.0) { -dl / r } else { curv };
            (r, dr)
        }
    }
}

pub fn chi2(gs: &GateSet, ds: &DataSet, p_min: f64) -> Result<f64> {
    Objective::new(ObjectiveKind::Chi2, p_min).value(gs, &CompiledData::all(gs, ds)?)
}

pub fn loglikelihood(gs: &GateSet, ds: &DataSet, kind: ObjectiveKind, p_min: f64) -> Result<f64> {
    if kind == ObjectiveKind::Chi2 {
        return invalid("loglikelihood needs a likelihood objective kind");
    }
    Objective::new(kind, p_min).value(gs, &CompiledData::all(gs, ds)?)
}

/// `sum_s N_s sum_b f log f`, with `0 log 0 = 0`.
pub fn max_logl(ds: &DataSet) -> f64 {
    ds.sorted_rows()
        .iter()
        .map(|r| {
            let n = r.total as f64;
            r.counts
                .iter()
                .filter(|(_, c)| *c > 0)
                .map(|(_, c)| {
                    let c = *c as f64;
                    c * (c / n).ln()
                })
                .sum::<f64>()
        })
        .sum()
}

/// `2 (logL_max - logL)` in the Poisson picture (equal to the multinomial
/// value for trace-preserving models).
pub fn two_delta_logl(gs: &GateSet, data: &CompiledData, p_min: f64) -> f64 {
    data.rows
        .par_iter()
        .map(|r| {
            let p = row_probabilities(gs, r);
            r.counts
                .iter()
                .zip(&p)
                .map(|(&n, &pb)| deviance_term(n, r.total, pb, p_min))
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}
