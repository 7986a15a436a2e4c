//! Maps between parameter vectors and gate sets.
//!
//! Parameter layout: every gate block (in gate order), then preps, then the
//! free effects of each POVM. For TP and CPTPLindblad kinds the first entry of
//! each prep is fixed to `1/sqrt(d)` and the last effect of each POVM is the
//! complement of the others.

use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::lindblad::{expm_frechet, LindbladBasis};
use super::GateSet;
use crate::error::{invalid, GstError, Result};
use crate::linalg::{expm, inverse, logm, Mat, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Full,
    TP,
    CPTPLindblad,
}

impl FromStr for ParamKind {
    type Err = GstError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(ParamKind::Full),
            "tp" => Ok(ParamKind::TP),
            "cptp" | "cptplindblad" => Ok(ParamKind::CPTPLindblad),
            _ => invalid(format!("unknown parameterization '{s}'")),
        }
    }
}

impl std::fmt::Display for ParamKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParamKind::Full => "full",
            ParamKind::TP => "tp",
            ParamKind::CPTPLindblad => "cptp",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct Parameterization {
    pub kind: ParamKind,
    template: GateSet,
    lindblad: Option<LindbladBasis>,
    gate_block: usize,
    prep_block: usize,
}

impl Parameterization {
    /// Parameterization shaped like `template`; for CPTPLindblad its gates are
    /// the reference gates `G0`.
    pub fn new(kind: ParamKind, template: &GateSet) -> Self {
        let n = template.d2();
        let lindblad = (kind == ParamKind::CPTPLindblad).then(|| LindbladBasis::new(&template.basis));
        let gate_block = match kind {
            ParamKind::Full => n * n,
            ParamKind::TP => n * (n - 1),
            ParamKind::CPTPLindblad => lindblad.as_ref().unwrap().params_per_gate(),
        };
        let prep_block = if kind == ParamKind::Full { n } else { n - 1 };
        Parameterization {
            kind,
            template: template.clone(),
            lindblad,
            gate_block,
            prep_block,
        }
    }

    pub fn template(&self) -> &GateSet {
        &self.template
    }

    fn free_effects(&self, povm: usize) -> usize {
        let k = self.template.povms[povm].len();
        if self.kind == ParamKind::Full {
            k
        } else {
            k.saturating_sub(1)
        }
    }

    pub fn num_gate_params(&self) -> usize {
        self.template.gates.len() * self.gate_block
    }

    pub fn num_params(&self) -> usize {
        let n = self.template.d2();
        let effects: usize = (0..self.template.povms.len()).map(|m| self.free_effects(m)).sum();
        self.num_gate_params() + self.template.preps.len() * self.prep_block + effects * n
    }

    pub fn gate_range(&self, gate: usize) -> Range<usize> {
        gate * self.gate_block..(gate + 1) * self.gate_block
    }

    pub fn is_gate_param(&self, i: usize) -> bool {
        i < self.num_gate_params()
    }

    pub fn descriptor(&self) -> Value {
        json!({ "kind": self.kind.to_string(), "num_params": self.num_params() })
    }

    fn check_structure(&self, gs: &GateSet) -> Result<()> {
        if !self.template.same_structure(gs) {
            return invalid("gate set structure does not match the parameterization");
        }
        Ok(())
    }

    pub fn to_vector(&self, gs: &GateSet) -> Result<Vector> {
        self.check_structure(gs)?;
        let n = gs.d2();
        let mut v = Vec::with_capacity(self.num_params());
        for (gi, g) in gs.gates.iter().enumerate() {
            match self.kind {
                ParamKind::Full => v.extend((0..n).flat_map(|r| (0..n).map(move |c| g[(r, c)]))),
                ParamKind::TP => v.extend((1..n).flat_map(|r| (0..n).map(move |c| g[(r, c)]))),
                ParamKind::CPTPLindblad => {
                    let mut tp = g.clone();
                    tp.row_mut(0).fill(0.0);
                    tp[(0, 0)] = 1.0;
                    let g0 = &self.template.gates[gi];
                    let xi = logm(&(tp * inverse(g0)?))?;
                    v.extend(self.lindblad.as_ref().unwrap().params_from_generator(&xi));
                }
            }
        }
        let skip = if self.kind == ParamKind::Full { 0 } else { 1 };
        for p in &gs.preps {
            v.extend(p.iter().skip(skip));
        }
        for (m, povm) in gs.povms.iter().enumerate() {
            for e in povm.iter().take(self.free_effects(m)) {
                v.extend(e.iter());
            }
        }
        Ok(Vector::from_vec(v))
    }

    pub fn from_vector(&self, v: &Vector) -> Result<GateSet> {
        if v.len() != self.num_params() {
            return invalid(format!(
                "parameter vector has length {}, expected {}",
                v.len(),
                self.num_params()
            ));
        }
        let n = self.template.d2();
        let mut gs = self.template.clone();
        let mut k = 0;
        for gi in 0..gs.gates.len() {
            let block = &v.as_slice()[k..k + self.gate_block];
            gs.gates[gi] = match self.kind {
                ParamKind::Full => Mat::from_row_slice(n, n, block),
                ParamKind::TP => {
                    let mut g = Mat::zeros(n, n);
                    g[(0, 0)] = 1.0;
                    for r in 1..n {
                        for c in 0..n {
                            g[(r, c)] = block[(r - 1) * n + c];
                        }
                    }
                    g
                }
                ParamKind::CPTPLindblad => {
                    let lb = self.lindblad.as_ref().unwrap();
                    let mut g = expm(&lb.generator_from_params(block)) * &self.template.gates[gi];
                    g.row_mut(0).fill(0.0);
                    g[(0, 0)] = 1.0;
                    g
                }
            };
            k += self.gate_block;
        }
        let inv_sqrt_d = 1.0 / (gs.basis.dim as f64).sqrt();
        for p in gs.preps.iter_mut() {
            if self.kind == ParamKind::Full {
                p.copy_from_slice(&v.as_slice()[k..k + n]);
            } else {
                p[0] = inv_sqrt_d;
                for i in 1..n {
                    p[i] = v[k + i - 1];
                }
            }
            k += self.prep_block;
        }
        let id = gs.basis.identity_vec();
        for m in 0..gs.povms.len() {
            let free = self.free_effects(m);
            let mut sum = Vector::zeros(n);
            for e in 0..free {
                gs.povms[m][e].copy_from_slice(&v.as_slice()[k..k + n]);
                sum += &gs.povms[m][e];
                k += n;
            }
            if free < gs.povms[m].len() {
                let last = gs.povms[m].len() - 1;
                gs.povms[m][last] = &id - sum;
            }
        }
        Ok(gs)
    }

    /// Jacobian of the element vector with respect to the parameters (N_e x N_p).
    pub fn jacobian(&self, v: &Vector) -> Result<Mat> {
        if v.len() != self.num_params() {
            return invalid("parameter vector has the wrong length");
        }
        let t = &self.template;
        let n = t.d2();
        let mut j = Mat::zeros(t.num_elements(), self.num_params());
        let prep_off = t.preps.len() * n;
        let effect_off = prep_off + t.gates.len() * n * n;
        // gates
        for gi in 0..t.gates.len() {
            let row0 = prep_off + gi * n * n;
            let col0 = gi * self.gate_block;
            match self.kind {
                ParamKind::Full => {
                    for a in 0..n * n {
                        j[(row0 + a, col0 + a)] = 1.0;
                    }
                }
                ParamKind::TP => {
                    for a in 0..n * (n - 1) {
                        j[(row0 + n + a, col0 + a)] = 1.0;
                    }
                }
                ParamKind::CPTPLindblad => {
                    let lb = self.lindblad.as_ref().unwrap();
                    let block = &v.as_slice()[col0..col0 + self.gate_block];
                    let xi = lb.generator_from_params(block);
                    let g0 = &t.gates[gi];
                    for (c, dxi) in lb.generator_derivatives(block).iter().enumerate() {
                        let mut dg = expm_frechet(&xi, dxi) * g0;
                        dg.row_mut(0).fill(0.0);
                        for r in 0..n {
                            for cc in 0..n {
                                j[(row0 + r * n + cc, col0 + c)] = dg[(r, cc)];
                            }
                        }
                    }
                }
            }
        }
        // preps
        let mut col = self.num_gate_params();
        for pi in 0..t.preps.len() {
            let skip = if self.kind == ParamKind::Full { 0 } else { 1 };
            for a in skip..n {
                j[(pi * n + a, col)] = 1.0;
                col += 1;
            }
        }
        // effects
        let mut row = effect_off;
        for (m, povm) in t.povms.iter().enumerate() {
            let free = self.free_effects(m);
            let first_col = col;
            for _ in 0..free {
                for a in 0..n {
                    j[(row + a, col + a)] = 1.0;
                }
                row += n;
                col += n;
            }
            if free < povm.len() {
                for e in 0..free {
                    for a in 0..n {
                        j[(row + a, first_col + e * n + a)] = -1.0;
                    }
                }
                row += n;
            }
        }
        Ok(j)
    }
}
