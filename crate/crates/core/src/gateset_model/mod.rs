//! Gate set container, parameterizations and gauge transformations.

mod gauge;
mod lindblad;
mod param;

pub use gauge::{
    apply_gauge, gauge_jacobian, gauge_space_projector, num_nongauge_params, GaugeElement,
    GaugeProjector,
};
pub use lindblad::{error_generator, expm_frechet, generator_to_gate, LindbladBasis};
pub use param::{ParamKind, Parameterization};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{invalid, GstError, Result};
use crate::hs_algebra::{BasisSpec, HSBasis};
use crate::linalg::{frobenius, Mat, Vector};

#[derive(Clone, Debug)]
pub struct GateSet {
    pub basis: HSBasis,
    pub preps: Vec<Vector>,
    pub gate_labels: Vec<String>,
    pub gates: Vec<Mat>,
    pub povms: Vec<Vec<Vector>>,
    /// Outcome labels of each POVM, parallel to `povms`.
    pub effect_labels: Vec<Vec<String>>,
}

impl GateSet {
    pub fn new(basis: HSBasis) -> Self {
        GateSet {
            basis,
            preps: Vec::new(),
            gate_labels: Vec::new(),
            gates: Vec::new(),
            povms: Vec::new(),
            effect_labels: Vec::new(),
        }
    }

    pub fn d2(&self) -> usize {
        self.basis.d2()
    }

    pub fn add_gate(&mut self, label: &str, g: Mat) {
        if let Some(i) = self.gate_index(label) {
            self.gates[i] = g;
        } else {
            self.gate_labels.push(label.to_string());
            self.gates.push(g);
        }
    }

    /// Adds a POVM with outcome labels "0", "1", ...
    pub fn add_povm(&mut self, effects: Vec<Vector>) {
        let labels = (0..effects.len()).map(|i| i.to_string()).collect();
        self.povms.push(effects);
        self.effect_labels.push(labels);
    }

    pub fn gate_index(&self, label: &str) -> Option<usize> {
        self.gate_labels.iter().position(|l| l == label)
    }

    pub fn gate(&self, label: &str) -> Result<&Mat> {
        self.gate_index(label)
            .map(|i| &self.gates[i])
            .ok_or_else(|| GstError::MissingGate(label.to_string()))
    }

    pub fn num_effects(&self) -> usize {
        self.povms.iter().map(|p| p.len()).sum()
    }

    /// Length of the flattened element vector.
    pub fn num_elements(&self) -> usize {
        let n = self.d2();
        (self.preps.len() + self.num_effects()) * n + self.gates.len() * n * n
    }

    /// Flattened elements: preps, gates row-major, then every effect.
    pub fn element_vector(&self) -> Vector {
        let mut v = Vec::with_capacity(self.num_elements());
        for p in &self.preps {
            v.extend(p.iter());
        }
        for g in &self.gates {
            for r in 0..g.nrows() {
                v.extend(g.row(r).iter());
            }
        }
        for povm in &self.povms {
            for e in povm {
                v.extend(e.iter());
            }
        }
        Vector::from_vec(v)
    }

    pub fn set_element_vector(&mut self, v: &Vector) {
        let n = self.d2();
        let mut k = 0;
        for p in self.preps.iter_mut() {
            for i in 0..n {
                p[i] = v[k];
                k += 1;
            }
        }
        for g in self.gates.iter_mut() {
            for r in 0..n {
                for c in 0..n {
                    g[(r, c)] = v[k];
                    k += 1;
                }
            }
        }
        for povm in self.povms.iter_mut() {
            for e in povm.iter_mut() {
                for i in 0..n {
                    e[i] = v[k];
                    k += 1;
                }
            }
        }
    }

    pub fn same_structure(&self, other: &GateSet) -> bool {
        self.d2() == other.d2()
            && self.preps.len() == other.preps.len()
            && self.gate_labels == other.gate_labels
            && self.povms.len() == other.povms.len()
            && self
                .povms
                .iter()
                .zip(&other.povms)
                .all(|(a, b)| a.len() == b.len())
    }

    /// Largest element-wise difference to another gate set of identical structure.
    pub fn max_abs_diff(&self, other: &GateSet) -> f64 {
        (self.element_vector() - other.element_vector()).amax()
    }

    /// Frobenius distance of each gate to the matching gate of `other`.
    pub fn gate_distances(&self, other: &GateSet) -> Vec<f64> {
        self.gates
            .iter()
            .zip(&other.gates)
            .map(|(a, b)| frobenius(&(a - b)))
            .collect()
    }

    pub fn mean_gate_distance(&self, other: &GateSet) -> f64 {
        let d = self.gate_distances(other);
        d.iter().sum::<f64>() / d.len().max(1) as f64
    }

    pub fn spam_distance(&self, other: &GateSet) -> f64 {
        let mut s = 0.0;
        for (a, b) in self.preps.iter().zip(&other.preps) {
            s += (a - b).norm_squared();
        }
        for (pa, pb) in self.povms.iter().zip(&other.povms) {
            for (a, b) in pa.iter().zip(pb) {
                s += (a - b).norm_squared();
            }
        }
        s.sqrt()
    }

    /// True when every gate is TP and every POVM sums to the identity.
    pub fn is_tp(&self, tol: f64) -> bool {
        let id = self.basis.identity_vec();
        self.gates.iter().all(|g| crate::hs_algebra::is_tp(g, tol))
            && self.povms.iter().all(|p| {
                let s = p.iter().fold(Vector::zeros(self.d2()), |acc, e| acc + e);
                (s - &id).amax() <= tol
            })
    }

    pub fn to_json(&self, param: Option<&Parameterization>) -> Value {
        let mat = |m: &Mat| -> Value {
            Value::Array(
                (0..m.nrows())
                    .map(|r| json!(m.row(r).iter().copied().collect::<Vec<f64>>()))
                    .collect(),
            )
        };
        let vecv = |v: &Vector| json!(v.iter().copied().collect::<Vec<f64>>());
        let mut gates = Map::new();
        for (l, g) in self.gate_labels.iter().zip(&self.gates) {
            gates.insert(l.clone(), mat(g));
        }
        let mut out = Map::new();
        out.insert("basis".into(), serde_json::to_value(self.basis.spec()).unwrap());
        out.insert(
            "preps".into(),
            Value::Array(self.preps.iter().map(vecv).collect()),
        );
        out.insert("gates".into(), Value::Object(gates));
        out.insert(
            "povms".into(),
            Value::Array(
                self.povms
                    .iter()
                    .map(|p| Value::Array(p.iter().map(vecv).collect()))
                    .collect(),
            ),
        );
        out.insert("effect_labels".into(), json!(self.effect_labels));
        if let Some(p) = param {
            out.insert("parameterization".into(), p.descriptor());
        }
        Value::Object(out)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        #[derive(Deserialize, Serialize)]
        struct Raw {
            basis: BasisSpec,
            preps: Vec<Vec<f64>>,
            gates: Map<String, Value>,
            povms: Vec<Vec<Vec<f64>>>,
            #[serde(default)]
            effect_labels: Option<Vec<Vec<String>>>,
        }
        let raw: Raw = serde_json::from_value(v.clone())?;
        let basis = HSBasis::from_spec(&raw.basis)?;
        let n = basis.d2();
        let to_vec = |x: &Vec<f64>| -> Result<Vector> {
            if x.len() != n {
                return invalid(format!("vector of length {} in a d^2={n} gate set", x.len()));
            }
            Ok(Vector::from_vec(x.clone()))
        };
        let mut gs = GateSet::new(basis);
        for p in &raw.preps {
            gs.preps.push(to_vec(p)?);
        }
        for (label, m) in &raw.gates {
            let rows: Vec<Vec<f64>> = serde_json::from_value(m.clone())?;
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return invalid(format!("gate {label} is not {n}x{n}"));
            }
            gs.add_gate(label, Mat::from_fn(n, n, |r, c| rows[r][c]));
        }
        for (i, p) in raw.povms.iter().enumerate() {
            let effects = p.iter().map(to_vec).collect::<Result<Vec<_>>>()?;
            gs.add_povm(effects);
            if let Some(labels) = &raw.effect_labels {
                if let Some(l) = labels.get(i) {
                    if l.len() == p.len() {
                        gs.effect_labels[i] = l.clone();
                    }
                }
            }
        }
        Ok(gs)
    }

    /// Stable hash of the JSON form (hex SHA-256).
    pub fn hash_hex(&self) -> String {
        crate::util::sha256_hex(self.to_json(None).to_string().as_bytes())
    }
}

/// Reads the parameterization kind recorded in a gate set JSON document, if any.
pub fn param_kind_from_json(v: &Value) -> Option<ParamKind> {
    v.get("parameterization")
        .and_then(|p| p.get("kind"))
        .and_then(|k| k.as_str())
        .and_then(|k| k.parse().ok())
}

