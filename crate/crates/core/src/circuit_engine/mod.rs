//! Circuits, composition, outcome probabilities and simulated data.
//!
//! Text form: `rho<i>:<body>:M<m>` where the prefix and suffix may be omitted
//! for index 0. The body lists gate labels separated by spaces; `(..)^p`
//! repeats a group and `Gx^p` a single label. The empty circuit is `{}`.

mod dataset;
pub(crate) mod simulate;

pub use dataset::{DataRow, DataSet, DataSetMeta};
pub use simulate::{exact_dataset, simulate};

use std::fmt;
use std::hash::{Hash, Hasher};

use crate::error::{GstError, Result};
use crate::gateset_model::GateSet;
use crate::linalg::{Mat, Vector};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Segment {
    Gate(String),
    Repeat(Vec<Segment>, usize),
}

impl Segment {
    fn flatten_into(&self, out: &mut Vec<String>) {
        match self {
            Segment::Gate(l) => out.push(l.clone()),
            Segment::Repeat(inner, p) => {
                for _ in 0..*p {
                    for s in inner {
                        s.flatten_into(out);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Circuit {
    pub prep: usize,
    pub povm: usize,
    segments: Vec<Segment>,
    layers: Vec<String>,
}

impl PartialEq for Circuit {
    fn eq(&self, other: &Self) -> bool {
        self.prep == other.prep && self.povm == other.povm && self.layers == other.layers
    }
}

impl Eq for Circuit {}

impl Hash for Circuit {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.prep.hash(state);
        self.povm.hash(state);
        self.layers.hash(state);
    }
}

impl Circuit {
    pub fn from_segments(prep: usize, segments: Vec<Segment>, povm: usize) -> Self {
        let mut layers = Vec::new();
        for s in &segments {
            s.flatten_into(&mut layers);
        }
        Circuit {
            prep,
            povm,
            segments,
            layers,
        }
    }

    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let segs = labels
            .iter()
            .map(|l| Segment::Gate(l.as_ref().to_string()))
            .collect();
        Circuit::from_segments(0, segs, 0)
    }

    pub fn empty() -> Self {
        Circuit::from_segments(0, Vec::new(), 0)
    }

    pub fn layers(&self) -> &[String] {
        &self.layers
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn with_spam(mut self, prep: usize, povm: usize) -> Self {
        self.prep = prep;
        self.povm = povm;
        self
    }

    /// `self` followed by `other` in time; SPAM indices taken from the ends.
    pub fn then(&self, other: &Circuit) -> Circuit {
        let mut segs = self.segments.clone();
        segs.extend(other.segments.iter().cloned());
        Circuit::from_segments(self.prep, segs, other.povm)
    }

    /// `self` repeated `p` times as one grouped segment.
    pub fn repeat(&self, p: usize) -> Circuit {
        let segs = if p == 1 {
            self.segments.clone()
        } else if p == 0 {
            Vec::new()
        } else {
            vec![Segment::Repeat(self.segments.clone(), p)]
        };
        Circuit::from_segments(self.prep, segs, self.povm)
    }

    /// Resolves labels to gate indices of `gs`.
    pub fn resolve(&self, gs: &GateSet) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .map(|l| {
                gs.gate_index(l)
                    .ok_or_else(|| GstError::MissingGate(l.clone()))
            })
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_circuit(text).map_err(|msg| GstError::Parse { line: 0, msg })
    }

    /// Text form without prep/POVM decorations.
    pub fn body_text(&self) -> String {
        if self.segments.is_empty() {
            return "{}".into();
        }
        segments_text(&self.segments)
    }
}

fn segments_text(segs: &[Segment]) -> String {
    segs.iter()
        .map(|s| match s {
            Segment::Gate(l) => l.clone(),
            Segment::Repeat(inner, p) => match inner.as_slice() {
                [Segment::Gate(l)] => format!("{l}^{p}"),
                _ => format!("({})^{p}", segments_text(inner)),
            },
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.prep != 0 {
            write!(f, "rho{}:", self.prep)?;
        }
        f.write_str(&self.body_text())?;
        if self.povm != 0 {
            write!(f, ":M{}", self.povm)?;
        }
        Ok(())
    }
}

fn parse_circuit(text: &str) -> std::result::Result<Circuit, String> {
    let mut body = text.trim();
    let mut prep = 0;
    let mut povm = 0;
    if let Some(rest) = body.strip_prefix("rho") {
        let (num, after) = rest
            .split_once(':')
            .ok_or_else(|| format!("missing ':' after prep in '{text}'"))?;
        prep = num
            .parse()
            .map_err(|_| format!("bad prep index '{num}' in '{text}'"))?;
        body = after;
    }
    if let Some(pos) = body.rfind(":M") {
        let num = &body[pos + 2..];
        povm = num
            .trim()
            .parse()
            .map_err(|_| format!("bad POVM index '{num}' in '{text}'"))?;
        body = &body[..pos];
    }
    let body = body.trim();
    if body == "{}" || body.is_empty() {
        return Ok(Circuit::from_segments(prep, Vec::new(), povm));
    }
    let chars: Vec<char> = body.chars().collect();
    let mut pos = 0;
    let segs = parse_seq(&chars, &mut pos, 0)?;
    if pos != chars.len() {
        return Err(format!("unexpected '{}' in '{text}'", chars[pos]));
    }
    Ok(Circuit::from_segments(prep, segs, povm))
}

fn parse_power(chars: &[char], pos: &mut usize) -> std::result::Result<Option<usize>, String> {
    if *pos < chars.len() && chars[*pos] == '^' {
        *pos += 1;
        let start = *pos;
        while *pos < chars.len() && chars[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err("missing exponent after '^'".into());
        }
        let s: String = chars[start..*pos].iter().collect();
        return Ok(Some(s.parse().map_err(|_| format!("bad exponent '{s}'"))?));
    }
    Ok(None)
}

fn parse_seq(chars: &[char], pos: &mut usize, depth: usize) -> std::result::Result<Vec<Segment>, String> {
    let mut out = Vec::new();
    loop {
        while *pos < chars.len() && chars[*pos].is_whitespace() {
            *pos += 1;
        }
        if *pos >= chars.len() {
            if depth > 0 {
                return Err("unbalanced '('".into());
            }
            return Ok(out);
        }
        let ch = chars[*pos];
        if ch == ')' {
            if depth == 0 {
                return Err("unbalanced ')'".into());
            }
            *pos += 1;
            return Ok(out);
        }
        if ch == '(' {
            *pos += 1;
            let inner = parse_seq(chars, pos, depth + 1)?;
            let p = parse_power(chars, pos)?.unwrap_or(1);
            out.push(Segment::Repeat(inner, p));
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == '_' {
            let start = *pos;
            while *pos < chars.len() && (chars[*pos].is_ascii_alphanumeric() || chars[*pos] == '_') {
                *pos += 1;
            }
            let label: String = chars[start..*pos].iter().collect();
            match parse_power(chars, pos)? {
                Some(p) => out.push(Segment::Repeat(vec![Segment::Gate(label)], p)),
                None => out.push(Segment::Gate(label)),
            }
            continue;
        }
        return Err(format!("unexpected character '{ch}'"));
    }
}

/// `tau(S) = G_{gamma_L} ... G_{gamma_1}`.
pub fn compose(circuit: &Circuit, gs: &GateSet) -> Result<Mat> {
    let n = gs.d2();
    let mut t = Mat::identity(n, n);
    for idx in circuit.resolve(gs)? {
        t = &gs.gates[idx] * t;
    }
    Ok(t)
}

/// Outcome probabilities in POVM effect order (no clipping).
pub fn outcome_probabilities(gs: &GateSet, circuit: &Circuit) -> Result<Vec<f64>> {
    let idx = circuit.resolve(gs)?;
    let rho = gs
        .preps
        .get(circuit.prep)
        .ok_or_else(|| GstError::InvalidArgument(format!("no prep {}", circuit.prep)))?;
    let povm = gs
        .povms
        .get(circuit.povm)
        .ok_or_else(|| GstError::InvalidArgument(format!("no POVM {}", circuit.povm)))?;
    let mut v: Vector = rho.clone();
    for i in idx {
        v = &gs.gates[i] * v;
    }
    Ok(povm.iter().map(|e| e.dot(&v)).collect())
}

/// Outcome label to probability.
pub fn probabilities(gs: &GateSet, circuit: &Circuit) -> Result<Vec<(String, f64)>> {
    let p = outcome_probabilities(gs, circuit)?;
    Ok(gs.effect_labels[circuit.povm]
        .iter()
        .cloned()
        .zip(p)
        .collect())
}
