use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Circuit;
use crate::error::{GstError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataRow {
    pub circuit: Circuit,
    /// Outcome label and count, in POVM effect order.
    pub counts: Vec<(String, u64)>,
    pub total: u64,
}

impl DataRow {
    pub fn count(&self, label: &str) -> u64 {
        self.counts
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, c)| *c)
            .unwrap_or(0)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.total.max(1) as f64;
        self.counts.iter().map(|(_, c)| *c as f64 / n).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSetMeta {
    pub seed: Option<u64>,
    pub gateset_hash: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct DataSet {
    rows: Vec<DataRow>,
    index: HashMap<Circuit, usize>,
    pub meta: DataSetMeta,
}

impl PartialEq for DataSet {
    fn eq(&self, other: &Self) -> bool {
        self.meta == other.meta && self.sorted_rows() == other.sorted_rows()
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    circuit: String,
    counts: Vec<(String, u64)>,
    total: u64,
}

#[derive(Serialize, Deserialize)]
struct JsonDataSet {
    meta: DataSetMeta,
    rows: Vec<JsonRow>,
}

impl DataSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds a row, replacing any existing row for the same circuit.
    pub fn insert(&mut self, circuit: Circuit, counts: Vec<(String, u64)>) {
        let total = counts.iter().map(|(_, c)| c).sum();
        let row = DataRow {
            circuit: circuit.clone(),
            counts,
            total,
        };
        match self.index.get(&circuit) {
            Some(&i) => self.rows[i] = row,
            None => {
                self.index.insert(circuit, self.rows.len());
                self.rows.push(row);
            }
        }
    }

    pub fn get(&self, c: &Circuit) -> Option<&DataRow> {
        self.index.get(c).map(|&i| &self.rows[i])
    }

    pub fn contains(&self, c: &Circuit) -> bool {
        self.index.contains_key(c)
    }

    pub fn rows(&self) -> &[DataRow] {
        &self.rows
    }

    /// Rows in canonical order (sorted by circuit text).
    pub fn sorted_rows(&self) -> Vec<&DataRow> {
        let mut keyed: Vec<(String, &DataRow)> =
            self.rows.iter().map(|r| (r.circuit.to_string(), r)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.into_iter().map(|(_, r)| r).collect()
    }

    /// Circuits of `wanted` absent from the data set.
    pub fn missing<'a>(&self, wanted: impl IntoIterator<Item = &'a Circuit>) -> Vec<String> {
        wanted
            .into_iter()
            .filter(|c| !self.contains(c))
            .map(|c| c.to_string())
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("## gst dataset v1\n");
        if let Some(seed) = self.meta.seed {
            s.push_str(&format!("## seed={seed}\n"));
        }
        if let Some(h) = &self.meta.gateset_hash {
            s.push_str(&format!("## gateset_hash={h}\n"));
        }
        for r in self.sorted_rows() {
            let counts: Vec<String> = r.counts.iter().map(|(l, c)| format!("{l}:{c}")).collect();
            s.push_str(&format!("{}  {}  total={}\n", r.circuit, counts.join(" "), r.total));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut ds = DataSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| GstError::Parse { line: line_no, msg };
            let line = raw.trim_end();
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix("##") {
                let meta = meta.trim();
                if let Some(v) = meta.strip_prefix("seed=") {
                    ds.meta.seed = Some(v.parse().map_err(|_| err(format!("bad seed '{v}'")))?);
                } else if let Some(v) = meta.strip_prefix("gateset_hash=") {
                    ds.meta.gateset_hash = Some(v.to_string());
                }
                continue;
            }
            let (ctext, rest) = line
                .split_once("  ")
                .ok_or_else(|| err("expected '<circuit>  <outcome>:<count> ...  total=<N>'".into()))?;
            let circuit = Circuit::parse(ctext)
                .map_err(|e| err(format!("bad circuit '{ctext}': {e}")))?;
            let mut counts = Vec::new();
            let mut total = None;
            for tok in rest.split_whitespace() {
                if let Some(t) = tok.strip_prefix("total=") {
                    total = Some(t.parse::<u64>().map_err(|_| err(format!("bad total '{t}'")))?);
                    continue;
                }
                let (label, c) = tok
                    .rsplit_once(':')
                    .ok_or_else(|| err(format!("bad outcome token '{tok}'")))?;
                if c.starts_with('-') {
                    return Err(err(format!("negative count for outcome '{label}'")));
                }
                let c: u64 = c.parse().map_err(|_| err(format!("bad count '{c}'")))?;
                counts.push((label.to_string(), c));
            }
            let total = total.ok_or_else(|| err("missing total=".into()))?;
            let sum: u64 = counts.iter().map(|(_, c)| c).sum();
            if sum != total {
                return Err(err(format!("counts sum to {sum} but total={total}")));
            }
            if ds.contains(&circuit) {
                return Err(err(format!("duplicate circuit '{ctext}'")));
            }
            ds.insert(circuit, counts);
        }
        Ok(ds)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = JsonDataSet {
            meta: self.meta.clone(),
            rows: self
                .sorted_rows()
                .into_iter()
                .map(|r| JsonRow {
                    circuit: r.circuit.to_string(),
                    counts: r.counts.clone(),
                    total: r.total,
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("serializable")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let doc: JsonDataSet = serde_json::from_value(v.clone())?;
        let mut ds = DataSet::new();
        ds.meta = doc.meta;
        for (i, r) in doc.rows.into_iter().enumerate() {
            let err = |msg: String| GstError::Parse { line: i + 1, msg };
            let c = Circuit::parse(&r.circuit).map_err(|e| err(e.to_string()))?;
            let sum: u64 = r.counts.iter().map(|(_, c)| c).sum();
            if sum != r.total {
                return Err(err(format!("counts sum to {sum} but total={}", r.total)));
            }
            ds.insert(c, r.counts);
        }
        Ok(ds)
    }

    /// Writes JSON when the path ends in `.json`, text otherwise.
    pub fn write(&self, path: &Path) -> Result<()> {
        let body = if path.extension().is_some_and(|e| e == "json") {
            serde_json::to_string_pretty(&self.to_json())?
        } else {
            self.to_text()
        };
        let mut f = std::fs::File::create(path)?;
        f.write_all(body.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&serde_json::from_str(&text)?)
        } else {
            Self::from_text(&text)
        }
    }

    /// Row-wise sum of two data sets over the same circuits.
    pub fn merged(&self, other: &DataSet) -> Result<DataSet> {
        let mut out = DataSet::new();
        for r in &self.rows {
            let o = other.get(&r.circuit).ok_or_else(|| {
                GstError::MissingCircuits(vec![r.circuit.to_string()])
            })?;
            let counts = r
                .counts
                .iter()
                .map(|(l, c)| (l.clone(), c + o.count(l)))
                .collect();
            out.insert(r.circuit.clone(), counts);
        }
        Ok(out)
    }
}
