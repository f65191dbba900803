//! Named parameter tensors and the flat key-value text format.
//!
//! # Text format
//!
//! One entry per line, `key = value`. Scalars are written verbatim; tensors
//! are written as
//!
//! ```text
//! koopman.U = [4x4] 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1
//! ```
//!
//! i.e. a `[rows x cols]` shape tag followed by the row-major entries,
//! separated by single spaces. Floats use Rust's shortest round-trip
//! formatting, so `parse(render(doc)) == doc` and rendering is byte-stable.
//! Metadata scalars come first in the order the writer inserted them;
//! tensors follow sorted by name. Blank lines and lines starting with `#`
//! are ignored on input.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{mismatch, Error, Result};
use crate::linalg::{fmt_shape, Matrix};

/// Ordered map from parameter name to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorMap(BTreeMap<String, Matrix>);

/// Trainable parameters of a model.
pub type ParamSet = TensorMap;
/// Gradients, key- and shape-congruent with a [`ParamSet`].
pub type GradientSet = TensorMap;

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.0.get_mut(name)
    }

    /// Looks up `name` and checks its shape.
    pub fn expect(&self, name: &str, shape: (usize, usize)) -> Result<&Matrix> {
        let m = self
            .0
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
        if m.shape() != shape {
            return Err(mismatch(
                "parameter shape",
                fmt_shape(shape),
                format!("{name}: {}", fmt_shape(m.shape())),
            ));
        }
        Ok(m)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.0.values().map(Matrix::len).sum()
    }

    /// Same keys and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|(k, m)| (k.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
        )
    }

    /// True when `other` has exactly the same keys and shapes.
    pub fn congruent(&self, other: &TensorMap) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|((ka, a), (kb, b))| ka == kb && a.shape() == b.shape())
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Matrix::is_finite)
    }

    /// `self += scale · other`, key by key.
    pub fn axpy(&mut self, scale: f64, other: &TensorMap) -> Result<()> {
        if !self.congruent(other) {
            return Err(mismatch(
                "TensorMap::axpy",
                "congruent tensor maps",
                "different keys or shapes",
            ));
        }
        for (a, b) in self.0.values_mut().zip(other.0.values()) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.0.values_mut() {
            m.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Largest absolute entry across all tensors.
    pub fn max_abs(&self) -> f64 {
        self.0.values().fold(0.0, |acc, m| acc.max(m.max_abs()))
    }
}

/// A parsed key-value document: ordered scalar metadata plus tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDocument {
    pub meta: Vec<(String, String)>,
    pub tensors: TensorMap,
}

impl KvDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format {
                line: 0,
                message: format!("missing key `{key}`"),
            })
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse().map_err(|_| Error::Format {
            line: 0,
            message: format!("key `{key}`: cannot parse `{raw}`"),
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (k, m) in self.tensors.iter() {
            let _ = write!(out, "{k} = [{}x{}]", m.rows(), m.cols());
            for x in m.as_slice() {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                line: line_no,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::Format {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if doc.tensors.contains(key) || doc.meta.iter().any(|(k, _)| k == key) {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
            if let Some(rest) = value.strip_prefix('[') {
                let m = parse_tensor(rest).map_err(|message| Error::Format { line: line_no, message })?;
                doc.tensors.insert(key, m);
            } else {
                doc.meta.push((key.to_string(), value.to_string()));
            }
        }
        Ok(doc)
    }
}

fn parse_tensor(rest: &str) -> std::result::Result<Matrix, String> {
    let (shape, values) = rest.split_once(']').ok_or("unterminated shape tag")?;
    let (r, c) = shape.split_once('x').ok_or("shape tag must be `[rows x cols]`")?;
    let rows: usize = r.trim().parse().map_err(|_| format!("bad row count `{r}`"))?;
    let cols: usize = c.trim().parse().map_err(|_| format!("bad column count `{c}`"))?;
    let data = values
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad value `{tok}`"))
        })
        .collect::<std::result::Result<Vec<f64>, String>>()?;
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}
