//! Per-query lower/upper solution bounds with padding and provenance.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One meta-optimization iterate: the boundary configuration and the field
/// value at the query it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaIterate {
    pub value: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub config_hash: u64,
    pub seed: u64,
}

/// Interval band (L(x), U(x)) over a set of query points, with the padding
/// `eta` already applied and provenance for reproduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiBand {
    pub queries: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eta: f64,
    pub provenance: Provenance,
    /// Per-query meta trajectories (lower bound then upper bound), when the
    /// producing method tracks them.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trajectories: Option<Vec<(Vec<MetaIterate>, Vec<MetaIterate>)>>,
    /// Queries where the producing method had to swap a crossed pair.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub swapped: Vec<usize>,
}

impl CiBand {
    /// Build a band, enforcing L(x) <= U(x) and finiteness at every query.
    pub fn new(
        queries: Vec<Vec<f64>>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        eta: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if queries.len() != lower.len() || queries.len() != upper.len() {
            return Err(Error::Config(format!(
                "band length mismatch: {} queries, {} lower, {} upper",
                queries.len(),
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::Config(format!("non-finite bound at query {i}")));
            }
            if l > u {
                return Err(Error::Config(format!(
                    "lower bound {l} exceeds upper bound {u} at query {i}"
                )));
            }
        }
        Ok(CiBand {
            queries,
            lower,
            upper,
            eta,
            provenance,
            trajectories: None,
            swapped: Vec::new(),
        })
    }

    /// Like [`CiBand::new`] but repairs crossed pairs by swapping, recording
    /// the affected query indices.
    pub fn new_with_swap_guard(
        queries: Vec<Vec<f64>>,
        mut lower: Vec<f64>,
        mut upper: Vec<f64>,
        eta: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut swapped = Vec::new();
        for i in 0..lower.len() {
            if lower[i] > upper[i] {
                std::mem::swap(&mut lower[i], &mut upper[i]);
                swapped.push(i);
            }
        }
        let mut band = CiBand::new(queries, lower, upper, eta, provenance)?;
        band.swapped = swapped;
        Ok(band)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn mean_width(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).map(|i| self.width(i)).sum::<f64>() / self.len() as f64
    }

    /// True when `truth` lies inside the band at every query.
    pub fn covers(&self, truth: impl Fn(&[f64]) -> f64) -> bool {
        self.queries
            .iter()
            .enumerate()
            .all(|(i, q)| {
                let u = truth(q);
                self.lower[i] <= u && u <= self.upper[i]
            })
    }

    /// CSV with columns `x0..x{d-1}, lower, upper`.
    pub fn to_csv(&self) -> String {
        let dim = self.queries.first().map(|q| q.len()).unwrap_or(0);
        let mut s = String::new();
        for d in 0..dim {
            s.push_str(&format!("x{d},"));
        }
        s.push_str("lower,upper\n");
        for (i, q) in self.queries.iter().enumerate() {
            for c in q {
                s.push_str(&format!("{c:.17e},"));
            }
            s.push_str(&format!("{:.17e},{:.17e}\n", self.lower[i], self.upper[i]));
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("band serializes")
    }
}
