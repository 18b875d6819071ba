//! Electrode positions, candidate nodes and node-signal emulation.

use std::collections::BTreeSet;

use bwnet_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const DEFAULT_PAIR_THRESHOLD_CM: f64 = 3.0;

/// Named electrode positions in centimeters (2-D layouts use z = 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    pub labels: Vec<String>,
    pub positions: Vec<[f64; 3]>,
}

impl ElectrodeLayout {
    pub fn new(labels: Vec<String>, positions: Vec<[f64; 3]>) -> Result<Self> {
        if labels.len() != positions.len() {
            return Err(CoreError::InvalidArgument(format!(
                "{} labels for {} positions",
                labels.len(),
                positions.len()
            )));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArgument("electrode coordinates must be finite".into()));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(CoreError::InvalidArgument("electrode labels must be unique".into()));
        }
        Ok(ElectrodeLayout { labels, positions })
    }

    /// `rows × cols` grid with `spacing_cm` between neighbors, labeled
    /// `e{row}_{col}` in row-major order.
    pub fn grid(rows: usize, cols: usize, spacing_cm: f64) -> Self {
        let mut labels = Vec::with_capacity(rows * cols);
        let mut positions = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                labels.push(format!("e{r}_{c}"));
                positions.push([c as f64 * spacing_cm, r as f64 * spacing_cm, 0.0]);
            }
        }
        ElectrodeLayout { labels, positions }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.positions[i], self.positions[j]);
        a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

/// A short-distance electrode pair acting as one sensor node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateNode {
    pub i: usize,
    pub j: usize,
    pub distance_cm: f64,
}

/// Every unordered pair at most `threshold_cm` apart, sorted by `(i, j)`.
pub fn enumerate_candidate_nodes(layout: &ElectrodeLayout, threshold_cm: f64) -> Result<Vec<CandidateNode>> {
    if layout.len() < 2 {
        return Err(CoreError::InvalidArgument("need at least two electrodes".into()));
    }
    let mut nodes = Vec::new();
    for i in 0..layout.len() {
        for j in i + 1..layout.len() {
            let d = layout.distance(i, j);
            if d <= threshold_cm {
                nodes.push(CandidateNode { i, j, distance_cm: d });
            }
        }
    }
    Ok(nodes)
}

/// Node signals `[N, K, L]` from cap signals `[N, C, L]`: node `k` is
/// electrode `i_k` minus electrode `j_k`, which cancels any reference the
/// two share.
pub fn emulate_node_signals(cap: &Tensor, nodes: &[CandidateNode]) -> Result<Tensor> {
    if cap.ndim() != 3 {
        return Err(CoreError::InvalidArgument(format!("cap signals must be [N, C, L], got {:?}", cap.shape())));
    }
    let (n, c, l) = (cap.dim(0), cap.dim(1), cap.dim(2));
    if let Some(bad) = nodes.iter().find(|nd| nd.i >= c || nd.j >= c) {
        return Err(CoreError::InvalidArgument(format!(
            "node ({}, {}) references an electrode outside 0..{c}",
            bad.i, bad.j
        )));
    }
    let k = nodes.len();
    let mut out = vec![0f32; n * k * l];
    let x = cap.data();
    for s in 0..n {
        for (m, nd) in nodes.iter().enumerate() {
            let a = &x[(s * c + nd.i) * l..][..l];
            let b = &x[(s * c + nd.j) * l..][..l];
            for ((o, &u), &v) in out[(s * k + m) * l..][..l].iter_mut().zip(a).zip(b) {
                *o = u - v;
            }
        }
    }
    Ok(Tensor::new(&[n, k, l], out)?)
}
