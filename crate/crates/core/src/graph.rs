//! Per-mini-batch similarity graph.
//!
//! Edge weights are `exp(eta * cos(a, b))` with `eta` depending on the pair
//! of domains: 1 within a domain, `eta1` between source and auxiliary,
//! `eta2` between target and auxiliary. Source and target nodes are never
//! connected and there are no self loops.

use std::io::Write;

use ndarray::{Array1, Array2};

use crate::autodiff::NORM_FLOOR;
use crate::data::Domain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphNode {
    pub instance_id: u64,
    pub domain: Domain,
}

#[derive(Debug, Clone)]
pub struct BatchGraph {
    nodes: Vec<GraphNode>,
    // Absent for graphs built from hand-set weights.
    cosines: Option<Array2<f64>>,
    weights: Array2<f64>,
    etas: Option<(f64, f64)>,
}

/// Multiplier applied to the cosine for a pair of domains, or `None` when
/// the pair has no edge.
pub fn pair_eta(a: Domain, b: Domain, eta1: f64, eta2: f64) -> Option<f64> {
    use Domain::*;
    match (a, b) {
        (Source, Target) | (Target, Source) => None,
        (Source, Auxiliary) | (Auxiliary, Source) => Some(eta1),
        (Target, Auxiliary) | (Auxiliary, Target) => Some(eta2),
        // Auxiliary pairs are weighted like same-domain pairs.
        (Source, Source) | (Target, Target) | (Auxiliary, Auxiliary) => Some(1.0),
    }
}

/// Pairwise cosine similarities of `embeddings`, with ones on the diagonal.
pub fn cosine_matrix(embeddings: &[Array1<f64>]) -> Result<Array2<f64>> {
    let n = embeddings.len();
    let dim = embeddings.first().map_or(0, |e| e.len());
    if let Some(e) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(Error::Dimension { op: "cosine_matrix", left: (1, dim), right: (1, e.len()) });
    }
    let norms: Vec<f64> = embeddings.iter().map(|e| e.dot(e).sqrt()).collect();
    if let Some(norm) = norms.iter().find(|&&v| v < NORM_FLOOR) {
        return Err(Error::Numeric(format!("cosine of near-zero vector (norm {norm:e})")));
    }
    let mut cosines = Array2::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = (embeddings[i].dot(&embeddings[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            cosines[[i, j]] = c;
            cosines[[j, i]] = c;
        }
    }
    Ok(cosines)
}

impl BatchGraph {
    /// Builds the dense weight matrix over `nodes` from their embeddings.
    pub fn build(nodes: &[GraphNode], embeddings: &[Array1<f64>], eta1: f64, eta2: f64) -> Result<Self> {
        let n = nodes.len();
        if n < 2 {
            return Err(Error::Invalid(format!("graph needs at least 2 nodes, got {n}")));
        }
        if embeddings.len() != n {
            return Err(Error::Invalid(format!(
                "{} embeddings for {n} nodes",
                embeddings.len()
            )));
        }
        Self::from_cosines(nodes, cosine_matrix(embeddings)?, eta1, eta2)
    }

    /// Builds the graph from a precomputed cosine matrix, such as one shared
    /// by the two walk directions of a batch.
    pub fn from_cosines(nodes: &[GraphNode], cosines: Array2<f64>, eta1: f64, eta2: f64) -> Result<Self> {
        let n = nodes.len();
        if cosines.dim() != (n, n) {
            return Err(Error::Dimension { op: "from_cosines", left: cosines.dim(), right: (n, n) });
        }
        if !(eta1 > 0.0 && eta2 > 0.0) {
            return Err(Error::Invalid(format!("eta values must be positive: {eta1}, {eta2}")));
        }
        let mut weights = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if let Some(eta) = pair_eta(nodes[i].domain, nodes[j].domain, eta1, eta2) {
                    let w = (eta * cosines[[i, j]]).exp();
                    weights[[i, j]] = w;
                    weights[[j, i]] = w;
                }
            }
        }
        Ok(Self {
            nodes: nodes.to_vec(),
            cosines: Some(cosines),
            weights,
            etas: Some((eta1, eta2)),
        })
    }

    /// Graph with explicit edge weights. The matrix must be square,
    /// non-negative and finite, with a zero diagonal and no source-target
    /// edges.
    pub fn from_weights(nodes: &[GraphNode], weights: Array2<f64>) -> Result<Self> {
        let n = nodes.len();
        if weights.dim() != (n, n) {
            return Err(Error::Dimension { op: "from_weights", left: weights.dim(), right: (n, n) });
        }
        for ((i, j), &w) in weights.indexed_iter() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Invalid(format!("weight ({i}, {j}) = {w}")));
            }
            let forbidden = i == j || pair_eta(nodes[i].domain, nodes[j].domain, 1.0, 1.0).is_none();
            if forbidden && w != 0.0 {
                return Err(Error::Invalid(format!("edge ({i}, {j}) is not allowed")));
            }
        }
        Ok(Self { nodes: nodes.to_vec(), cosines: None, weights, etas: None })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn domain(&self, i: usize) -> Domain {
        self.nodes[i].domain
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[[i, j]]
    }

    /// Cosine similarity of the embeddings of `i` and `j`, when the graph
    /// was built from embeddings.
    pub fn cosine(&self, i: usize, j: usize) -> Option<f64> {
        self.cosines.as_ref().map(|c| c[[i, j]])
    }

    pub fn etas(&self) -> Option<(f64, f64)> {
        self.etas
    }

    /// Probability of stepping from `node` to each node, proportional to
    /// the edge weights.
    pub fn transition_distribution(&self, node: usize) -> Result<Vec<f64>> {
        let row = self.weights.row(node);
        let total: f64 = row.sum();
        if total <= 0.0 {
            return Err(Error::IsolatedNode(node));
        }
        Ok(row.iter().map(|w| w / total).collect())
    }

    /// Writes the weight matrix as CSV with instance ids as row and column
    /// headers.
    pub fn write_weights_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "id")?;
        for node in &self.nodes {
            write!(out, ",{}", node.instance_id)?;
        }
        writeln!(out)?;
        for (node, row) in self.nodes.iter().zip(self.weights.rows()) {
            write!(out, "{}", node.instance_id)?;
            for w in row {
                write!(out, ",{w}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
