//! Random walks between the source and target domains.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::graph::BatchGraph;
use crate::rng;

/// Base of the eta schedule.
pub const ETA_BASE: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    SourceToTarget,
    TargetToSource,
}

impl Direction {
    pub fn origin(self) -> Domain {
        match self {
            Direction::SourceToTarget => Domain::Source,
            Direction::TargetToSource => Domain::Target,
        }
    }

    pub fn destination(self) -> Domain {
        match self {
            Direction::SourceToTarget => Domain::Target,
            Direction::TargetToSource => Domain::Source,
        }
    }

    /// `(eta1, eta2)` for the graph this direction walks on: the multiplier
    /// is raised on the edges leading into the destination domain.
    pub fn etas(self, eta: f64) -> (f64, f64) {
        match self {
            Direction::SourceToTarget => (1.0, eta),
            Direction::TargetToSource => (eta, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkSequence {
    /// Indices into the batch graph, starting at the origin node.
    pub nodes: Vec<usize>,
    pub direction: Direction,
    /// Whether the walk ended on a destination-domain node.
    pub reached: bool,
    /// One node outside the walk for each position except the last.
    pub negatives: Vec<usize>,
}

impl WalkSequence {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn start(&self) -> usize {
        self.nodes[0]
    }

    pub fn end(&self) -> usize {
        *self.nodes.last().expect("walks are never empty")
    }
}

/// `ETA_BASE^(1 + floor(epoch / 3))`: 1.1 for epochs 0-2, 1.21 for 3-5, ...
pub fn eta_schedule(epoch: usize) -> f64 {
    eta_schedule_from(ETA_BASE, epoch)
}

pub fn eta_schedule_from(base: f64, epoch: usize) -> f64 {
    base.powi(1 + (epoch / 3) as i32)
}

/// Uniform draw over the graph's nodes that do not occur in `seq`.
pub fn sample_negative<R: Rng + ?Sized>(g: &BatchGraph, seq: &[usize], rng: &mut R) -> Result<usize> {
    let candidates: Vec<usize> = (0..g.len()).filter(|i| !seq.contains(i)).collect();
    candidates
        .choose(rng)
        .copied()
        .ok_or_else(|| Error::Sampling("the walk covers every node of the batch".into()))
}

/// Walks from `start` with probabilities proportional to edge weights until
/// a destination-domain node is reached or `theta` nodes have been visited.
pub fn sample_walk<R: Rng + ?Sized>(
    g: &BatchGraph,
    start: usize,
    direction: Direction,
    theta: usize,
    rng: &mut R,
) -> Result<WalkSequence> {
    if theta < 2 {
        return Err(Error::Invalid(format!("theta must be at least 2, got {theta}")));
    }
    if start >= g.len() || g.domain(start) != direction.origin() {
        return Err(Error::Invalid(format!(
            "walk {direction:?} cannot start at node {start}"
        )));
    }
    let mut nodes = vec![start];
    let mut reached = false;
    while nodes.len() < theta {
        let current = *nodes.last().unwrap();
        let probs = g.transition_distribution(current)?;
        let next = WeightedIndex::new(&probs)
            .map_err(|e| Error::Sampling(e.to_string()))?
            .sample(rng);
        nodes.push(next);
        if g.domain(next) == direction.destination() {
            reached = true;
            break;
        }
    }
    let negatives = (0..nodes.len() - 1)
        .map(|_| sample_negative(g, &nodes, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(WalkSequence { nodes, direction, reached, negatives })
}

/// One walk from every origin-domain node, in node order. Walk `k` draws
/// from stream `k` of `seed`, so the result does not depend on the order in
/// which walks are sampled.
pub fn sample_batch_walks(g: &BatchGraph, direction: Direction, theta: usize, seed: u64) -> Result<Vec<WalkSequence>> {
    let starts: Vec<usize> = (0..g.len()).filter(|&i| g.domain(i) == direction.origin()).collect();
    if starts.is_empty() {
        return Err(Error::Invalid(format!("no {} node in the batch", direction.origin())));
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let mut walk_rng = rng::stream(seed, k as u64);
            sample_walk(g, start, direction, theta, &mut walk_rng)
        })
        .collect()
}
