//! Walk losses: adjacent-node similarity, end-point reconstruction and the
//! weighted classification loss, combined over walks of both directions.
//!
//! For a walk `x_1..x_n` with negatives `z_1..z_{n-1}`:
//!
//! ```text
//! l1 = sum_j -ln s(cos(x_j, x_{j+1})) - ln(1 - s(cos(x_j, z_j)))
//! l2 = || x_n - decode(lstm(x_1..x_{n-1})) ||
//! l3 = sum_{labeled x} w(x) * bce(classify(x), y)
//! ```
//!
//! where `s` is the sigmoid scaled by `alpha`, `w = 1` for target
//! instances and `w = s(cos(x, anchor))` for source instances. The anchor
//! is the walk's end node for source-to-target walks and its start node for
//! target-to-source walks. The objective is
//! `sum_i l1_i + o_i (lambda1 l2_i + lambda2 l3_i)`, except that a
//! target-to-source walk always contributes the classification term of its
//! starting target instance, reached or not.

use crate::autodiff::{cosine_f64, scaled_sigmoid_f64, Tape, Var};
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::nets::{binary_cross_entropy, BoundParams};
use crate::walker::{Direction, WalkSequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 3.0, lambda1: 1.0, lambda2: 1.0 }
    }
}

/// Contribution of one walk. `l2` and `l3` are the gated, unscaled terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkLoss {
    pub direction: Direction,
    pub reached: bool,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub l1_total: f64,
    pub l2_total: f64,
    pub l3_total: f64,
    pub objective: f64,
    pub walks_total: usize,
    pub walks_reached_s2t: usize,
    pub walks_reached_t2s: usize,
    pub per_walk: Vec<WalkLoss>,
}

impl LossReport {
    pub fn walks_reached(&self) -> usize {
        self.walks_reached_s2t + self.walks_reached_t2s
    }
}

/// Per-node data of the batch the walks were sampled on.
pub struct BatchView<'a, 't> {
    pub embeddings: &'a [Var<'t>],
    pub domains: &'a [Domain],
    pub labels: &'a [Option<u8>],
}

/// `l1` for one walk. A walk with a single node contributes zero.
pub fn similarity_loss<'t>(tape: &'t Tape, seq: &[Var<'t>], negatives: &[Var<'t>], alpha: f64) -> Result<Var<'t>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence("similarity_loss"));
    }
    if negatives.len() != seq.len() - 1 {
        return Err(Error::Invalid(format!(
            "{} negatives for a walk of length {}",
            negatives.len(),
            seq.len()
        )));
    }
    let mut terms = Vec::with_capacity(2 * negatives.len());
    for (pair, z) in seq.windows(2).zip(negatives) {
        let positive = pair[0].cosine(pair[1])?.scaled_sigmoid(alpha)?.ln()?.neg()?;
        // ln(1 - s(c)) = ln(s(-c))
        let negative = pair[0].cosine(*z)?.neg()?.scaled_sigmoid(alpha)?.ln()?.neg()?;
        terms.push(positive);
        terms.push(negative);
    }
    tape.sum_scalars(&terms)
}

/// `l2` for one walk: distance between the last embedding and the decoded
/// LSTM encoding of the others.
pub fn reconstruction_loss<'t>(seq: &[Var<'t>], params: &BoundParams<'t>) -> Result<Var<'t>> {
    if seq.len() < 2 {
        return Err(Error::Invalid(format!(
            "reconstruction needs a walk of length >= 2, got {}",
            seq.len()
        )));
    }
    let (last, prefix) = seq.split_last().unwrap();
    let decoded = params.decode(params.lstm_encode(prefix)?)?;
    last.norm_diff(decoded)
}

/// Instance weight from plain embedding values.
pub fn instance_weight(x: &[f64], anchor: &[f64], domain: Domain, alpha: f64) -> Result<f64> {
    match domain {
        Domain::Target => Ok(1.0),
        Domain::Source => Ok(scaled_sigmoid_f64(cosine_f64(x, anchor)?, alpha)),
        Domain::Auxiliary => Err(Error::Invalid("auxiliary instances have no weight".into())),
    }
}

/// Instance weight on the tape; differentiable for source instances.
pub fn instance_weight_var<'t>(tape: &'t Tape, x: Var<'t>, anchor: Var<'t>, domain: Domain, alpha: f64) -> Result<Var<'t>> {
    match domain {
        Domain::Target => tape.scalar(1.0),
        Domain::Source => x.cosine(anchor)?.scaled_sigmoid(alpha),
        Domain::Auxiliary => Err(Error::Invalid("auxiliary instances have no weight".into())),
    }
}

/// One labeled member of a walk for the classification loss.
#[derive(Clone, Copy)]
pub struct LabeledItem<'t> {
    pub embedding: Var<'t>,
    pub label: u8,
    pub weight: Var<'t>,
}

/// Weighted binary cross-entropy over the labeled members; zero when
/// there are none.
pub fn classification_loss<'t>(tape: &'t Tape, items: &[LabeledItem<'t>], params: &BoundParams<'t>) -> Result<Var<'t>> {
    let terms = items
        .iter()
        .map(|it| {
            let bce = binary_cross_entropy(params.classify(it.embedding)?, it.label)?;
            it.weight.mul(bce)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.sum_scalars(&terms)
}

/// Labeled members of a walk, each node counted once, in walk order.
fn labeled_nodes(walk: &WalkSequence, labels: &[Option<u8>]) -> Vec<(usize, u8)> {
    let mut seen = Vec::new();
    for &n in &walk.nodes {
        if let Some(y) = labels[n] {
            if !seen.iter().any(|&(m, _)| m == n) {
                seen.push((n, y));
            }
        }
    }
    seen
}

fn walk_classification<'t>(
    tape: &'t Tape,
    walk: &WalkSequence,
    batch: &BatchView<'_, 't>,
    params: &BoundParams<'t>,
    alpha: f64,
) -> Result<Option<Var<'t>>> {
    let anchor = match walk.direction {
        Direction::SourceToTarget => walk.end(),
        Direction::TargetToSource => walk.start(),
    };
    let items = if walk.reached {
        labeled_nodes(walk, batch.labels)
            .into_iter()
            .map(|(n, label)| {
                let weight = instance_weight_var(
                    tape,
                    batch.embeddings[n],
                    batch.embeddings[anchor],
                    batch.domains[n],
                    alpha,
                )?;
                Ok(LabeledItem { embedding: batch.embeddings[n], label, weight })
            })
            .collect::<Result<Vec<_>>>()?
    } else if walk.direction == Direction::TargetToSource {
        let start = walk.start();
        let label = batch.labels[start]
            .ok_or_else(|| Error::Invalid(format!("walk starts at unlabeled node {start}")))?;
        vec![LabeledItem { embedding: batch.embeddings[start], label, weight: tape.scalar(1.0)? }]
    } else {
        return Ok(None);
    };
    classification_loss(tape, &items, params).map(Some)
}

/// Combined objective over walks of both directions.
///
/// With `reconstruct == false` the reconstruction term is neither computed
/// nor reported.
pub fn objective<'t>(
    tape: &'t Tape,
    batch: &BatchView<'_, 't>,
    walks: &[WalkSequence],
    params: &BoundParams<'t>,
    weights: LossWeights,
    reconstruct: bool,
) -> Result<(Var<'t>, LossReport)> {
    let mut terms = Vec::new();
    let mut report = LossReport { walks_total: walks.len(), ..Default::default() };

    for walk in walks {
        let seq: Vec<Var<'t>> = walk.nodes.iter().map(|&n| batch.embeddings[n]).collect();
        let negatives: Vec<Var<'t>> = walk.negatives.iter().map(|&n| batch.embeddings[n]).collect();
        let l1 = similarity_loss(tape, &seq, &negatives, weights.alpha)?;
        terms.push(l1);

        let mut l2_value = 0.0;
        if walk.reached && reconstruct {
            let l2 = reconstruction_loss(&seq, params)?;
            l2_value = l2.item();
            if weights.lambda1 != 0.0 {
                terms.push(l2.scale(weights.lambda1)?);
            }
        }

        let mut l3_value = 0.0;
        if let Some(l3) = walk_classification(tape, walk, batch, params, weights.alpha)? {
            l3_value = l3.item();
            if weights.lambda2 != 0.0 {
                terms.push(l3.scale(weights.lambda2)?);
            }
        }

        if walk.reached {
            match walk.direction {
                Direction::SourceToTarget => report.walks_reached_s2t += 1,
                Direction::TargetToSource => report.walks_reached_t2s += 1,
            }
        }
        report.l1_total += l1.item();
        report.l2_total += l2_value;
        report.l3_total += l3_value;
        report.per_walk.push(WalkLoss {
            direction: walk.direction,
            reached: walk.reached,
            l1: l1.item(),
            l2: l2_value,
            l3: l3_value,
        });
    }
    let total = tape.sum_scalars(&terms)?;
    report.objective = total.item();
    Ok((total, report))
}
