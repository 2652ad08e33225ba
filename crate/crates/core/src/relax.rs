//! Differentiable stand-ins for the sign step and the metric oracle.
//!
//! The sign step is relaxed to a sigmoid, and the oracle is replaced by
//! inverse distance weighting over anchors:
//!
//! ```text
//! g~(u) = sum_i g(a_i) / d(u, a_i)  /  sum_i 1 / d(u, a_i)
//! ```
//!
//! with `d` the Euclidean distance, and `g~(u) = g(a_i)` when `u` coincides
//! with an anchor.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::autodiff::{sigmoid_scalar, CustomBackward, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::refactor::{ComparisonSpec, ComparisonVector, Refactored};

/// Distances below this count as hitting the anchor.
pub const EXACT_HIT_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    /// `b~ = sigmoid(c / temperature)`.
    pub temperature: f64,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        RelaxConfig { temperature: 1.0 }
    }
}

/// Relaxed binaries, each strictly inside `(0, 1)` for moderate comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedConfiguration(pub Vec<f64>);

pub fn relax(c: &ComparisonVector, config: RelaxConfig) -> RelaxedConfiguration {
    let t = config.temperature;
    RelaxedConfiguration(
        c.values()
            .iter()
            .map(|&v| sigmoid_scalar(if t == 1.0 { v } else { v / t }))
            .collect(),
    )
}

/// IDW interpolant over a fixed anchor set.
#[derive(Debug, Clone)]
pub struct Interpolator {
    anchors: AnchorSet,
}

impl Interpolator {
    pub fn new(anchors: AnchorSet) -> Self {
        Interpolator { anchors }
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        idw_value(u, &self.anchors)
    }

    pub fn value_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        idw_value_and_gradient(u, &self.anchors)
    }
}

enum Weights {
    Hit(usize),
    Spread {
        dist: Vec<f64>,
        value: f64,
        total: f64,
    },
}

fn weights(u: &[f64], anchors: &AnchorSet) -> Result<Weights> {
    if anchors.is_empty() {
        return Err(Error::invalid("interpolation needs at least one anchor"));
    }
    if u.len() != anchors.arity() {
        return Err(Error::ArityMismatch {
            expected: anchors.arity(),
            found: u.len(),
        });
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("interpolation input {i}")));
    }
    let mut dist = Vec::with_capacity(anchors.len());
    for (i, a) in anchors.anchors().iter().enumerate() {
        let d2: f64 = u
            .iter()
            .zip(a.bits())
            .map(|(&x, &bit)| {
                let diff = x - if bit { 1.0 } else { 0.0 };
                diff * diff
            })
            .sum();
        let d = d2.sqrt();
        if d < EXACT_HIT_DISTANCE {
            return Ok(Weights::Hit(i));
        }
        dist.push(d);
    }
    let values = anchors.values();
    let total: f64 = dist.iter().map(|d| 1.0 / d).sum();
    let weighted: f64 = dist.iter().zip(values).map(|(d, v)| v / d).sum();
    let value = (weighted / total).clamp(anchors.min_value(), anchors.max_value());
    Ok(Weights::Spread { dist, value, total })
}

/// Interpolated metric at `u`.
pub fn idw_value(u: &[f64], anchors: &AnchorSet) -> Result<f64> {
    Ok(match weights(u, anchors)? {
        Weights::Hit(i) => anchors.values()[i],
        Weights::Spread { value, .. } => value,
    })
}

/// Interpolated metric and its gradient with respect to `u`.
///
/// With `w_i = 1/d_i` and `W = sum w_i`, the gradient is
/// `sum_i (g(a_i) - value) / W * dw_i/du` where `dw_i/du = -(u - a_i) / d_i^3`.
/// On an exact hit the interpolant is locally constant and the gradient is zero.
pub fn idw_value_and_gradient(u: &[f64], anchors: &AnchorSet) -> Result<(f64, Vec<f64>)> {
    match weights(u, anchors)? {
        Weights::Hit(i) => Ok((anchors.values()[i], vec![0.0; u.len()])),
        Weights::Spread { dist, value, total } => {
            let mut grad = vec![0.0; u.len()];
            for ((a, &v), &d) in anchors.anchors().iter().zip(anchors.values()).zip(&dist) {
                let coef = -(v - value) / (total * d * d * d);
                if coef == 0.0 {
                    continue;
                }
                for ((g, &x), &bit) in grad.iter_mut().zip(u).zip(a.bits()) {
                    *g += coef * (x - if bit { 1.0 } else { 0.0 });
                }
            }
            Ok((value, grad))
        }
    }
}

struct IdwBackward {
    gradient: Vec<f64>,
}

impl CustomBackward for IdwBackward {
    fn backward(&self, upstream: &Tensor, _inputs: &[&Tensor]) -> Vec<Option<Vec<f64>>> {
        let g = upstream.data()[0];
        vec![Some(self.gradient.iter().map(|v| v * g).collect())]
    }
}

/// Records `g~(u)` on the tape as a scalar node.
pub fn idw_node(graph: &mut Graph, u: NodeId, anchors: &AnchorSet) -> Result<NodeId> {
    let (value, gradient) = idw_value_and_gradient(graph.value(u).data(), anchors)?;
    Ok(graph.custom(
        &[u],
        Tensor::scalar(value),
        Box::new(IdwBackward { gradient }),
    ))
}

/// `c = gather(s, left) - gather(s, right)` on the tape.
pub fn comparisons_node(
    graph: &mut Graph,
    scores: NodeId,
    spec: &ComparisonSpec,
) -> Result<NodeId> {
    if graph.value(scores).len() != spec.score_len() {
        return Err(Error::ShapeMismatch {
            op: "comparisons",
            left: graph.value(scores).shape().to_vec(),
            right: vec![spec.score_len()],
        });
    }
    let left = graph.gather(scores, spec.left())?;
    let right = graph.gather(scores, spec.right())?;
    graph.sub(left, right)
}

pub fn relax_node(graph: &mut Graph, c: NodeId, config: RelaxConfig) -> NodeId {
    let scaled = if config.temperature == 1.0 {
        c
    } else {
        graph.mul_scalar(c, 1.0 / config.temperature)
    };
    graph.sigmoid(scaled)
}

/// Surrogate loss `-g~(sigmoid(f(s)))` (the sign flips for lower-is-better
/// metrics, where the interpolated value itself is minimised).
pub fn uniloss(
    graph: &mut Graph,
    scores: NodeId,
    refactored: &Refactored,
    anchors: &AnchorSet,
    config: RelaxConfig,
) -> Result<NodeId> {
    if anchors.arity() != refactored.spec.len() {
        return Err(Error::ArityMismatch {
            expected: refactored.spec.len(),
            found: anchors.arity(),
        });
    }
    let c = comparisons_node(graph, scores, &refactored.spec)?;
    let b = relax_node(graph, c, config);
    let e = idw_node(graph, b, anchors)?;
    Ok(if refactored.oracle.higher_is_better() {
        graph.mul_scalar(e, -1.0)
    } else {
        e
    })
}
