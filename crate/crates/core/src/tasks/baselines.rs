//! Conventional task-specific losses used as baselines.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::tasks::pose::Joint;

/// Softmax cross-entropy averaged over the rows of `logits` (`n x p`).
pub fn cross_entropy(graph: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (n, p) = graph
        .value(logits)
        .dims2()
        .ok_or_else(|| Error::invalid("cross-entropy expects an n x p logit matrix"))?;
    if p < 2 {
        return Err(Error::invalid(format!(
            "cross-entropy needs p >= 2, got {p}"
        )));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let mut picks = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        if y >= p {
            return Err(Error::InvalidLabel {
                label: y,
                classes: p,
            });
        }
        picks.push(i * p + y);
    }
    let log_probs = graph.log_softmax(logits)?;
    let picked = graph.gather(log_probs, &picks)?;
    let mean = graph.mean(picked)?;
    Ok(graph.mul_scalar(mean, -1.0))
}

/// Mean squared error between predicted heatmaps and fixed targets.
pub fn mse_heatmap(graph: &mut Graph, heatmaps: NodeId, targets: &Tensor) -> Result<NodeId> {
    let t = graph.input(targets.clone());
    let diff = graph.sub(heatmaps, t)?;
    let sq = graph.square(diff);
    graph.mean(sq)
}

/// Target heatmap with a 2-D Gaussian bump on the ground-truth joint.
///
/// `sigma == 0` gives the delta target (1 on the joint pixel, 0 elsewhere).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHeatmapTarget {
    pub sigma: f64,
    /// Width of the square window the bump is drawn into.
    pub bump_size: usize,
}

impl Default for GaussianHeatmapTarget {
    fn default() -> Self {
        GaussianHeatmapTarget {
            sigma: 1.0,
            bump_size: 7,
        }
    }
}

impl GaussianHeatmapTarget {
    pub fn render(&self, grid: usize, joint: Joint) -> Vec<f64> {
        let mut out = vec![0.0; grid * grid];
        let half = (self.bump_size / 2) as isize;
        let (jr, jc) = (joint.0 as isize, joint.1 as isize);
        for dr in -half..=half {
            for dc in -half..=half {
                let (r, c) = (jr + dr, jc + dc);
                if r < 0 || c < 0 || r >= grid as isize || c >= grid as isize {
                    continue;
                }
                let d2 = (dr * dr + dc * dc) as f64;
                let v = if self.sigma > 0.0 {
                    (-d2 / (2.0 * self.sigma * self.sigma)).exp()
                } else if d2 == 0.0 {
                    1.0
                } else {
                    0.0
                };
                out[r as usize * grid + c as usize] = v;
            }
        }
        out
    }

    /// Stacked targets for a batch of joints (`n x G^2`).
    pub fn batch(&self, grid: usize, joints: &[Joint]) -> Tensor {
        let data: Vec<f64> = joints.iter().flat_map(|&j| self.render(grid, j)).collect();
        Tensor::matrix(joints.len(), grid * grid, data).expect("target shape")
    }
}
