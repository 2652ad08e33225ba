//! Single-joint keypoint localisation scored by PCKh on `G x G` heatmaps.
//!
//! Pixels within distance `r` of the ground-truth joint are positive. A
//! heatmap is correct when its argmax lands on a positive pixel, i.e. when
//! some positive pixel beats every negative pixel.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::refactor::{
    argmax, BinaryConfiguration, ComparisonSpec, MetricOracle, Refactored, ScoreBatch,
    TaskDefinition,
};

/// Ground-truth joint location as `(row, col)`.
pub type Joint = (usize, usize);

#[derive(Debug, Clone)]
pub struct PoseTask {
    grid: usize,
    radius: f64,
    joints: Vec<Joint>,
    positive_sets: Vec<Vec<usize>>,
}

/// Flat pixel indices within Euclidean distance `radius` of `joint`.
pub fn positive_pixels(grid: usize, radius: f64, joint: Joint) -> Vec<usize> {
    let r2 = radius * radius;
    let (jr, jc) = (joint.0 as f64, joint.1 as f64);
    (0..grid * grid)
        .filter(|&p| {
            let (row, col) = ((p / grid) as f64, (p % grid) as f64);
            (row - jr).powi(2) + (col - jc).powi(2) <= r2
        })
        .collect()
}

impl PoseTask {
    pub fn new(grid: usize, radius: f64, joints: Vec<Joint>) -> Result<Self> {
        if grid == 0 {
            return Err(Error::invalid("pose grid must be non-empty"));
        }
        if !(radius >= 0.0) {
            return Err(Error::invalid(format!(
                "pose radius must be >= 0, got {radius}"
            )));
        }
        if joints.is_empty() {
            return Err(Error::invalid("pose batch is empty"));
        }
        for &(r, c) in &joints {
            if r >= grid || c >= grid {
                return Err(Error::invalid(format!(
                    "joint ({r}, {c}) lies outside the {grid}x{grid} grid"
                )));
            }
        }
        let positive_sets: Vec<Vec<usize>> = joints
            .iter()
            .map(|&j| positive_pixels(grid, radius, j))
            .collect();
        if positive_sets.iter().any(|s| s.len() == grid * grid) {
            return Err(Error::invalid(
                "radius covers the whole grid; no negative pixels remain",
            ));
        }
        Ok(PoseTask {
            grid,
            radius,
            joints,
            positive_sets,
        })
    }

    pub fn pixels(&self) -> usize {
        self.grid * self.grid
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn positive_sets(&self) -> &[Vec<usize>] {
        &self.positive_sets
    }

    /// Per image `k`: every (positive, negative) pixel pair in that order.
    pub fn spec(&self) -> ComparisonSpec {
        let m = self.pixels();
        let total: usize = self
            .positive_sets
            .iter()
            .map(|s| s.len() * (m - s.len()))
            .sum();
        let mut pairs = Vec::with_capacity(total);
        let mut groups = Vec::with_capacity(total);
        for (k, pos) in self.positive_sets.iter().enumerate() {
            let mut is_pos = vec![false; m];
            pos.iter().for_each(|&p| is_pos[p] = true);
            for &p in pos {
                for q in (0..m).filter(|&q| !is_pos[q]) {
                    pairs.push((k * m + p, k * m + q));
                    groups.push(k);
                }
            }
        }
        ComparisonSpec::new(pairs, groups, self.joints.len() * m).expect("pose pairs are valid")
    }

    pub fn oracle(&self) -> PckhOracle {
        let m = self.pixels();
        PckhOracle {
            blocks: self
                .positive_sets
                .iter()
                .map(|s| (s.len(), m - s.len()))
                .collect(),
        }
    }
}

/// Fraction of images with at least one positive pixel winning all of its
/// comparisons.
#[derive(Debug, Clone)]
pub struct PckhOracle {
    /// `(positives, negatives)` per image.
    blocks: Vec<(usize, usize)>,
}

impl PckhOracle {
    pub fn new(blocks: Vec<(usize, usize)>) -> Self {
        PckhOracle { blocks }
    }
}

impl MetricOracle for PckhOracle {
    fn arity(&self) -> usize {
        self.blocks.iter().map(|(p, n)| p * n).sum()
    }

    fn evaluate(&self, b: &BinaryConfiguration) -> f64 {
        assert_eq!(b.len(), self.arity(), "PCKh oracle arity");
        let bits = b.bits();
        let mut offset = 0;
        let mut correct = 0;
        for &(pos, neg) in &self.blocks {
            let block = &bits[offset..offset + pos * neg];
            if neg == 0 || block.chunks(neg).any(|row| row.iter().all(|&x| x)) {
                correct += 1;
            }
            offset += pos * neg;
        }
        correct as f64 / self.blocks.len() as f64
    }
}

impl TaskDefinition for PoseTask {
    fn batch_len(&self) -> usize {
        self.joints.len()
    }

    fn score_width(&self) -> usize {
        self.pixels()
    }

    fn refactor(&self, scores: &ScoreBatch) -> Result<Refactored> {
        self.check_scores(scores)?;
        Ok(Refactored {
            spec: self.spec(),
            oracle: Arc::new(self.oracle()),
        })
    }

    fn evaluate_original(&self, scores: &ScoreBatch) -> Result<f64> {
        self.check_scores(scores)?;
        Ok(pckh(scores, self.grid, self.radius, &self.joints))
    }
}

/// Argmax of each heatmap, counted correct within distance `radius`.
pub fn pckh(scores: &ScoreBatch, grid: usize, radius: f64, joints: &[Joint]) -> f64 {
    let correct = (0..scores.n())
        .filter(|&k| {
            let p = argmax(scores.row(k));
            let (row, col) = ((p / grid) as f64, (p % grid) as f64);
            let (jr, jc) = (joints[k].0 as f64, joints[k].1 as f64);
            (row - jr).powi(2) + (col - jc).powi(2) <= radius * radius
        })
        .count();
    correct as f64 / scores.n() as f64
}
