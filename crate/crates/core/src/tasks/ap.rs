//! Average precision over a batch of binary examples.
//!
//! Binary variables compare every positive with every negative. Those bits
//! alone do not say how positives rank among themselves, so the oracle fixes
//! the positives' relative order to their order under the scores the batch
//! was refactored with (descending, ties by index). With that order the
//! positive ranked `k` among positives sits at overall rank
//! `k + #{negatives above it}` and `AP = (1/P) * sum_k k / rank_k`.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::refactor::{
    BinaryConfiguration, ComparisonSpec, MetricOracle, Refactored, ScoreBatch, TaskDefinition,
};

#[derive(Debug, Clone)]
pub struct BinaryApTask {
    positive: Vec<bool>,
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl BinaryApTask {
    pub fn new(positive: Vec<bool>) -> Result<Self> {
        let positives: Vec<usize> = (0..positive.len()).filter(|&i| positive[i]).collect();
        let negatives: Vec<usize> = (0..positive.len()).filter(|&i| !positive[i]).collect();
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::invalid(format!(
                "average precision needs at least one positive and one negative (got {} / {})",
                positives.len(),
                negatives.len()
            )));
        }
        Ok(BinaryApTask {
            positive,
            positives,
            negatives,
        })
    }

    pub fn num_positives(&self) -> usize {
        self.positives.len()
    }

    pub fn num_negatives(&self) -> usize {
        self.negatives.len()
    }

    /// Pairs `(positive, negative)`; bit `p * N + j` compares the `p`-th
    /// positive (batch order) with the `j`-th negative.
    pub fn spec(&self) -> ComparisonSpec {
        let mut pairs = Vec::with_capacity(self.positives.len() * self.negatives.len());
        let mut groups = Vec::with_capacity(pairs.capacity());
        for &p in &self.positives {
            for &q in &self.negatives {
                pairs.push((p, q));
                groups.push(p);
            }
        }
        ComparisonSpec::new(pairs, groups, self.positive.len()).expect("pos/neg pairs are valid")
    }

    /// Oracle with the positives' reference order taken from `scores`.
    pub fn oracle(&self, scores: &[f64]) -> ApOracle {
        let mut order: Vec<usize> = (0..self.positives.len()).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = (scores[self.positives[a]], scores[self.positives[b]]);
            sb.partial_cmp(&sa)
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        ApOracle {
            order,
            negatives: self.negatives.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApOracle {
    /// Local positive indices from highest to lowest reference score.
    order: Vec<usize>,
    negatives: usize,
}

impl ApOracle {
    pub fn with_order(order: Vec<usize>, negatives: usize) -> Self {
        ApOracle { order, negatives }
    }
}

impl MetricOracle for ApOracle {
    fn arity(&self) -> usize {
        self.order.len() * self.negatives
    }

    fn evaluate(&self, b: &BinaryConfiguration) -> f64 {
        assert_eq!(b.len(), self.arity(), "AP oracle arity");
        let n = self.negatives;
        let bits = b.bits();
        let total: f64 = self
            .order
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let above = bits[p * n..(p + 1) * n].iter().filter(|&&x| !x).count();
                let k = (k + 1) as f64;
                k / (k + above as f64)
            })
            .sum();
        total / self.order.len() as f64
    }
}

impl TaskDefinition for BinaryApTask {
    fn batch_len(&self) -> usize {
        self.positive.len()
    }

    fn score_width(&self) -> usize {
        1
    }

    fn refactor(&self, scores: &ScoreBatch) -> Result<Refactored> {
        self.check_scores(scores)?;
        Ok(Refactored {
            spec: self.spec(),
            oracle: Arc::new(self.oracle(scores.flat())),
        })
    }

    fn evaluate_original(&self, scores: &ScoreBatch) -> Result<f64> {
        self.check_scores(scores)?;
        average_precision(scores.flat(), &self.positive)
    }
}

/// Standard AP of a ranking by descending score (ties by lower index first).
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            positive.len()
        )));
    }
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Err(Error::invalid(
            "average precision undefined without positives",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / total_pos as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refactor::evaluate_refactored;

    #[test]
    fn all_won_is_one() {
        let task = BinaryApTask::new(vec![true, false, true, false, false]).unwrap();
        let g = task.oracle(&[0.0; 5]);
        assert_eq!(g.arity(), 6);
        assert_eq!(g.evaluate(&BinaryConfiguration::ones(6)), 1.0);
    }

    #[test]
    fn one_positive_one_negative_lost() {
        // ranking [neg, pos]: precision at the positive is 1/2
        let task = BinaryApTask::new(vec![true, false]).unwrap();
        let g = task.oracle(&[0.0, 1.0]);
        assert_eq!(g.evaluate(&BinaryConfiguration::from_bits(&[0])), 0.5);
        assert_eq!(average_precision(&[0.0, 1.0], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn two_by_two() {
        // ranking: p1, n1, n2, p2 -> (1/1 + 2/4) / 2
        let task = BinaryApTask::new(vec![true, true, false, false]).unwrap();
        let scores = [4.0, 1.0, 3.0, 2.0];
        let g = task.oracle(&scores);
        assert_eq!(
            g.evaluate(&BinaryConfiguration::from_bits(&[1, 1, 0, 0])),
            0.75
        );
        assert_eq!(
            average_precision(&scores, &[true, true, false, false]).unwrap(),
            0.75
        );
        let s = ScoreBatch::new(4, 1, scores.to_vec()).unwrap();
        assert_eq!(evaluate_refactored(&s, &task).unwrap(), 0.75);
    }

    #[test]
    fn positives_above_negatives() {
        let task = BinaryApTask::new(vec![false, true, false, true]).unwrap();
        let s = ScoreBatch::new(4, 1, vec![-1.0, 2.0, 0.0, 5.0]).unwrap();
        assert_eq!(evaluate_refactored(&s, &task).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_batches_rejected() {
        assert!(BinaryApTask::new(vec![true, true]).is_err());
        assert!(BinaryApTask::new(vec![false]).is_err());
    }

    #[test]
    fn pair_count() {
        let mut flags = vec![false; 20];
        flags[3] = true;
        flags[7] = true;
        let task = BinaryApTask::new(flags).unwrap();
        assert_eq!(task.spec().len(), 2 * 18);
    }
}
