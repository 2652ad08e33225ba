//! Multi-class accuracy: an example is correct iff its ground-truth score
//! beats every other class score.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::refactor::{
    argmax, BinaryConfiguration, ComparisonSpec, MetricOracle, Refactored, ScoreBatch,
    TaskDefinition,
};

#[derive(Debug, Clone)]
pub struct MulticlassTask {
    classes: usize,
    labels: Vec<usize>,
}

impl MulticlassTask {
    /// `labels` are zero-based class indices.
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "multiclass task needs p >= 2, got {classes}"
            )));
        }
        if labels.is_empty() {
            return Err(Error::invalid("multiclass batch is empty"));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidLabel { label, classes });
        }
        Ok(MulticlassTask { classes, labels })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Pairs `(i*p + y_i, i*p + j)` for every `j != y_i`, grouped by example.
    pub fn spec(&self) -> ComparisonSpec {
        let p = self.classes;
        let mut pairs = Vec::with_capacity(self.labels.len() * (p - 1));
        let mut groups = Vec::with_capacity(pairs.capacity());
        for (i, &y) in self.labels.iter().enumerate() {
            for j in (0..p).filter(|&j| j != y) {
                pairs.push((i * p + y, i * p + j));
                groups.push(i);
            }
        }
        ComparisonSpec::new(pairs, groups, self.labels.len() * p)
            .expect("multiclass pairs are valid")
    }

    pub fn oracle(&self) -> AccuracyOracle {
        AccuracyOracle {
            examples: self.labels.len(),
            per_example: self.classes - 1,
        }
    }
}

/// Mean over examples of the AND of each example's `p - 1` bits.
#[derive(Debug, Clone)]
pub struct AccuracyOracle {
    examples: usize,
    per_example: usize,
}

impl MetricOracle for AccuracyOracle {
    fn arity(&self) -> usize {
        self.examples * self.per_example
    }

    fn evaluate(&self, b: &BinaryConfiguration) -> f64 {
        assert_eq!(b.len(), self.arity(), "accuracy oracle arity");
        let correct = b
            .bits()
            .chunks(self.per_example)
            .filter(|bits| bits.iter().all(|&x| x))
            .count();
        correct as f64 / self.examples as f64
    }
}

impl TaskDefinition for MulticlassTask {
    fn batch_len(&self) -> usize {
        self.labels.len()
    }

    fn score_width(&self) -> usize {
        self.classes
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
        Ok(accuracy(scores, &self.labels))
    }
}

/// Argmax decoder (lowest index on ties) followed by mean exact-match.
pub fn accuracy(scores: &ScoreBatch, labels: &[usize]) -> f64 {
    let correct = (0..scores.n())
        .filter(|&i| argmax(scores.row(i)) == labels[i])
        .count();
    correct as f64 / scores.n() as f64
}
