//! Refactored evaluation `metric = g(h(f(scores)))`.
//!
//! `f` is a [`ComparisonSpec`] (pairs of flat score indices whose
//! differences are taken), `h` is [`harden`] (strict sign test), and `g` is a
//! [`MetricOracle`] that computes the exact metric from the bit vector.

use std::fmt;
use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Network outputs for a mini-batch: `n` examples with `d` scores each,
/// stored row-major so the flat view has length `n * d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    n: usize,
    d: usize,
    scores: Vec<f64>,
}

impl ScoreBatch {
    pub fn new(n: usize, d: usize, scores: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "score batch needs n, d >= 1 (got {n} x {d})"
            )));
        }
        if scores.len() != n * d {
            return Err(Error::DataLength {
                shape: vec![n, d],
                expected: n * d,
                found: scores.len(),
            });
        }
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("score {i}")));
        }
        Ok(ScoreBatch { n, d, scores })
    }

    /// Builds from a 2-D tensor (`n x d`) or a 1-D tensor (`n x 1`).
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[n, d] => ScoreBatch::new(n, d, t.data().to_vec()),
            &[n] => ScoreBatch::new(n, 1, t.data().to_vec()),
            other => Err(Error::invalid(format!(
                "scores must be 1-D or 2-D, got {other:?}"
            ))),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn flat(&self) -> &[f64] {
        &self.scores
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.d..(i + 1) * self.d]
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        ScoreBatch::new(self.n, self.d, self.scores.iter().map(|v| v * k).collect())
    }
}

/// The `l` index pairs defining `f`, with the example/group each comparison
/// belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonSpec {
    left: Vec<usize>,
    right: Vec<usize>,
    group_of: Vec<usize>,
    score_len: usize,
}

impl ComparisonSpec {
    pub fn new(pairs: Vec<(usize, usize)>, group_of: Vec<usize>, score_len: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("comparison spec needs at least one pair"));
        }
        if group_of.len() != pairs.len() {
            return Err(Error::invalid(format!(
                "{} pairs but {} group labels",
                pairs.len(),
                group_of.len()
            )));
        }
        for &(l, r) in &pairs {
            for idx in [l, r] {
                if idx >= score_len {
                    return Err(Error::IndexOutOfRange {
                        what: "comparison pair",
                        index: idx,
                        len: score_len,
                    });
                }
            }
            if l == r {
                return Err(Error::invalid(format!(
                    "comparison pair ({l}, {r}) compares a score with itself"
                )));
            }
        }
        let (left, right) = pairs.into_iter().unzip();
        Ok(ComparisonSpec {
            left,
            right,
            group_of,
            score_len,
        })
    }

    /// Number of comparisons `l`.
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn left(&self) -> &[usize] {
        &self.left
    }

    pub fn right(&self) -> &[usize] {
        &self.right
    }

    pub fn pair(&self, i: usize) -> (usize, usize) {
        (self.left[i], self.right[i])
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn score_len(&self) -> usize {
        self.score_len
    }

    /// Keeps only the listed comparisons, in the given order.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(indices.len());
        let mut groups = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    what: "comparison",
                    index: i,
                    len: self.len(),
                });
            }
            pairs.push(self.pair(i));
            groups.push(self.group_of[i]);
        }
        ComparisonSpec::new(pairs, groups, self.score_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonVector(pub Vec<f64>);

impl ComparisonVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A point of `{0,1}^l`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryConfiguration(Vec<bool>);

impl BinaryConfiguration {
    pub fn new(bits: Vec<bool>) -> Self {
        BinaryConfiguration(bits)
    }

    pub fn ones(l: usize) -> Self {
        BinaryConfiguration(vec![true; l])
    }

    pub fn zeros(l: usize) -> Self {
        BinaryConfiguration(vec![false; l])
    }

    /// The `index`-th configuration in binary counting order (bit 0 is the
    /// least significant), for exhaustive enumeration of small arities.
    pub fn from_index(index: u64, l: usize) -> Self {
        BinaryConfiguration((0..l).map(|i| (index >> i) & 1 == 1).collect())
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        BinaryConfiguration(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = !self.0[i];
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl fmt::Debug for BinaryConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.0.iter().map(|&b| if b { '1' } else { '0' }).collect();
        write!(f, "b[{s}]")
    }
}

/// The exact metric `g` as a pure function of the binary variables.
pub trait MetricOracle: Send + Sync {
    fn arity(&self) -> usize;

    /// Panics if `b.len() != self.arity()`.
    fn evaluate(&self, b: &BinaryConfiguration) -> f64;

    fn higher_is_better(&self) -> bool {
        true
    }
}

/// Comparison spec and metric oracle for one batch.
#[derive(Clone)]
pub struct Refactored {
    pub spec: ComparisonSpec,
    pub oracle: Arc<dyn MetricOracle>,
}

impl fmt::Debug for Refactored {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Refactored")
            .field("l", &self.spec.len())
            .field("arity", &self.oracle.arity())
            .finish()
    }
}

impl Refactored {
    /// The configuration with the maximal metric value (all comparisons won).
    pub fn best_configuration(&self) -> BinaryConfiguration {
        BinaryConfiguration::ones(self.spec.len())
    }

    /// Restricts training to a subset of comparisons. The dropped bits stay
    /// fixed at their values in `current`.
    pub fn restrict(&self, indices: &[usize], current: &BinaryConfiguration) -> Result<Self> {
        if current.len() != self.spec.len() {
            return Err(Error::ArityMismatch {
                expected: self.spec.len(),
                found: current.len(),
            });
        }
        let spec = self.spec.restrict(indices)?;
        let oracle = SubsetOracle {
            base: Arc::clone(&self.oracle),
            fixed: current.clone(),
            indices: indices.to_vec(),
        };
        Ok(Refactored {
            spec,
            oracle: Arc::new(oracle),
        })
    }
}

struct SubsetOracle {
    base: Arc<dyn MetricOracle>,
    fixed: BinaryConfiguration,
    indices: Vec<usize>,
}

impl MetricOracle for SubsetOracle {
    fn arity(&self) -> usize {
        self.indices.len()
    }

    fn evaluate(&self, b: &BinaryConfiguration) -> f64 {
        assert_eq!(b.len(), self.indices.len(), "subset oracle arity");
        let mut full = self.fixed.clone();
        for (&i, &bit) in self.indices.iter().zip(b.bits()) {
            full.0[i] = bit;
        }
        self.base.evaluate(&full)
    }

    fn higher_is_better(&self) -> bool {
        self.base.higher_is_better()
    }
}

/// A task's decoder + evaluator for one batch of ground truth, together
/// with its refactored form.
pub trait TaskDefinition {
    /// Number of examples in the batch.
    fn batch_len(&self) -> usize;

    /// Scores per example.
    fn score_width(&self) -> usize;

    /// Builds `f` and `g` for this batch. Scores are consulted only where the
    /// oracle needs a reference order (average precision).
    fn refactor(&self, scores: &ScoreBatch) -> Result<Refactored>;

    /// Decoder then evaluator applied directly to the scores.
    fn evaluate_original(&self, scores: &ScoreBatch) -> Result<f64>;

    fn check_scores(&self, scores: &ScoreBatch) -> Result<()> {
        if scores.n() != self.batch_len() || scores.d() != self.score_width() {
            return Err(Error::ShapeMismatch {
                op: "task scores",
                left: vec![scores.n(), scores.d()],
                right: vec![self.batch_len(), self.score_width()],
            });
        }
        Ok(())
    }
}

/// `c_i = s[left_i] - s[right_i]`.
pub fn compute_comparisons(s: &ScoreBatch, spec: &ComparisonSpec) -> Result<ComparisonVector> {
    if spec.score_len() != s.flat().len() {
        return Err(Error::ShapeMismatch {
            op: "compute_comparisons",
            left: vec![s.n(), s.d()],
            right: vec![spec.score_len()],
        });
    }
    let flat = s.flat();
    Ok(ComparisonVector(
        spec.left()
            .iter()
            .zip(spec.right())
            .map(|(&l, &r)| flat[l] - flat[r])
            .collect(),
    ))
}

/// `b_i = [c_i > 0]`; ties harden to 0.
pub fn harden(c: &ComparisonVector) -> BinaryConfiguration {
    BinaryConfiguration(c.values().iter().map(|&v| v > 0.0).collect())
}

pub fn evaluate_refactored(s: &ScoreBatch, task: &dyn TaskDefinition) -> Result<f64> {
    task.check_scores(s)?;
    let refactored = task.refactor(s)?;
    let b = harden(&compute_comparisons(s, &refactored.spec)?);
    Ok(refactored.oracle.evaluate(&b))
}

pub fn evaluate_original(s: &ScoreBatch, task: &dyn TaskDefinition) -> Result<f64> {
    task.check_scores(s)?;
    task.evaluate_original(s)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
