//! Anchor configurations for interpolating the metric oracle.
//!
//! Three families are drawn every training step: *good* anchors flip a few
//! bits of the best configuration, *bad* anchors are uniform random bit
//! vectors, and *nearby* anchors flip a few bits of the current
//! configuration. In pixel mode (heatmap tasks) a flip toggles every bit
//! that involves one randomly chosen pixel.

use std::collections::HashMap;
use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refactor::{BinaryConfiguration, ComparisonSpec, MetricOracle, Refactored};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnchorKind {
    Good,
    Bad,
    Nearby,
    /// Supplied directly rather than sampled.
    Given,
}

/// Anchors with their exact metric values.
///
/// Anchors are pairwise distinct and share one arity.
#[derive(Clone)]
pub struct AnchorSet {
    anchors: Vec<BinaryConfiguration>,
    values: Vec<f64>,
    kinds: Vec<AnchorKind>,
}

impl fmt::Debug for AnchorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnchorSet")
            .field("len", &self.anchors.len())
            .field("arity", &self.arity())
            .field("values", &self.values)
            .finish()
    }
}

impl AnchorSet {
    /// Builds a set from explicit anchors. Exact duplicates carrying the same
    /// value collapse to their first occurrence; duplicates with different
    /// values are rejected.
    pub fn new(
        anchors: Vec<BinaryConfiguration>,
        values: Vec<f64>,
        kinds: Vec<AnchorKind>,
    ) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::invalid("anchor set needs at least one anchor"));
        }
        if values.len() != anchors.len() || kinds.len() != anchors.len() {
            return Err(Error::invalid(format!(
                "{} anchors, {} values, {} kinds",
                anchors.len(),
                values.len(),
                kinds.len()
            )));
        }
        let arity = anchors[0].len();
        let mut seen: HashMap<&BinaryConfiguration, usize> = HashMap::with_capacity(anchors.len());
        let mut keep = Vec::with_capacity(anchors.len());
        for (i, a) in anchors.iter().enumerate() {
            if a.len() != arity {
                return Err(Error::ArityMismatch {
                    expected: arity,
                    found: a.len(),
                });
            }
            if !values[i].is_finite() {
                return Err(Error::NonFinite(format!("anchor value {i}")));
            }
            match seen.get(a) {
                Some(&first) if values[first] != values[i] => {
                    return Err(Error::ConflictingAnchors { first, second: i })
                }
                Some(_) => {}
                None => {
                    seen.insert(a, i);
                    keep.push(i);
                }
            }
        }
        drop(seen);
        if keep.len() == anchors.len() {
            return Ok(AnchorSet {
                anchors,
                values,
                kinds,
            });
        }
        Ok(AnchorSet {
            anchors: keep.iter().map(|&i| anchors[i].clone()).collect(),
            values: keep.iter().map(|&i| values[i]).collect(),
            kinds: keep.iter().map(|&i| kinds[i]).collect(),
        })
    }

    /// Deduplicates candidates (first occurrence wins), then caches the
    /// oracle value of each survivor.
    pub fn evaluate(
        candidates: Vec<(BinaryConfiguration, AnchorKind)>,
        oracle: &dyn MetricOracle,
    ) -> Result<Self> {
        let mut unique: Vec<(BinaryConfiguration, AnchorKind)> =
            Vec::with_capacity(candidates.len());
        {
            let mut seen = std::collections::HashSet::with_capacity(candidates.len());
            for (a, kind) in candidates {
                if a.len() != oracle.arity() {
                    return Err(Error::ArityMismatch {
                        expected: oracle.arity(),
                        found: a.len(),
                    });
                }
                if seen.insert(a.clone()) {
                    unique.push((a, kind));
                }
            }
        }
        let mut values = Vec::with_capacity(unique.len());
        for (i, (a, _)) in unique.iter().enumerate() {
            let v = oracle.evaluate(a);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("oracle value of anchor {i}")));
            }
            values.push(v);
        }
        let (anchors, kinds) = unique.into_iter().unzip();
        AnchorSet::new(anchors, values, kinds)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.anchors.first().map_or(0, BinaryConfiguration::len)
    }

    pub fn anchors(&self) -> &[BinaryConfiguration] {
        &self.anchors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kinds(&self) -> &[AnchorKind] {
        &self.kinds
    }

    pub fn of_kind(&self, kind: AnchorKind) -> impl Iterator<Item = (&BinaryConfiguration, f64)> {
        self.anchors
            .iter()
            .zip(&self.values)
            .zip(&self.kinds)
            .filter(move |(_, &k)| k == kind)
            .map(|((a, &v), _)| (a, v))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPolicy {
    pub count_per_type: usize,
    pub good_flips: usize,
    pub nearby_flips: usize,
    /// Flip all bits of one pixel instead of single bits.
    pub pose_pixel_mode: bool,
}

impl Default for AnchorPolicy {
    fn default() -> Self {
        AnchorPolicy {
            count_per_type: 16,
            good_flips: 1,
            nearby_flips: 1,
            pose_pixel_mode: false,
        }
    }
}

impl AnchorPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.count_per_type == 0 {
            return Err(Error::invalid("anchors per type must be >= 1"));
        }
        Ok(())
    }
}

/// Comparison indices touching each score index.
struct PixelIndex {
    members: Vec<Vec<usize>>,
    touched: Vec<usize>,
}

impl PixelIndex {
    fn new(spec: &ComparisonSpec) -> Self {
        let mut members = vec![Vec::new(); spec.score_len()];
        for i in 0..spec.len() {
            let (l, r) = spec.pair(i);
            members[l].push(i);
            members[r].push(i);
        }
        let touched = (0..members.len())
            .filter(|&p| !members[p].is_empty())
            .collect();
        PixelIndex { members, touched }
    }

    fn flip<R: Rng + ?Sized>(
        &self,
        base: &BinaryConfiguration,
        groups: usize,
        rng: &mut R,
    ) -> BinaryConfiguration {
        let mut out = base.clone();
        let groups = groups.min(self.touched.len());
        for j in sample(rng, self.touched.len(), groups) {
            for &bit in &self.members[self.touched[j]] {
                out.flip(bit);
            }
        }
        out
    }
}

fn flip_bits<R: Rng + ?Sized>(
    base: &BinaryConfiguration,
    flips: usize,
    rng: &mut R,
) -> BinaryConfiguration {
    let mut out = base.clone();
    for i in sample(rng, base.len(), flips) {
        out.flip(i);
    }
    out
}

fn sample_flipped<R: Rng + ?Sized>(
    base: &BinaryConfiguration,
    flips: usize,
    policy: &AnchorPolicy,
    spec: &ComparisonSpec,
    pixels: Option<&PixelIndex>,
    rng: &mut R,
) -> Result<Vec<BinaryConfiguration>> {
    if base.len() != spec.len() {
        return Err(Error::ArityMismatch {
            expected: spec.len(),
            found: base.len(),
        });
    }
    let built;
    let pixels = match (policy.pose_pixel_mode, pixels) {
        (false, _) => None,
        (true, Some(p)) => Some(p),
        (true, None) => {
            built = PixelIndex::new(spec);
            Some(&built)
        }
    };
    Ok((0..policy.count_per_type)
        .map(|_| match pixels {
            Some(index) => index.flip(base, flips, rng),
            None => flip_bits(base, flips, rng),
        })
        .collect())
}

/// Flips `good_flips` distinct positions of `best` per anchor.
pub fn sample_good<R: Rng + ?Sized>(
    best: &BinaryConfiguration,
    policy: &AnchorPolicy,
    spec: &ComparisonSpec,
    rng: &mut R,
) -> Result<Vec<BinaryConfiguration>> {
    if !policy.pose_pixel_mode && policy.good_flips > best.len() {
        return Err(Error::invalid(format!(
            "cannot flip {} of {} bits",
            policy.good_flips,
            best.len()
        )));
    }
    sample_flipped(best, policy.good_flips, policy, spec, None, rng)
}

/// Independent uniform bits.
pub fn sample_bad<R: Rng + ?Sized>(
    l: usize,
    policy: &AnchorPolicy,
    rng: &mut R,
) -> Vec<BinaryConfiguration> {
    (0..policy.count_per_type)
        .map(|_| BinaryConfiguration::new((0..l).map(|_| rng.random::<bool>()).collect()))
        .collect()
}

/// Flips up to `nearby_flips` positions of the current configuration.
pub fn sample_nearby<R: Rng + ?Sized>(
    current: &BinaryConfiguration,
    policy: &AnchorPolicy,
    spec: &ComparisonSpec,
    rng: &mut R,
) -> Result<Vec<BinaryConfiguration>> {
    let flips = policy.nearby_flips.min(current.len());
    sample_flipped(current, flips, policy, spec, None, rng)
}

/// Good, bad and nearby anchors for one step, deduplicated and evaluated.
pub fn build_anchor_set<R: Rng + ?Sized>(
    refactored: &Refactored,
    current: &BinaryConfiguration,
    policy: &AnchorPolicy,
    rng: &mut R,
) -> Result<AnchorSet> {
    policy.validate()?;
    let spec = &refactored.spec;
    let l = spec.len();
    if refactored.oracle.arity() != l {
        return Err(Error::ArityMismatch {
            expected: l,
            found: refactored.oracle.arity(),
        });
    }
    if current.len() != l {
        return Err(Error::ArityMismatch {
            expected: l,
            found: current.len(),
        });
    }
    let pixels = policy.pose_pixel_mode.then(|| PixelIndex::new(spec));
    let best = refactored.best_configuration();
    if !policy.pose_pixel_mode && policy.good_flips > l {
        return Err(Error::invalid(format!(
            "cannot flip {} of {l} bits",
            policy.good_flips
        )));
    }

    let good = sample_flipped(&best, policy.good_flips, policy, spec, pixels.as_ref(), rng)?;
    let bad = sample_bad(l, policy, rng);
    let nearby = sample_flipped(
        current,
        policy.nearby_flips.min(l),
        policy,
        spec,
        pixels.as_ref(),
        rng,
    )?;

    let candidates = good
        .into_iter()
        .map(|a| (a, AnchorKind::Good))
        .chain(bad.into_iter().map(|a| (a, AnchorKind::Bad)))
        .chain(nearby.into_iter().map(|a| (a, AnchorKind::Nearby)))
        .collect();
    AnchorSet::evaluate(candidates, refactored.oracle.as_ref())
}
