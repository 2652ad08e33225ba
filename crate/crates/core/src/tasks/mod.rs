//! Task adapters (accuracy, average precision, PCKh) and baseline losses.

pub mod ap;
pub mod baselines;
pub mod multiclass;
pub mod pose;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ap::{average_precision, ApOracle, BinaryApTask};
pub use baselines::{cross_entropy, mse_heatmap, GaussianHeatmapTarget};
pub use multiclass::{accuracy, AccuracyOracle, MulticlassTask};
pub use pose::{pckh, positive_pixels, Joint, PckhOracle, PoseTask};

use crate::error::{Error, Result};
use crate::refactor::ComparisonSpec;

/// Which task a dataset and model are built for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TaskKind {
    Multiclass { classes: usize },
    BinaryAp,
    Pose { grid: usize, radius: f64 },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Multiclass { .. } => "multiclass",
            TaskKind::BinaryAp => "binary-ap",
            TaskKind::Pose { .. } => "pose",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Task name as used on the command line; parameters take their defaults
/// (10 classes, 16x16 grid with radius 2).
impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(TaskKind::Multiclass { classes: 10 }),
            "binary-ap" => Ok(TaskKind::BinaryAp),
            "pose" => Ok(TaskKind::Pose {
                grid: 16,
                radius: 2.0,
            }),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected multiclass, binary-ap or pose)"
            ))),
        }
    }
}

/// Uniformly keeps `ceil(fraction * size)` comparisons of every group.
///
/// Returned indices are sorted. `fraction >= 1` keeps everything.
pub fn subsample_by_group<R: Rng + ?Sized>(
    spec: &ComparisonSpec,
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0) {
        return Err(Error::invalid(format!(
            "binary fraction must be in (0, 1], got {fraction}"
        )));
    }
    if fraction >= 1.0 {
        return Ok((0..spec.len()).collect());
    }
    let mut members: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &g) in spec.group_of().iter().enumerate() {
        match members.last_mut() {
            Some((last, list)) if *last == g => list.push(i),
            _ => match members.iter_mut().find(|(k, _)| *k == g) {
                Some((_, list)) => list.push(i),
                None => members.push((g, vec![i])),
            },
        }
    }
    let mut keep = Vec::new();
    for (_, list) in &members {
        let take = ((fraction * list.len() as f64).ceil() as usize).clamp(1, list.len());
        keep.extend(sample(rng, list.len(), take).into_iter().map(|j| list[j]));
    }
    keep.sort_unstable();
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn subsample_keeps_fraction_per_group() {
        let task = MulticlassTask::new(vec![0, 1, 2, 3], 10).unwrap();
        let spec = task.spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let keep = subsample_by_group(&spec, 0.2, &mut rng).unwrap();
        // ceil(0.2 * 9) = 2 per example
        assert_eq!(keep.len(), 8);
        for g in 0..4 {
            assert_eq!(keep.iter().filter(|&&i| spec.group_of()[i] == g).count(), 2);
        }
        assert!(keep.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn full_fraction_keeps_all() {
        let spec = MulticlassTask::new(vec![0, 1], 3).unwrap().spec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            subsample_by_group(&spec, 1.0, &mut rng).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert!(subsample_by_group(&spec, 0.0, &mut rng).is_err());
    }

    #[test]
    fn task_names_parse() {
        assert_eq!("binary-ap".parse::<TaskKind>().unwrap(), TaskKind::BinaryAp);
        assert!("segmentation".parse::<TaskKind>().is_err());
    }
}
