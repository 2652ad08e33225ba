//! How well the anchor interpolant tracks the true metric away from the
//! configurations met in training.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{build_anchor_set, AnchorPolicy, AnchorSet};
use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::refactor::{compute_comparisons, harden, BinaryConfiguration, Refactored, ScoreBatch};
use crate::relax::idw_value;
use crate::tasks::TaskKind;
use crate::train::{scores_from_outputs, Mlp};

pub const FIDELITY_FRACTIONS: [f64; 6] =
    [0.0, 1.0 / 512.0, 1.0 / 128.0, 1.0 / 32.0, 1.0 / 8.0, 0.5];

pub const DEFAULT_FIDELITY_SAMPLES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub fraction: f64,
    /// Mean `|e~ - e|` over the samples.
    pub mean_l2: f64,
    pub spearman: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub rows: Vec<FidelityRow>,
}

impl FidelityReport {
    pub fn correlation_at(&self, fraction: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.fraction == fraction)
            .map(|r| r.spearman)
    }

    /// Number of adjacent rows where the correlation goes up.
    pub fn inversions(&self) -> usize {
        self.rows
            .windows(2)
            .filter(|w| w[1].spearman > w[0].spearman)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityOptions {
    pub fractions: Vec<f64>,
    pub samples: usize,
    pub batch_size: usize,
    pub anchors: AnchorPolicy,
    pub seed: u64,
}

impl Default for FidelityOptions {
    fn default() -> Self {
        FidelityOptions {
            fractions: FIDELITY_FRACTIONS.to_vec(),
            samples: DEFAULT_FIDELITY_SAMPLES,
            batch_size: 128,
            anchors: AnchorPolicy::default(),
            seed: 0,
        }
    }
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation. A constant input has no ranking and yields 0.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    if x.len() < 2 {
        return 0.0;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

struct Encounter {
    refactored: Refactored,
    config: BinaryConfiguration,
    anchors: AnchorSet,
}

fn draw_batch(
    data: &Dataset,
    task: TaskKind,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let size = size.min(data.len());
    for _ in 0..1000 {
        let idx = sample(rng, data.len(), size).into_vec();
        let usable = match (&data.targets, task) {
            (Targets::Binary(f), TaskKind::BinaryAp) => {
                idx.iter().any(|&i| f[i]) && idx.iter().any(|&i| !f[i])
            }
            _ => true,
        };
        if usable {
            return Ok(idx);
        }
    }
    Err(Error::invalid(
        "could not draw a batch holding both classes",
    ))
}

/// For each fraction `f`, flips `ceil(f * l)` bits of configurations the
/// model produces on random batches and compares the interpolated metric
/// with the exact one. Anchors are drawn around the unperturbed
/// configuration, as in training; every fraction reuses the same encounters.
pub fn run_fidelity(
    task: TaskKind,
    model: &Mlp,
    data: &Dataset,
    options: &FidelityOptions,
) -> Result<FidelityReport> {
    if options.samples < 2 {
        return Err(Error::invalid("fidelity needs at least two samples"));
    }
    if let Some(f) = options.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::invalid(format!(
            "Hamming fraction {f} outside [0, 1]"
        )));
    }
    let mut fractions = options.fractions.clone();
    fractions.sort_by(|a, b| a.partial_cmp(b).expect("finite fractions"));

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut encounters = Vec::with_capacity(options.samples);
    for _ in 0..options.samples {
        let idx = draw_batch(data, task, options.batch_size, &mut rng)?;
        let definition = data.task_for(task, &idx)?;
        let outputs = model.predict(&data.subset(&idx).inputs, idx.len())?;
        let scores = ScoreBatch::new(
            idx.len(),
            definition.score_width(),
            scores_from_outputs(&outputs, task),
        )?;
        let refactored = definition.refactor(&scores)?;
        let config = harden(&compute_comparisons(&scores, &refactored.spec)?);
        let anchors = build_anchor_set(&refactored, &config, &options.anchors, &mut rng)?;
        encounters.push(Encounter {
            refactored,
            config,
            anchors,
        });
    }

    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in &fractions {
        let mut exact = Vec::with_capacity(encounters.len());
        let mut approx = Vec::with_capacity(encounters.len());
        for enc in &encounters {
            let l = enc.config.len();
            let flips = ((fraction * l as f64).ceil() as usize).min(l);
            let mut perturbed = enc.config.clone();
            for i in sample(&mut rng, l, flips) {
                perturbed.flip(i);
            }
            exact.push(enc.refactored.oracle.evaluate(&perturbed));
            approx.push(idw_value(&perturbed.to_f64(), &enc.anchors)?);
        }
        let mean_l2 = exact
            .iter()
            .zip(&approx)
            .map(|(e, a)| (e - a).abs())
            .sum::<f64>()
            / exact.len() as f64;
        rows.push(FidelityRow {
            fraction,
            mean_l2,
            spearman: spearman(&approx, &exact),
            samples: exact.len(),
        });
    }
    Ok(FidelityReport { rows })
}
