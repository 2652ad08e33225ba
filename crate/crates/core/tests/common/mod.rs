//! Property checks shared by the property tests and the acceptance runner.
//! Each returns `Err` with a description of the first violation.

#![allow(dead_code)]

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uniloss::anchors::{build_anchor_set, AnchorKind, AnchorPolicy, AnchorSet};
use uniloss::autodiff::{check_gradient, Graph, NodeId, Tensor};
use uniloss::data::{Dataset, Targets};
use uniloss::refactor::{
    compute_comparisons, evaluate_original, evaluate_refactored, harden, BinaryConfiguration,
    MetricOracle, Refactored, ScoreBatch, TaskDefinition,
};
use uniloss::relax::{idw_value, idw_value_and_gradient, uniloss, RelaxConfig};
use uniloss::tasks::{
    cross_entropy, mse_heatmap, ApOracle, BinaryApTask, GaussianHeatmapTarget, MulticlassTask,
    PoseTask, TaskKind,
};
use uniloss::train::{train, LossKind, RunConfig};

pub type Check = Result<(), String>;

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

fn distinct_scores(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    loop {
        let s: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut sorted = s.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).all(|w| w[0] != w[1]) {
            return s;
        }
    }
}

pub fn random_multiclass(rng: &mut ChaCha8Rng) -> MulticlassTask {
    let p = rng.random_range(2..=6);
    let n = rng.random_range(1..=6);
    MulticlassTask::new((0..n).map(|_| rng.random_range(0..p)).collect(), p).unwrap()
}

pub fn random_ap(rng: &mut ChaCha8Rng) -> BinaryApTask {
    loop {
        let n = rng.random_range(2..=12);
        let flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        if let Ok(task) = BinaryApTask::new(flags) {
            return task;
        }
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> PoseTask {
    let grid = rng.random_range(4..=7);
    let radius = rng.random_range(1.0..(grid as f64 / 2.0));
    let n = rng.random_range(1..=3);
    let joints = (0..n)
        .map(|_| (rng.random_range(0..grid), rng.random_range(0..grid)))
        .collect();
    PoseTask::new(grid, radius, joints).unwrap()
}

fn equivalence_on(task: &dyn TaskDefinition, rng: &mut ChaCha8Rng, what: &str) -> Check {
    let s = ScoreBatch::new(
        task.batch_len(),
        task.score_width(),
        distinct_scores(rng, task.batch_len() * task.score_width()),
    )
    .map_err(|e| e.to_string())?;
    let original = evaluate_original(&s, task).map_err(|e| e.to_string())?;
    let refactored = evaluate_refactored(&s, task).map_err(|e| e.to_string())?;
    if (original - refactored).abs() > 1e-12 {
        return Err(format!(
            "{what}: original {original} != refactored {refactored} for {:?}",
            s.flat()
        ));
    }
    Ok(())
}

/// Original and refactored evaluation agree on random tie-free batches.
pub fn refactoring_equivalence(batches: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..batches {
        let t = random_multiclass(&mut rng);
        equivalence_on(&t, &mut rng, "multiclass")?;
        let t = random_ap(&mut rng);
        equivalence_on(&t, &mut rng, "binary-ap")?;
        let t = random_pose(&mut rng);
        equivalence_on(&t, &mut rng, "pose")?;
    }
    Ok(())
}

/// Positive rescaling of all scores leaves every metric unchanged.
pub fn scale_invariance(batches: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..batches {
        let tasks: Vec<Box<dyn TaskDefinition>> = vec![
            Box::new(random_multiclass(&mut rng)),
            Box::new(random_ap(&mut rng)),
            Box::new(random_pose(&mut rng)),
        ];
        for task in &tasks {
            let s = ScoreBatch::new(
                task.batch_len(),
                task.score_width(),
                distinct_scores(&mut rng, task.batch_len() * task.score_width()),
            )
            .unwrap();
            let k = rng.random_range(0.01..100.0);
            let a = evaluate_original(&s, task.as_ref()).unwrap();
            let b = evaluate_original(&s.scaled(k).unwrap(), task.as_ref()).unwrap();
            if a != b {
                return Err(format!("metric changed under scaling by {k}: {a} vs {b}"));
            }
        }
    }
    Ok(())
}

pub fn random_anchor_set(rng: &mut ChaCha8Rng) -> AnchorSet {
    let l = rng.random_range(1..=12);
    let max_t = if l >= 4 { 12 } else { 1 << l };
    let t = rng.random_range(1..=max_t);
    let mut codes = sample(rng, 1 << l, t).into_vec();
    codes.sort_unstable();
    let anchors: Vec<_> = codes
        .iter()
        .map(|&c| BinaryConfiguration::from_index(c as u64, l))
        .collect();
    let values: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..2.0)).collect();
    AnchorSet::new(anchors, values, vec![AnchorKind::Given; t]).unwrap()
}

/// IDW reproduces anchor values exactly and stays within their range.
pub fn idw_exact_hit_and_bounds(sets: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in 0..sets {
        let set = random_anchor_set(&mut rng);
        for (a, &v) in set.anchors().iter().zip(set.values()) {
            let got = idw_value(&a.to_f64(), &set).map_err(|e| e.to_string())?;
            if got != v {
                return Err(format!(
                    "set {n}: value at anchor {a:?} is {got}, expected {v}"
                ));
            }
        }
        for _ in 0..5 {
            let u: Vec<f64> = (0..set.arity())
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            let (value, grad) = idw_value_and_gradient(&u, &set).map_err(|e| e.to_string())?;
            if value < set.min_value() || value > set.max_value() {
                return Err(format!(
                    "set {n}: value {value} outside [{}, {}]",
                    set.min_value(),
                    set.max_value()
                ));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(format!("set {n}: non-finite gradient at {u:?}"));
            }
        }
    }
    Ok(())
}

fn gradient_ok(name: &str, report: uniloss::autodiff::GradientReport) -> Check {
    if report.passed() {
        Ok(())
    } else {
        Err(format!(
            "{name}: relative gradient error {:.3e} at {:?}",
            report.max_relative_error, report.worst
        ))
    }
}

fn uniloss_instance(
    task: &dyn TaskDefinition,
    rng: &mut ChaCha8Rng,
) -> (Tensor, Refactored, AnchorSet) {
    let s = distinct_scores(rng, task.batch_len() * task.score_width());
    let batch = ScoreBatch::new(task.batch_len(), task.score_width(), s.clone()).unwrap();
    let refactored = task.refactor(&batch).unwrap();
    let current = harden(&compute_comparisons(&batch, &refactored.spec).unwrap());
    let policy = AnchorPolicy {
        count_per_type: 4,
        ..AnchorPolicy::default()
    };
    let anchors = build_anchor_set(&refactored, &current, &policy, rng).unwrap();
    (Tensor::vector(s), refactored, anchors)
}

/// Analytic gradients of UniLoss, cross-entropy and heatmap MSE match central
/// differences, both on raw scores and through a small MLP.
pub fn gradient_checks(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relax = RelaxConfig::default();
    for n in 0..instances {
        let tasks: Vec<Box<dyn TaskDefinition>> = vec![
            Box::new(random_multiclass(&mut rng)),
            Box::new(random_ap(&mut rng)),
            Box::new(random_pose(&mut rng)),
        ];
        for task in &tasks {
            let (scores, refactored, anchors) = uniloss_instance(task.as_ref(), &mut rng);
            let report = check_gradient(
                |g, p| uniloss(g, p[0], &refactored, &anchors, relax),
                &[scores],
                1e-6,
                GRADIENT_TOLERANCE,
            )
            .map_err(|e| e.to_string())?;
            gradient_ok(&format!("uniloss instance {n}"), report)?;
        }

        // UniLoss through a one-hidden-layer network.
        let task = random_multiclass(&mut rng);
        let (rows, p) = (task.batch_len(), task.classes());
        let x = Tensor::matrix(
            rows,
            3,
            (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let w1 =
            Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w2 = Tensor::matrix(
            4,
            p,
            (0..4 * p).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let net = |g: &mut Graph, w: &[NodeId]| -> uniloss::Result<NodeId> {
            let xn = g.input(x.clone());
            let h = g.matmul(xn, w[0])?;
            let h = g.sigmoid(h);
            g.matmul(h, w[1])
        };
        let mut probe = Graph::new();
        let ids = [probe.variable(w1.clone()), probe.variable(w2.clone())];
        let out = net(&mut probe, &ids).unwrap();
        let batch = ScoreBatch::from_tensor(probe.value(out)).unwrap();
        let refactored = task.refactor(&batch).unwrap();
        let current = harden(&compute_comparisons(&batch, &refactored.spec).unwrap());
        let anchors =
            build_anchor_set(&refactored, &current, &AnchorPolicy::default(), &mut rng).unwrap();
        let report = check_gradient(
            |g, w| {
                let s = net(g, w)?;
                uniloss(g, s, &refactored, &anchors, relax)
            },
            &[w1, w2],
            1e-6,
            GRADIENT_TOLERANCE,
        )
        .map_err(|e| e.to_string())?;
        gradient_ok(&format!("uniloss network instance {n}"), report)?;

        // Cross-entropy.
        let classes = rng.random_range(2..=6);
        let rows = rng.random_range(1..=5);
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let logits = Tensor::matrix(
            rows,
            classes,
            (0..rows * classes)
                .map(|_| rng.random_range(-4.0..4.0))
                .collect(),
        )
        .unwrap();
        let report = check_gradient(
            |g, p| cross_entropy(g, p[0], &labels),
            &[logits],
            1e-6,
            GRADIENT_TOLERANCE,
        )
        .map_err(|e| e.to_string())?;
        gradient_ok(&format!("cross-entropy instance {n}"), report)?;

        // Heatmap MSE.
        let grid = rng.random_range(4..=6);
        let joints: Vec<_> = (0..2)
            .map(|_| (rng.random_range(0..grid), rng.random_range(0..grid)))
            .collect();
        let target = GaussianHeatmapTarget {
            sigma: rng.random_range(0.0..2.0),
            bump_size: 5,
        }
        .batch(grid, &joints);
        let maps = Tensor::matrix(
            2,
            grid * grid,
            (0..2 * grid * grid)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let report = check_gradient(
            |g, p| mse_heatmap(g, p[0], &target),
            &[maps],
            1e-6,
            GRADIENT_TOLERANCE,
        )
        .map_err(|e| e.to_string())?;
        gradient_ok(&format!("mse instance {n}"), report)?;
    }
    Ok(())
}

/// `unique` demands that only the all-ones configuration is optimal; PCKh
/// only needs one positive pixel to win, so it has many optima.
fn exhaustive(oracle: &dyn MetricOracle, unique: bool, what: &str) -> Check {
    let l = oracle.arity();
    assert!(l <= 16);
    let best = oracle.evaluate(&BinaryConfiguration::ones(l));
    if best != 1.0 {
        return Err(format!(
            "{what}: all-ones configuration scores {best}, expected 1"
        ));
    }
    for code in 0..(1u64 << l) {
        let b = BinaryConfiguration::from_index(code, l);
        let v = oracle.evaluate(&b);
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("{what}: value {v} at {b:?} outside [0, 1]"));
        }
        if unique && v == 1.0 && b.count_ones() != l {
            return Err(format!(
                "{what}: {b:?} is not all ones but reaches the optimum"
            ));
        }
    }
    Ok(())
}

/// Every oracle with at most 16 bits stays in [0, 1] over all configurations
/// and reaches 1 at the all-ones configuration.
pub fn exhaustive_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Multiclass: every (n, p) with n (p - 1) <= 16, every label of the first example.
    for p in 2..=17usize {
        for n in 1..=16usize {
            if n * (p - 1) > 16 {
                continue;
            }
            for y0 in 0..p {
                let mut labels = vec![y0];
                labels.extend((1..n).map(|_| rng.random_range(0..p)));
                let task = MulticlassTask::new(labels, p).unwrap();
                exhaustive(&task.oracle(), true, &format!("multiclass n={n} p={p}"))?;
            }
        }
    }
    // AP: every (P, N) with P N <= 16 under several reference orders.
    for pos in 1..=16usize {
        for neg in 1..=16usize {
            if pos * neg > 16 {
                continue;
            }
            for _ in 0..3 {
                let order = sample(&mut rng, pos, pos).into_vec();
                exhaustive(
                    &ApOracle::with_order(order, neg),
                    true,
                    &format!("ap P={pos} N={neg}"),
                )?;
            }
        }
    }
    // Pose: grids small enough for l <= 16.
    for grid in 2..=4usize {
        for radius in [0.0, 0.5, 1.0] {
            for r in 0..grid {
                for c in 0..grid {
                    let Ok(task) = PoseTask::new(grid, radius, vec![(r, c)]) else {
                        continue;
                    };
                    let l = task.spec().len();
                    if l > 16 {
                        continue;
                    }
                    exhaustive(
                        &task.oracle(),
                        false,
                        &format!("pose G={grid} r={radius} joint=({r},{c})"),
                    )?;
                    if 2 * l <= 16 {
                        let pair = PoseTask::new(grid, radius, vec![(r, c), (c, r)]).unwrap();
                        exhaustive(
                            &pair.oracle(),
                            false,
                            &format!("pose pair G={grid} r={radius}"),
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn toy_dataset(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..96 {
        let y = rng.random_range(0..3usize);
        for j in 0..4 {
            inputs.push(f64::from(u8::from(j == y)) + rng.random_range(-0.3..0.3));
        }
        labels.push(y);
    }
    Dataset::new(inputs, 4, Targets::Labels(labels)).unwrap()
}

/// Seeded anchor sampling and training reproduce bit-identical results.
pub fn determinism() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let task = random_pose(&mut rng);
    let (_, refactored, _) = uniloss_instance(&task, &mut rng);
    let current = BinaryConfiguration::zeros(refactored.spec.len());
    for pixel_mode in [false, true] {
        let policy = AnchorPolicy {
            pose_pixel_mode: pixel_mode,
            ..AnchorPolicy::default()
        };
        let a = build_anchor_set(
            &refactored,
            &current,
            &policy,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let b = build_anchor_set(
            &refactored,
            &current,
            &policy,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        if a.anchors() != b.anchors() || a.values() != b.values() {
            return Err("anchor sampling differs under one seed".into());
        }
    }
    let data = toy_dataset(3);
    for loss in [LossKind::UniLoss, LossKind::CrossEntropy] {
        let cfg = RunConfig {
            task: TaskKind::Multiclass { classes: 3 },
            loss,
            batch_size: 16,
            epochs: 2,
            hidden: vec![6],
            lr: 0.05,
            ..RunConfig::default()
        };
        let a = train(&cfg, &data, &data, None).map_err(|e| e.to_string())?;
        let b = train(&cfg, &data, &data, None).map_err(|e| e.to_string())?;
        if a.model != b.model {
            return Err(format!(
                "{loss}: trained parameters differ between identical runs"
            ));
        }
        let metrics = |r: &uniloss::train::TrainReport| -> Vec<u64> {
            r.history.iter().map(|h| h.true_metric.to_bits()).collect()
        };
        if metrics(&a) != metrics(&b) {
            return Err(format!(
                "{loss}: metric history differs between identical runs"
            ));
        }
    }
    Ok(())
}
