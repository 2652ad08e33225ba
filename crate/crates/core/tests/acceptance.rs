//! End-to-end acceptance runner. Trains every reference configuration,
//! prints one PASS/FAIL line per criterion and exits nonzero on any failure.
//!
//! MNIST is read from `UNILOSS_MNIST_DIR`, defaulting to `data/mnist` at the
//! workspace root. Per-epoch rows go to `acceptance.csv` in the cargo test
//! scratch directory.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use uniloss::experiments::presets::{ap_recipe, multiclass_recipe, pose_recipe};
use uniloss::experiments::{
    run_fidelity, run_settings, DataStore, FidelityOptions, MetricLog, RunSummary, Settings,
};
use uniloss::train::{LossKind, TrainReport};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Runner {
    store: DataStore,
    log: MetricLog,
    started: Instant,
}

impl Runner {
    fn run(
        &mut self,
        mut settings: Settings,
        id: String,
    ) -> Result<(RunSummary, TrainReport), String> {
        settings.run.run_id = id.clone();
        let t = Instant::now();
        let out = run_settings(&settings, &self.store, &mut self.log)
            .map_err(|e| format!("{id}: {e}"))?;
        eprintln!(
            "  [{:>6.0}s] {id}: val {} test {} ({:.0}s{})",
            self.started.elapsed().as_secs_f64(),
            fmt(out.0.final_val),
            fmt(out.0.final_test),
            t.elapsed().as_secs_f64(),
            if out.0.diverged_at.is_some() {
                ", diverged"
            } else {
                ""
            }
        );
        Ok(out)
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn required(v: Option<f64>, what: &str) -> Result<f64, String> {
    v.ok_or_else(|| format!("{what} has no final metric (diverged)"))
}

struct Shared {
    ap_uniloss_s0: Option<f64>,
    multiclass_uniloss_128: Vec<f64>,
    multiclass_model: Option<uniloss::train::Mlp>,
}

fn c1_ap(r: &mut Runner, shared: &mut Shared) -> Result<String, String> {
    let mut uni = Vec::new();
    let mut ce = Vec::new();
    for seed in SEEDS {
        let (s, _) = r.run(
            ap_recipe(LossKind::CrossEntropy, seed),
            format!("ap-ce-s{seed}"),
        )?;
        ce.push(required(s.final_val, &s.run_id)?);
        let (s, _) = r.run(
            ap_recipe(LossKind::UniLoss, seed),
            format!("ap-uniloss-s{seed}"),
        )?;
        uni.push(required(s.final_val, &s.run_id)?);
    }
    shared.ap_uniloss_s0 = Some(uni[0]);
    let (u, c) = (mean(&uni), mean(&ce));
    let detail = format!("val AP uniloss {u:.4}, ce {c:.4}, gap {:.4}", (u - c).abs());
    if u >= 0.995 && c >= 0.995 && (u - c).abs() <= 0.004 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c2_anchors(r: &mut Runner, shared: &Shared) -> Result<String, String> {
    let mut values = Vec::new();
    for count in [5, 10] {
        let mut s = ap_recipe(LossKind::UniLoss, 0);
        s.run.anchors.count_per_type = count;
        let (s, _) = r.run(s, format!("anchors-{count}-s0"))?;
        values.push(required(s.final_val, &s.run_id)?);
    }
    values.push(shared.ap_uniloss_s0.ok_or("the 16-anchor run is missing")?);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "val AP at 5/10/16 anchors {:.4}/{:.4}/{:.4}, spread {:.4}",
        values[0],
        values[1],
        values[2],
        max - min
    );
    if min >= 0.995 && max - min <= 0.005 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c3_batches(r: &mut Runner, shared: &mut Shared) -> Result<String, String> {
    let mut acc = Vec::new();
    for batch in [8, 128, 1024] {
        let mut runs = Vec::new();
        for seed in SEEDS {
            let (s, report) = r.run(
                multiclass_recipe(LossKind::UniLoss, batch, seed),
                format!("batch-{batch}-s{seed}"),
            )?;
            runs.push(required(s.final_test, &s.run_id)?);
            if batch == 128 && seed == 0 {
                shared.multiclass_model = Some(report.model);
            }
        }
        if batch == 128 {
            shared.multiclass_uniloss_128 = runs.clone();
        }
        acc.push(mean(&runs));
    }
    let detail = format!(
        "test accuracy at batch 8/128/1024 {:.4}/{:.4}/{:.4}",
        acc[0], acc[1], acc[2]
    );
    if acc[1] > acc[0] && acc[1] > acc[2] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c4_multiclass(r: &mut Runner, shared: &Shared) -> Result<String, String> {
    let mut ce = Vec::new();
    for seed in SEEDS {
        let (s, _) = r.run(
            multiclass_recipe(LossKind::CrossEntropy, 128, seed),
            format!("multiclass-ce-s{seed}"),
        )?;
        ce.push(required(s.final_test, &s.run_id)?);
    }
    if shared.multiclass_uniloss_128.len() != SEEDS.len() {
        return Err("the batch-128 UniLoss runs are missing".into());
    }
    let (u, c) = (mean(&shared.multiclass_uniloss_128), mean(&ce));
    let detail = format!(
        "test accuracy uniloss {u:.4}, ce {c:.4}, gap {:.2} points",
        100.0 * (u - c).abs()
    );
    if (u - c).abs() <= 0.02 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c5_pose(r: &mut Runner) -> Result<String, String> {
    let mut uni = Vec::new();
    let mut delta = Vec::new();
    let mut delta_diverged = 0;
    let mut tuned = Vec::new();
    for seed in SEEDS {
        let (s, _) = r.run(
            pose_recipe(LossKind::UniLoss, 1.0, seed),
            format!("pose-uniloss-s{seed}"),
        )?;
        uni.push(required(s.final_test, &s.run_id)?);
        // Sigma is picked on validation PCKh, per seed.
        let mut best: Option<(f64, f64)> = None;
        for sigma in [0.5, 1.0, 2.0] {
            let (s, _) = r.run(
                pose_recipe(LossKind::Mse, sigma, seed),
                format!("pose-mse-sigma{sigma}-s{seed}"),
            )?;
            if let (Some(val), Some(test)) = (s.final_val, s.final_test) {
                if best.is_none_or(|(v, _)| val > v) {
                    best = Some((val, test));
                }
            }
        }
        tuned.push(best.ok_or("every tuned-sigma MSE run diverged")?.1);
        let (s, _) = r.run(
            pose_recipe(LossKind::Mse, 0.0, seed),
            format!("pose-mse-sigma0-s{seed}"),
        )?;
        match s.final_test {
            Some(v) if s.diverged_at.is_none() => delta.push(v),
            _ => delta_diverged += 1,
        }
    }
    let (u, t) = (mean(&uni), mean(&tuned));
    let delta_text = if delta.is_empty() {
        "diverged".to_string()
    } else {
        format!("{:.4} ({delta_diverged} diverged)", mean(&delta))
    };
    let detail =
        format!("test PCKh uniloss {u:.4}, tuned-sigma mse {t:.4}, delta mse {delta_text}");
    // A diverged seed counts as PCKh 0.
    let delta_mean = (delta.iter().sum::<f64>()) / SEEDS.len() as f64;
    if u >= 0.90 && t >= 0.90 && (delta_diverged == SEEDS.len() || delta_mean <= t - 0.05) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c6_fidelity(r: &mut Runner, shared: &Shared) -> Result<String, String> {
    let model = shared
        .multiclass_model
        .as_ref()
        .ok_or("the batch-128 UniLoss model is missing")?;
    let settings = multiclass_recipe(LossKind::UniLoss, 128, 0);
    let task = settings.task().map_err(|e| e.to_string())?;
    let splits = r.store.splits(&settings).map_err(|e| e.to_string())?;
    let options = FidelityOptions {
        anchors: settings.run.anchors,
        ..FidelityOptions::default()
    };
    let report = run_fidelity(task, model, &splits.train, &options).map_err(|e| e.to_string())?;
    for row in &report.rows {
        eprintln!(
            "  fraction {:.5}: spearman {:.3}, mean |e~ - e| {:.4}",
            row.fraction, row.spearman, row.mean_l2
        );
    }
    let at0 = report.correlation_at(0.0).ok_or("fraction 0 missing")?;
    let at_half = report.correlation_at(0.5).ok_or("fraction 1/2 missing")?;
    let detail = format!(
        "rank correlation {:.3} at 0, {:.3} at 1/2, {} inversions",
        at0,
        at_half,
        report.inversions()
    );
    if at0 > 0.9 && at_half < 0.5 && report.inversions() <= 1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c7_properties() -> Result<String, String> {
    common::refactoring_equivalence(1000, 1)?;
    common::idw_exact_hit_and_bounds(1000, 3)?;
    common::gradient_checks(20, 4)?;
    common::exhaustive_oracles()?;
    common::determinism()?;
    Ok("equivalence, IDW, gradients, exhaustive oracles, determinism".into())
}

fn main() -> ExitCode {
    let mnist_dir = std::env::var_os("UNILOSS_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let log_path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance.csv");
    let _ = std::fs::remove_file(&log_path);
    let log = match MetricLog::append_to(&log_path) {
        Ok(log) => log,
        Err(e) => {
            eprintln!("cannot open {}: {e}", log_path.display());
            return ExitCode::FAILURE;
        }
    };
    let mut runner = Runner {
        store: DataStore::new(mnist_dir),
        log,
        started: Instant::now(),
    };
    let mut shared = Shared {
        ap_uniloss_s0: None,
        multiclass_uniloss_128: Vec::new(),
        multiclass_model: None,
    };

    let mut results: Vec<(&str, Result<String, String>)> = Vec::new();
    results.push(("C7 property suite", c7_properties()));
    let mnist = runner.store.mnist().map(|_| ()).map_err(|e| e.to_string());
    if let Err(e) = &mnist {
        eprintln!("{e}");
    }
    let have = mnist.is_ok();
    let skip = || Err::<String, String>("MNIST unavailable".into());
    results.push((
        "C1 AP reproduction",
        if have {
            c1_ap(&mut runner, &mut shared)
        } else {
            skip()
        },
    ));
    results.push((
        "C2 anchor-count ablation",
        if have {
            c2_anchors(&mut runner, &shared)
        } else {
            skip()
        },
    ));
    results.push((
        "C3 batch-size ablation",
        if have {
            c3_batches(&mut runner, &mut shared)
        } else {
            skip()
        },
    ));
    results.push((
        "C4 multiclass parity",
        if have {
            c4_multiclass(&mut runner, &shared)
        } else {
            skip()
        },
    ));
    results.push(("C5 toy pose PCKh", c5_pose(&mut runner)));
    results.push((
        "C6 interpolation fidelity",
        if have {
            c6_fidelity(&mut runner, &shared)
        } else {
            skip()
        },
    ));

    results.sort_by_key(|(name, _)| *name);
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        runner.started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
