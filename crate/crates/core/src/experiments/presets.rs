//! Named experiment recipes and the driver that runs them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::data::{gen_toy_pose, load_mnist, Mnist, Splits};
use crate::error::{Error, Result};
use crate::tasks::TaskKind;
use crate::train::{train_with, LossKind, OptimizerKind, RunConfig, RunStatus, Split, TrainReport};

use super::config::Settings;
use super::log::{LogRow, MetricLog};

pub const PRESETS: [&str; 6] = [
    "ap-mnist",
    "anchors-ablation",
    "multiclass-mnist",
    "batch-ablation",
    "pose-sigma",
    "pose-toy",
];

pub const BATCH_SIZES: [usize; 8] = [8, 16, 32, 64, 128, 256, 512, 1024];
pub const ANCHOR_COUNTS: [usize; 3] = [5, 10, 16];
/// Target spreads for the heatmap MSE baseline; 0 is the one-hot target.
pub const MSE_SIGMAS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

/// Zeros-vs-rest AP on MNIST: 784-500-300 MLP, SGD at 0.01, 30 epochs,
/// batches of 128, 16 anchors of each type.
pub fn ap_recipe(loss: LossKind, seed: u64) -> Settings {
    let mut run = RunConfig {
        task: TaskKind::BinaryAp,
        loss,
        hidden: vec![500, 300],
        optimizer: OptimizerKind::Sgd,
        lr: 0.01,
        epochs: 30,
        batch_size: 128,
        seed,
        eval_train: false,
        ..RunConfig::default()
    };
    run.anchors.count_per_type = 16;
    Settings::from_run(run)
}

/// 10-class MNIST with a smaller MLP trained by RMSProp.
pub fn multiclass_recipe(loss: LossKind, batch_size: usize, seed: u64) -> Settings {
    let mut run = ap_recipe(loss, seed).run;
    run.task = TaskKind::Multiclass { classes: 10 };
    run.hidden = vec![256];
    run.optimizer = OptimizerKind::RmsProp;
    run.lr = 1e-3;
    run.epochs = 5;
    run.batch_size = batch_size;
    Settings::from_run(run)
}

/// Generated 16x16 heatmap task with radius 2.
pub fn pose_recipe(loss: LossKind, sigma: f64, seed: u64) -> Settings {
    let mut run = ap_recipe(loss, seed).run;
    run.task = TaskKind::Pose {
        grid: 16,
        radius: 2.0,
    };
    run.hidden = vec![256];
    run.optimizer = OptimizerKind::RmsProp;
    run.lr = 1e-3;
    run.epochs = 20;
    run.batch_size = 32;
    run.sigma = sigma;
    run.bump_size = 7;
    run.anchors.pose_pixel_mode = true;
    Settings::from_run(run)
}

fn named(mut s: Settings, id: String) -> Settings {
    s.run.run_id = id;
    s
}

/// Every run of a preset, in execution order.
pub fn preset_runs(name: &str, seeds: &[u64]) -> Result<Vec<Settings>> {
    let mut runs = Vec::new();
    for &seed in seeds {
        match name {
            "ap-mnist" => {
                for loss in [LossKind::CrossEntropy, LossKind::UniLoss] {
                    runs.push(named(
                        ap_recipe(loss, seed),
                        format!("ap-mnist-{loss}-s{seed}"),
                    ));
                }
            }
            "anchors-ablation" => {
                for count in ANCHOR_COUNTS {
                    let mut s = ap_recipe(LossKind::UniLoss, seed);
                    s.run.anchors.count_per_type = count;
                    runs.push(named(s, format!("anchors-{count}-s{seed}")));
                }
            }
            "multiclass-mnist" => {
                for loss in [LossKind::CrossEntropy, LossKind::UniLoss] {
                    runs.push(named(
                        multiclass_recipe(loss, 128, seed),
                        format!("multiclass-{loss}-s{seed}"),
                    ));
                }
            }
            "batch-ablation" => {
                for b in BATCH_SIZES {
                    runs.push(named(
                        multiclass_recipe(LossKind::UniLoss, b, seed),
                        format!("batch-{b}-s{seed}"),
                    ));
                }
            }
            "pose-sigma" => {
                for sigma in MSE_SIGMAS {
                    runs.push(named(
                        pose_recipe(LossKind::Mse, sigma, seed),
                        format!("pose-mse-sigma{sigma}-s{seed}"),
                    ));
                }
                runs.push(named(
                    pose_recipe(LossKind::UniLoss, 1.0, seed),
                    format!("pose-uniloss-s{seed}"),
                ));
            }
            "pose-toy" => {
                runs.push(named(
                    pose_recipe(LossKind::UniLoss, 1.0, seed),
                    format!("pose-uniloss-s{seed}"),
                ));
                runs.push(named(
                    pose_recipe(LossKind::Mse, 1.0, seed),
                    format!("pose-mse-s{seed}"),
                ));
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (available: {})",
                    PRESETS.join(", ")
                )))
            }
        }
    }
    Ok(runs)
}

/// Datasets shared by the runs of one process. MNIST is read at most once.
pub struct DataStore {
    mnist_dir: PathBuf,
    mnist: OnceLock<Mnist>,
}

impl DataStore {
    pub fn new(mnist_dir: impl Into<PathBuf>) -> Self {
        DataStore {
            mnist_dir: mnist_dir.into(),
            mnist: OnceLock::new(),
        }
    }

    pub fn mnist_dir(&self) -> &Path {
        &self.mnist_dir
    }

    pub fn mnist(&self) -> Result<&Mnist> {
        if let Some(m) = self.mnist.get() {
            return Ok(m);
        }
        let loaded = load_mnist(&self.mnist_dir)?;
        Ok(self.mnist.get_or_init(|| loaded))
    }

    /// Train / validation / test splits for a configured run.
    pub fn splits(&self, settings: &Settings) -> Result<Splits> {
        match settings.task()? {
            TaskKind::Pose { grid, radius } => {
                let p = settings.pose;
                let generator = p.generator(grid, radius);
                Ok(Splits {
                    train: gen_toy_pose(p.train, generator, p.seed)?,
                    val: gen_toy_pose(p.val, generator, p.seed.wrapping_add(1))?,
                    test: Some(gen_toy_pose(p.test, generator, p.seed.wrapping_add(2))?),
                })
            }
            kind => self.mnist()?.splits(kind),
        }
    }
}

/// Outcome of one run, for summary tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub task: String,
    pub loss: String,
    pub seed: u64,
    pub final_val: Option<f64>,
    pub final_test: Option<f64>,
    pub diverged_at: Option<usize>,
    pub wallclock_s: f64,
}

impl RunSummary {
    fn from_report(settings: &Settings, report: &TrainReport) -> Result<Self> {
        let run = settings.build()?;
        Ok(RunSummary {
            run_id: run.run_id.clone(),
            task: run.task.name().to_string(),
            loss: run.loss.name().to_string(),
            seed: run.seed,
            final_val: report.final_metric(Split::Val),
            final_test: report.final_metric(Split::Test),
            diverged_at: match report.status {
                RunStatus::Diverged { epoch } => Some(epoch),
                RunStatus::Completed => None,
            },
            wallclock_s: report.history.last().map_or(0.0, |r| r.wallclock_s),
        })
    }

    /// Run id without its seed suffix.
    pub fn group(&self) -> &str {
        self.run_id
            .rsplit_once("-s")
            .filter(|(_, s)| s.chars().all(|c| c.is_ascii_digit()))
            .map_or(&self.run_id, |(g, _)| g)
    }
}

/// Trains one configured run, appending its config and rows to `log`.
pub fn run_settings(
    settings: &Settings,
    store: &DataStore,
    log: &mut MetricLog,
) -> Result<(RunSummary, TrainReport)> {
    let run = settings.build()?;
    let splits = store.splits(settings)?;
    log.write_config(&run.run_id, &settings.pairs()?)?;
    let mut pending = Vec::new();
    let report = train_with(
        &run,
        &splits.train,
        &splits.val,
        splits.test.as_ref(),
        |r| {
            pending.push(LogRow::from_record(&run.run_id, run.loss.name(), r));
        },
    )?;
    for row in pending {
        log.push(row)?;
    }
    Ok((RunSummary::from_report(settings, &report)?, report))
}

/// Per-group means over seeds, as an aligned text table.
pub fn summary_table(summaries: &[RunSummary]) -> String {
    let mut groups: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    let mut order = Vec::new();
    for s in summaries {
        if !groups.contains_key(s.group()) {
            order.push(s.group());
        }
        groups.entry(s.group()).or_default().push(s);
    }
    let mean = |v: Vec<f64>| -> String {
        if v.is_empty() {
            "-".into()
        } else {
            format!("{:.4}", v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>5} {:>10} {:>10} {:>9}",
        "run", "seeds", "val", "test", "diverged"
    );
    for g in order {
        let runs = &groups[g];
        let val = mean(runs.iter().filter_map(|r| r.final_val).collect());
        let test = mean(runs.iter().filter_map(|r| r.final_test).collect());
        let diverged = runs.iter().filter(|r| r.diverged_at.is_some()).count();
        let _ = writeln!(
            out,
            "{g:<28} {:>5} {val:>10} {test:>10} {diverged:>9}",
            runs.len()
        );
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct PresetOptions {
    pub seeds: Vec<u64>,
    /// Overrides every run's epoch count.
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

/// Runs every configuration of a preset, logging rows and writing the
/// summary table next to the log (or to `options.summary`).
pub fn run_preset(
    name: &str,
    store: &DataStore,
    options: &PresetOptions,
) -> Result<Vec<RunSummary>> {
    let seeds = if options.seeds.is_empty() {
        DEFAULT_SEEDS.to_vec()
    } else {
        options.seeds.clone()
    };
    let mut runs = preset_runs(name, &seeds)?;
    if let Some(epochs) = options.epochs {
        for r in &mut runs {
            r.run.epochs = epochs;
        }
    }
    if runs
        .iter()
        .any(|r| !matches!(r.task(), Ok(TaskKind::Pose { .. })))
    {
        store.mnist()?;
    }
    let mut log = match &options.out {
        Some(path) => MetricLog::append_to(path)?,
        None => MetricLog::in_memory(),
    };
    let mut summaries = Vec::with_capacity(runs.len());
    for settings in &runs {
        let (summary, _) = run_settings(settings, store, &mut log)?;
        summaries.push(summary);
    }
    let table = summary_table(&summaries);
    let summary_path = options.summary.clone().or_else(|| {
        options
            .out
            .as_ref()
            .map(|p| p.with_extension("summary.txt"))
    });
    if let Some(path) = summary_path {
        fs::write(path, &table)?;
    }
    Ok(summaries)
}
