use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use uniloss::data::idx::{self, IdxImages};
use uniloss::data::{
    gen_toy_pose, make_binary_labels, mnist_paths, Targets, ToyPoseConfig, MNIST_DIM,
};
use uniloss::experiments::{
    run_fidelity, run_preset, run_settings, summary_table, DataStore, FidelityOptions, MetricLog,
    PresetOptions, SavedModel, Settings, FIDELITY_FRACTIONS,
};
use uniloss::train::{evaluate, Split};

#[derive(Parser)]
#[command(
    name = "uniloss",
    version,
    about = "Train networks directly on non-differentiable metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and log per-epoch metrics.
    Train {
        #[command(flatten)]
        run: RunFlags,
        /// Write the trained model (JSON) here.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Score a saved model on a split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        #[arg(long, default_value = "val", value_parser = ["train", "val", "test"])]
        split: String,
    },
    /// Run a named experiment recipe.
    Preset {
        /// ap-mnist, anchors-ablation, multiclass-mnist, batch-ablation, pose-sigma or pose-toy
        name: String,
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Override the recipe's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary table path (default: next to --out).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Compare interpolated and exact metrics on perturbed configurations.
    Fidelity {
        /// Saved model; without it a model is trained from the run flags.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Comma-separated Hamming fractions.
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
        /// CSV report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a generated heatmap dataset as IDX images plus joints CSV.
    GenPose {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data/pose")]
        out_dir: PathBuf,
    },
    /// Verify local MNIST IDX files by magic number and dimensions.
    FetchMnistCheck {
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
    },
}

/// Run options; any flag given overrides the config file.
#[derive(Args, Default)]
struct RunFlags {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Metric log CSV (appended).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long, value_parser = ["multiclass", "binary-ap", "pose"])]
    task: Option<String>,
    #[arg(long, value_parser = ["uniloss", "ce", "mse"])]
    loss: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    anchors_per_type: Option<usize>,
    #[arg(long)]
    good_flips: Option<usize>,
    #[arg(long)]
    nearby_flips: Option<usize>,
    #[arg(long)]
    binary_fraction: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    bump_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = ["sgd", "rmsprop"])]
    optimizer: Option<String>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    hidden: Option<String>,
}

impl RunFlags {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        let overrides: [(&str, Option<String>); 15] = [
            ("run_id", self.run_id.clone()),
            ("task", self.task.clone()),
            ("loss", self.loss.clone()),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            (
                "anchors_per_type",
                self.anchors_per_type.map(|v| v.to_string()),
            ),
            ("good_flips", self.good_flips.map(|v| v.to_string())),
            ("nearby_flips", self.nearby_flips.map(|v| v.to_string())),
            (
                "binary_fraction",
                self.binary_fraction.map(|v| v.to_string()),
            ),
            ("sigma", self.sigma.map(|v| v.to_string())),
            ("bump_size", self.bump_size.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("optimizer", self.optimizer.clone()),
            ("hidden", self.hidden.clone()),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                s.set(key, &v)?;
            }
        }
        s.build()?;
        Ok(s)
    }
}

fn open_log(out: Option<&Path>) -> Result<MetricLog> {
    Ok(match out {
        Some(path) => {
            MetricLog::append_to(path).with_context(|| format!("opening {}", path.display()))?
        }
        None => MetricLog::in_memory(),
    })
}

fn train_command(run: &RunFlags, save_model: Option<&Path>) -> Result<()> {
    let settings = run.settings()?;
    let store = DataStore::new(&run.data_dir);
    let mut log = open_log(run.out.as_deref())?;
    let (summary, report) = run_settings(&settings, &store, &mut log)?;
    for row in log.rows() {
        println!(
            "epoch {:>3} {:<5} loss {:>10} metric {}",
            row.epoch,
            row.split,
            row.surrogate_loss.map_or("-".into(), |l| format!("{l:.6}")),
            row.true_metric.map_or("-".into(), |m| format!("{m:.6}")),
        );
    }
    if let Some(epoch) = summary.diverged_at {
        eprintln!("training diverged in epoch {epoch}");
    }
    if let Some(path) = save_model {
        SavedModel::new(&settings, report.model)?.save(path)?;
        println!("model written to {}", path.display());
    }
    Ok(())
}

fn eval_command(model: &Path, data_dir: &Path, split: &str) -> Result<()> {
    let saved = SavedModel::load(model)?;
    let settings = saved.settings()?;
    let splits = DataStore::new(data_dir).splits(&settings)?;
    let (which, data) = match split {
        "train" => (Split::Train, &splits.train),
        "val" => (Split::Val, &splits.val),
        _ => (
            Split::Test,
            splits
                .test
                .as_ref()
                .context("no test split for this task")?,
        ),
    };
    let metric = evaluate(&saved.model, data, settings.task()?)?;
    println!("{} {} {metric:.6}", settings.task()?, which.name());
    Ok(())
}

fn fidelity_command(
    model: Option<&Path>,
    run: &RunFlags,
    samples: usize,
    fractions: &[f64],
    report_path: Option<&Path>,
) -> Result<()> {
    let store = DataStore::new(&run.data_dir);
    let (settings, mlp) = match model {
        Some(path) => {
            let saved = SavedModel::load(path)?;
            (saved.settings()?, saved.model)
        }
        None => {
            let settings = run.settings()?;
            let mut log = open_log(run.out.as_deref())?;
            let (_, report) = run_settings(&settings, &store, &mut log)?;
            (settings, report.model)
        }
    };
    let config = settings.build()?;
    let splits = store.splits(&settings)?;
    let options = FidelityOptions {
        fractions: if fractions.is_empty() {
            FIDELITY_FRACTIONS.to_vec()
        } else {
            fractions.to_vec()
        },
        samples,
        batch_size: config.batch_size,
        anchors: config.anchors.clone(),
        seed: config.seed,
    };
    let report = run_fidelity(config.task, &mlp, &splits.train, &options)?;
    println!("{:>10} {:>10} {:>10}", "fraction", "mean_l2", "spearman");
    for r in &report.rows {
        println!(
            "{:>10.6} {:>10.6} {:>10.4}",
            r.fraction, r.mean_l2, r.spearman
        );
    }
    if let Some(path) = report_path {
        let mut w = csv::Writer::from_path(path)?;
        for r in &report.rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn gen_pose_command(count: usize, config: ToyPoseConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let data = gen_toy_pose(count, config, seed)?;
    let Targets::Joints(joints) = &data.targets else {
        bail!("generator returned non-joint targets");
    };
    fs::create_dir_all(out_dir)?;
    let images = IdxImages {
        count,
        rows: config.grid,
        cols: config.grid,
        pixels: data.inputs.clone(),
    };
    idx::write_images(&out_dir.join("images-idx3-ubyte"), &images)?;
    let mut w = csv::Writer::from_path(out_dir.join("joints.csv"))?;
    w.write_record(["row", "col"])?;
    for (r, c) in joints {
        w.write_record([r.to_string(), c.to_string()])?;
    }
    w.flush()?;
    println!(
        "wrote {count} images of {}x{} to {}",
        config.grid,
        config.grid,
        out_dir.display()
    );
    Ok(())
}

fn fetch_mnist_check(dir: &Path) -> Result<()> {
    let [train_images, train_labels, test_images, test_labels] = mnist_paths(dir)?;
    let mut ok = true;
    for (path, expected) in [
        (&train_images, vec![60000, 28, 28]),
        (&train_labels, vec![60000]),
        (&test_images, vec![10000, 28, 28]),
        (&test_labels, vec![10000]),
    ] {
        let magic = if expected.len() == 3 {
            idx::IMAGES_MAGIC
        } else {
            idx::LABELS_MAGIC
        };
        let file = idx::IdxFile::read(path, magic)?;
        let status = if file.dims == expected {
            "ok"
        } else {
            "UNEXPECTED"
        };
        ok &= file.dims == expected;
        println!(
            "{status:<10} {} magic {:#010x} dims {:?}",
            path.display(),
            file.magic,
            file.dims
        );
    }
    let labels = idx::load_labels(&train_labels)?;
    let positives = make_binary_labels(&labels).iter().filter(|&&p| p).count();
    println!(
        "train zeros: {positives} of {} ({:.4}); image width {MNIST_DIM}",
        labels.len(),
        positives as f64 / labels.len() as f64
    );
    if !ok {
        bail!(
            "MNIST files in {} do not have the standard dimensions",
            dir.display()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { run, save_model } => train_command(&run, save_model.as_deref()),
        Command::Eval {
            model,
            data_dir,
            split,
        } => eval_command(&model, &data_dir, &split),
        Command::Preset {
            name,
            data_dir,
            seeds,
            epochs,
            out,
            summary,
        } => {
            let store = DataStore::new(data_dir);
            let options = PresetOptions {
                seeds,
                epochs,
                out,
                summary,
            };
            let summaries = run_preset(&name, &store, &options)?;
            print!("{}", summary_table(&summaries));
            Ok(())
        }
        Command::Fidelity {
            model,
            run,
            samples,
            fractions,
            report,
        } => fidelity_command(
            model.as_deref(),
            &run,
            samples,
            &fractions,
            report.as_deref(),
        ),
        Command::GenPose {
            count,
            grid,
            radius,
            noise,
            seed,
            out_dir,
        } => {
            let config = ToyPoseConfig {
                grid,
                radius,
                noise,
                ..ToyPoseConfig::default()
            };
            gen_pose_command(count, config, seed, &out_dir)
        }
        Command::FetchMnistCheck { data_dir } => fetch_mnist_check(&data_dir),
    }
}
