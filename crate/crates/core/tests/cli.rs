use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use uniloss::data::gen_toy_pose;
use uniloss::data::idx::{load_images, IMAGES_MAGIC};
use uniloss::data::{Targets, ToyPoseConfig};
use uniloss::experiments::read_log;

fn uniloss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uniloss"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = uniloss(args);
    assert!(
        out.status.success(),
        "uniloss {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_POSE: &str = "\
# tiny pose run
task = pose
grid = 8
radius = 1
pose_train = 64
pose_val = 16
pose_test = 16
hidden = 16
batch_size = 8
epochs = 2
optimizer = rmsprop
lr = 0.001
";

#[test]
fn gen_pose_round_trips_through_idx() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pose");
    ok(&[
        "gen-pose",
        "--count",
        "20",
        "--grid",
        "8",
        "--radius",
        "1",
        "--seed",
        "5",
        "--out-dir",
        path(&out),
    ]);

    let images = load_images(&out.join("images-idx3-ubyte")).unwrap();
    assert_eq!((images.count, images.rows, images.cols), (20, 8, 8));
    let config = ToyPoseConfig {
        grid: 8,
        radius: 1.0,
        ..ToyPoseConfig::default()
    };
    let expected = gen_toy_pose(20, config, 5).unwrap();
    for (a, b) in images.pixels.iter().zip(&expected.inputs) {
        assert!((a - b).abs() < 1e-12);
    }
    let Targets::Joints(joints) = expected.targets else {
        panic!()
    };
    let csv = fs::read_to_string(out.join("joints.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "row,col");
    assert_eq!(lines.len(), 21);
    assert_eq!(lines[1], format!("{},{}", joints[0].0, joints[0].1));
    let header = fs::read(out.join("images-idx3-ubyte")).unwrap();
    assert_eq!(
        u32::from_be_bytes(header[0..4].try_into().unwrap()),
        IMAGES_MAGIC
    );
}

#[test]
fn train_logs_config_and_rows_then_eval_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    fs::write(&config, SMALL_POSE).unwrap();
    let log = dir.path().join("log.csv");
    let model = dir.path().join("model.json");
    ok(&[
        "train",
        "--config",
        path(&config),
        "--run-id",
        "tiny",
        "--epochs",
        "3",
        "--out",
        path(&log),
        "--save-model",
        path(&model),
    ]);
    // A second run appends without a second header.
    ok(&[
        "train",
        "--config",
        path(&config),
        "--run-id",
        "again",
        "--loss",
        "mse",
        "--out",
        path(&log),
    ]);

    let text = fs::read_to_string(&log).unwrap();
    assert_eq!(text.matches("run_id,epoch,split").count(), 1);
    assert!(text.contains("# tiny: epochs = 3"), "{text}");
    assert!(text.contains("# again: loss = mse"), "{text}");
    let rows = read_log(&log).unwrap();
    let tiny: Vec<_> = rows.iter().filter(|r| r.run_id == "tiny").collect();
    // Epoch 0 train and val, then train and val per epoch, then test.
    assert_eq!(tiny.len(), 2 + 2 * 3 + 1);
    assert_eq!(tiny.last().unwrap().split, "test");
    assert!(tiny
        .iter()
        .filter(|r| r.epoch > 0 && r.split == "train")
        .all(|r| r.surrogate_loss.is_some()));
    assert!(rows
        .iter()
        .any(|r| r.run_id == "again" && r.loss_name == "mse"));

    let eval = ok(&["eval", "--model", path(&model), "--split", "test"]);
    let metric: f64 = eval.split_whitespace().last().unwrap().parse().unwrap();
    let test_row = tiny.last().unwrap().true_metric.unwrap();
    assert!(
        (metric - test_row).abs() < 1e-6,
        "eval {metric} vs log {test_row}"
    );
}

#[test]
fn fidelity_writes_a_row_per_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    fs::write(&config, SMALL_POSE).unwrap();
    let report = dir.path().join("fidelity.csv");
    ok(&[
        "fidelity",
        "--config",
        path(&config),
        "--samples",
        "8",
        "--fractions",
        "0,0.125,0.5",
        "--report",
        path(&report),
    ]);
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");
    assert!(text.starts_with("fraction,mean_l2,spearman,samples"));
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = uniloss(&["fetch-mnist-check", "--data-dir", path(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fetch-mnist-check"), "{err}");

    let config = dir.path().join("bad.cfg");
    fs::write(&config, "task = pose\ncolour = blue\n").unwrap();
    let out = uniloss(&["train", "--config", path(&config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = uniloss(&["train", "--task", "binary-ap", "--batch-size", "1"]);
    assert!(!out.status.success());
    let out = uniloss(&["preset", "imagenet"]);
    assert!(!out.status.success());
}
