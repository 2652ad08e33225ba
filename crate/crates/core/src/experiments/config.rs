//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! task = binary-ap
//! loss = uniloss
//! hidden = 500,300
//! ```
//!
//! Keys accept `-` or `_` as separators. Later assignments win, so command
//! line flags are applied after the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ToyPoseConfig;
use crate::error::{Error, Result};
use crate::tasks::TaskKind;
use crate::train::{Mlp, RunConfig};

/// Sizes and noise of the generated pose splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseData {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub noise: f64,
    pub blob_sigma: f64,
    /// Seed of the generator, independent of the training seed.
    pub seed: u64,
}

impl Default for PoseData {
    fn default() -> Self {
        PoseData {
            train: 2000,
            val: 500,
            test: 500,
            noise: 0.3,
            blob_sigma: 1.0,
            seed: 1000,
        }
    }
}

impl PoseData {
    pub fn generator(&self, grid: usize, radius: f64) -> ToyPoseConfig {
        ToyPoseConfig {
            grid,
            radius,
            noise: self.noise,
            blob_sigma: self.blob_sigma,
        }
    }
}

/// A run configuration under construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub run: RunConfig,
    pub pose: PoseData,
    task_name: String,
    classes: usize,
    grid: usize,
    radius: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings::from_run(RunConfig::default())
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value '{value}' for '{key}' (expected true or false)"
        ))),
    }
}

impl Settings {
    pub fn from_run(run: RunConfig) -> Self {
        let (classes, grid, radius) = match run.task {
            TaskKind::Multiclass { classes } => (classes, 16, 2.0),
            TaskKind::BinaryAp => (10, 16, 2.0),
            TaskKind::Pose { grid, radius } => (10, grid, radius),
        };
        Settings {
            task_name: run.task.name().to_string(),
            run,
            pose: PoseData::default(),
            classes,
            grid,
            radius,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let run = &mut self.run;
        match key.as_str() {
            "run_id" => run.run_id = value.to_string(),
            "task" => {
                value.parse::<TaskKind>()?;
                self.task_name = value.to_string();
            }
            "classes" => self.classes = parse(&key, value)?,
            "grid" => self.grid = parse(&key, value)?,
            "radius" => self.radius = parse(&key, value)?,
            "loss" => run.loss = value.parse()?,
            "batch_size" => run.batch_size = parse(&key, value)?,
            "epochs" => run.epochs = parse(&key, value)?,
            "seed" => run.seed = parse(&key, value)?,
            "anchors_per_type" => run.anchors.count_per_type = parse(&key, value)?,
            "good_flips" => run.anchors.good_flips = parse(&key, value)?,
            "nearby_flips" => run.anchors.nearby_flips = parse(&key, value)?,
            "pose_pixel_mode" => run.anchors.pose_pixel_mode = parse_bool(&key, value)?,
            "binary_fraction" => run.binary_fraction = parse(&key, value)?,
            "temperature" => run.temperature = parse(&key, value)?,
            "sigma" => run.sigma = parse(&key, value)?,
            "bump_size" => run.bump_size = parse(&key, value)?,
            "optimizer" => run.optimizer = value.parse()?,
            "lr" => run.lr = parse(&key, value)?,
            "lr_decay_every" => run.lr_decay_every = parse(&key, value)?,
            "lr_decay_factor" => run.lr_decay_factor = parse(&key, value)?,
            "hidden" => {
                run.hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|h| parse(&key, h.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "eval_train" => run.eval_train = parse_bool(&key, value)?,
            "pose_train" => self.pose.train = parse(&key, value)?,
            "pose_val" => self.pose.val = parse(&key, value)?,
            "pose_test" => self.pose.test = parse(&key, value)?,
            "pose_noise" => self.pose.noise = parse(&key, value)?,
            "pose_blob_sigma" => self.pose.blob_sigma = parse(&key, value)?,
            "pose_seed" => self.pose.seed = parse(&key, value)?,
            // Informational keys echoed into logs.
            "init" | "rmsprop_alpha" | "rmsprop_epsilon" => {}
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every assignment of a config file's text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    n + 1
                )));
            };
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn task(&self) -> Result<TaskKind> {
        Ok(match self.task_name.parse::<TaskKind>()? {
            TaskKind::Multiclass { .. } => TaskKind::Multiclass {
                classes: self.classes,
            },
            TaskKind::BinaryAp => TaskKind::BinaryAp,
            TaskKind::Pose { .. } => TaskKind::Pose {
                grid: self.grid,
                radius: self.radius,
            },
        })
    }

    /// The validated run configuration.
    pub fn build(&self) -> Result<RunConfig> {
        let mut run = self.run.clone();
        run.task = self.task()?;
        run.validate()?;
        Ok(run)
    }

    /// Effective configuration as `key = value` pairs, including pose data
    /// parameters for pose runs.
    pub fn pairs(&self) -> Result<Vec<(String, String)>> {
        let run = self.build()?;
        let mut pairs = run.to_pairs();
        if let TaskKind::Pose { .. } = run.task {
            let p = &self.pose;
            for (k, v) in [
                ("pose_train", p.train.to_string()),
                ("pose_val", p.val.to_string()),
                ("pose_test", p.test.to_string()),
                ("pose_noise", p.noise.to_string()),
                ("pose_blob_sigma", p.blob_sigma.to_string()),
                ("pose_seed", p.seed.to_string()),
            ] {
                pairs.push((k.to_string(), v));
            }
        }
        Ok(pairs)
    }
}

/// Renders pairs in the file format accepted by [`Settings::apply_text`].
pub fn render_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// A trained model together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub config: Vec<(String, String)>,
    pub model: Mlp,
}

impl SavedModel {
    pub fn new(settings: &Settings, model: Mlp) -> Result<Self> {
        Ok(SavedModel {
            config: settings.pairs()?,
            model,
        })
    }

    pub fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        for (k, v) in &self.config {
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read model {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::LossKind;

    #[test]
    fn file_then_flags() {
        let mut s = Settings::default();
        s.apply_text("# demo\ntask = multiclass\nbatch-size = 64\nhidden = 32, 16\nlr=0.5\n")
            .unwrap();
        s.set("lr", "0.1").unwrap();
        let run = s.build().unwrap();
        assert_eq!(run.task, TaskKind::Multiclass { classes: 10 });
        assert_eq!(run.batch_size, 64);
        assert_eq!(run.hidden, vec![32, 16]);
        assert_eq!(run.lr, 0.1);
    }

    #[test]
    fn rendered_pairs_round_trip() {
        let mut s = Settings::default();
        s.apply_text(
            "task = pose\nloss = mse\nsigma = 0\ngrid = 12\nradius = 1.5\npose_noise = 0.05",
        )
        .unwrap();
        let text = render_pairs(&s.pairs().unwrap());
        let mut t = Settings::default();
        t.apply_text(&text).unwrap();
        assert_eq!(t.build().unwrap(), s.build().unwrap());
        assert_eq!(t.pose, s.pose);
        assert_eq!(t.build().unwrap().loss, LossKind::Mse);
    }

    #[test]
    fn saved_model_restores_settings() {
        use rand::SeedableRng;
        let mut s = Settings::default();
        s.apply_text("task = multiclass\nclasses = 3\nhidden = 4")
            .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let model = Mlp::new(&s.build().unwrap().layer_sizes(5), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        SavedModel::new(&s, model.clone())
            .unwrap()
            .save(&path)
            .unwrap();
        let back = SavedModel::load(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(
            back.settings().unwrap().build().unwrap(),
            s.build().unwrap()
        );
    }

    #[test]
    fn bad_lines_name_the_line() {
        let mut s = Settings::default();
        let err = s
            .apply_text("task = pose\nnonsense\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(s.apply_text("colour = blue").is_err());
        assert!(s.apply_text("epochs = many").is_err());
    }
}
