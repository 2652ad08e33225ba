//! Mini-batch training of MLPs with UniLoss or a baseline loss.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{build_anchor_set, AnchorPolicy};
use crate::autodiff::{gemm, Graph, NodeId, Parameter, Tensor};
use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::refactor::{compute_comparisons, harden, ScoreBatch};
use crate::relax::{uniloss, RelaxConfig};
use crate::tasks::{
    cross_entropy, mse_heatmap, subsample_by_group, GaussianHeatmapTarget, TaskKind,
};

/// Fully connected network with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// `[w0, b0, w1, b1, ...]`; weights are `(fan_in, fan_out)`.
    params: Vec<Parameter>,
}

impl Mlp {
    /// Weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            let weight = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out))?;
            let bias = Tensor::vector(draw(fan_out));
            params.push(Parameter::new(weight));
            params.push(Parameter::new(bias));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Records the forward pass of `x` (shape `(n, input_dim)`) on the tape.
    pub fn forward(&self, graph: &mut Graph, x: NodeId) -> Result<NodeId> {
        let layers = self.sizes.len() - 1;
        let mut h = x;
        for layer in 0..layers {
            let w = graph.param(2 * layer, &self.params[2 * layer]);
            let b = graph.param(2 * layer + 1, &self.params[2 * layer + 1]);
            h = graph.matmul(h, w)?;
            h = graph.add_bias(h, b)?;
            if layer + 1 < layers {
                h = graph.relu(h);
            }
        }
        Ok(h)
    }

    /// Outputs for `n` row-major inputs without recording a tape.
    pub fn predict(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        if inputs.len() != n * self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "predict",
                left: vec![n, inputs.len() / n.max(1)],
                right: vec![n, self.input_dim()],
            });
        }
        const CHUNK: usize = 1024;
        let mut out = Vec::with_capacity(n * self.output_dim());
        let dim = self.input_dim();
        let layers = self.sizes.len() - 1;
        for start in (0..n).step_by(CHUNK) {
            let rows = CHUNK.min(n - start);
            let mut h = inputs[start * dim..(start + rows) * dim].to_vec();
            for layer in 0..layers {
                let (k, m) = (self.sizes[layer], self.sizes[layer + 1]);
                let mut next = gemm(
                    rows,
                    k,
                    m,
                    &h,
                    false,
                    self.params[2 * layer].tensor.data(),
                    false,
                );
                let bias = self.params[2 * layer + 1].tensor.data();
                for row in next.chunks_mut(m) {
                    for (v, b) in row.iter_mut().zip(bias) {
                        *v += b;
                        if layer + 1 < layers && *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                h = next;
            }
            out.extend_from_slice(&h);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    UniLoss,
    CrossEntropy,
    Mse,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::UniLoss => "uniloss",
            LossKind::CrossEntropy => "ce",
            LossKind::Mse => "mse",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniloss" => Ok(LossKind::UniLoss),
            "ce" => Ok(LossKind::CrossEntropy),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!(
                "unknown loss '{other}' (expected uniloss, ce or mse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(Error::Config(format!(
                "unknown optimizer '{other}' (expected sgd or rmsprop)"
            ))),
        }
    }
}

pub const RMSPROP_ALPHA: f64 = 0.99;
pub const RMSPROP_EPSILON: f64 = 1e-8;

/// Step-decay schedule: `lr * factor^(epoch / every)`; `every == 0` keeps
/// the rate constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            decay_every: 0,
            decay_factor: 1.0,
        }
    }

    pub fn at_epoch(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            self.initial
        } else {
            self.initial * self.decay_factor.powi((epoch / self.decay_every) as i32)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub schedule: LrSchedule,
    pub alpha: f64,
    pub epsilon: f64,
    accumulators: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, schedule: LrSchedule) -> Result<Self> {
        if !(schedule.initial >= 0.0) || !schedule.initial.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {}",
                schedule.initial
            )));
        }
        Ok(OptimizerState {
            kind,
            schedule,
            alpha: RMSPROP_ALPHA,
            epsilon: RMSPROP_EPSILON,
            accumulators: Vec::new(),
        })
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn update(&mut self, params: &mut [Parameter], lr: f64) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if p.gradient.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let grad = p.gradient.data().to_vec();
                    for (w, g) in p.tensor.data_mut().iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::RmsProp => {
                if self.accumulators.len() != params.len() {
                    self.accumulators = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
                }
                let (alpha, eps) = (self.alpha, self.epsilon);
                for (p, acc) in params.iter_mut().zip(&mut self.accumulators) {
                    let grad = p.gradient.data().to_vec();
                    for ((w, g), v) in p.tensor.data_mut().iter_mut().zip(grad).zip(acc.iter_mut())
                    {
                        *v = alpha * *v + (1.0 - alpha) * g * g;
                        *w -= lr * g / (v.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub task: TaskKind,
    pub loss: LossKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub anchors: AnchorPolicy,
    /// Fraction of comparisons per group trained each step.
    pub binary_fraction: f64,
    pub temperature: f64,
    pub sigma: f64,
    pub bump_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub hidden: Vec<usize>,
    /// Evaluate the full training split after every epoch.
    pub eval_train: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            task: TaskKind::BinaryAp,
            loss: LossKind::UniLoss,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            anchors: AnchorPolicy::default(),
            binary_fraction: 1.0,
            temperature: 1.0,
            sigma: 1.0,
            bump_size: 7,
            optimizer: OptimizerKind::Sgd,
            lr: 0.01,
            lr_decay_every: 0,
            lr_decay_factor: 1.0,
            hidden: vec![500, 300],
            eval_train: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.task == TaskKind::BinaryAp && self.batch_size < 2 {
            return Err(Error::Config(
                "average precision needs batch size >= 2".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if !(self.binary_fraction > 0.0 && self.binary_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "binary fraction must be in (0, 1], got {}",
                self.binary_fraction
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.lr_decay_every > 0 && !(self.lr_decay_factor > 0.0) {
            return Err(Error::Config(
                "learning-rate decay factor must be > 0".into(),
            ));
        }
        self.anchors
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        match (self.loss, self.task) {
            (LossKind::Mse, TaskKind::Pose { .. }) => {}
            (LossKind::Mse, task) => {
                return Err(Error::Config(format!(
                    "mse loss needs the pose task, not {task}"
                )))
            }
            (LossKind::CrossEntropy, TaskKind::Pose { .. }) => {
                return Err(Error::Config(
                    "ce loss is defined for multiclass and binary-ap".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial: self.lr,
            decay_every: self.lr_decay_every,
            decay_factor: self.lr_decay_factor,
        }
    }

    /// Network output width: two logits for AP (score = logit1 - logit0),
    /// one per class or per pixel otherwise.
    pub fn output_dim(&self) -> usize {
        match self.task {
            TaskKind::Multiclass { classes } => classes,
            TaskKind::BinaryAp => 2,
            TaskKind::Pose { grid, .. } => grid * grid,
        }
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.output_dim());
        sizes
    }

    /// Flat `key = value` pairs describing the effective configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let mut pairs = [
            ("run_id", self.run_id.clone()),
            ("task", self.task.name().to_string()),
            ("loss", self.loss.name().to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("anchors_per_type", self.anchors.count_per_type.to_string()),
            ("good_flips", self.anchors.good_flips.to_string()),
            ("nearby_flips", self.anchors.nearby_flips.to_string()),
            ("pose_pixel_mode", self.anchors.pose_pixel_mode.to_string()),
            ("binary_fraction", self.binary_fraction.to_string()),
            ("temperature", self.temperature.to_string()),
            ("sigma", self.sigma.to_string()),
            ("bump_size", self.bump_size.to_string()),
            ("optimizer", self.optimizer.name().to_string()),
            ("lr", self.lr.to_string()),
            ("lr_decay_every", self.lr_decay_every.to_string()),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("hidden", hidden.join(",")),
            ("init", "uniform(+-1/sqrt(fan_in))".to_string()),
            ("rmsprop_alpha", RMSPROP_ALPHA.to_string()),
            ("rmsprop_epsilon", RMSPROP_EPSILON.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect::<Vec<_>>();
        let task_params = match self.task {
            TaskKind::Multiclass { classes } => vec![("classes", classes.to_string())],
            TaskKind::BinaryAp => vec![],
            TaskKind::Pose { grid, radius } => {
                vec![("grid", grid.to_string()), ("radius", radius.to_string())]
            }
        };
        pairs.splice(
            2..2,
            task_params.into_iter().map(|(k, v)| (k.to_string(), v)),
        );
        pairs
    }
}

/// Per-step state that is not part of the model: optimizer and RNG.
pub struct Trainer<'a> {
    pub config: &'a RunConfig,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
}

/// Per-example scores the task sees: AP uses `logit1 - logit0`.
pub fn task_scores(graph: &mut Graph, outputs: NodeId, task: TaskKind) -> Result<NodeId> {
    if task != TaskKind::BinaryAp {
        return Ok(outputs);
    }
    let n = graph.value(outputs).shape()[0];
    let pos: Vec<usize> = (0..n).map(|i| 2 * i + 1).collect();
    let neg: Vec<usize> = (0..n).map(|i| 2 * i).collect();
    let a = graph.gather(outputs, &pos)?;
    let b = graph.gather(outputs, &neg)?;
    graph.sub(a, b)
}

/// Flat task scores from raw network outputs.
pub fn scores_from_outputs(outputs: &[f64], task: TaskKind) -> Vec<f64> {
    match task {
        TaskKind::BinaryAp => outputs.chunks(2).map(|o| o[1] - o[0]).collect(),
        _ => outputs.to_vec(),
    }
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            optimizer: OptimizerState::new(config.optimizer, config.schedule())?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    /// Records the configured loss for the batch `idx` of `data`.
    pub fn loss_node(
        &mut self,
        graph: &mut Graph,
        model: &Mlp,
        data: &Dataset,
        idx: &[usize],
    ) -> Result<NodeId> {
        let cfg = self.config;
        let x = graph.input(data.batch_inputs(idx));
        let outputs = model.forward(graph, x)?;
        match cfg.loss {
            LossKind::CrossEntropy => {
                let labels: Vec<usize> = match &data.targets {
                    Targets::Labels(y) => idx.iter().map(|&i| y[i]).collect(),
                    Targets::Binary(f) => idx.iter().map(|&i| usize::from(f[i])).collect(),
                    Targets::Joints(_) => {
                        return Err(Error::Config("ce loss needs class labels".into()))
                    }
                };
                cross_entropy(graph, outputs, &labels)
            }
            LossKind::Mse => {
                let (TaskKind::Pose { grid, .. }, Targets::Joints(joints)) =
                    (cfg.task, &data.targets)
                else {
                    return Err(Error::Config("mse loss needs the pose task".into()));
                };
                let batch_joints: Vec<_> = idx.iter().map(|&i| joints[i]).collect();
                let target = GaussianHeatmapTarget {
                    sigma: cfg.sigma,
                    bump_size: cfg.bump_size,
                };
                mse_heatmap(graph, outputs, &target.batch(grid, &batch_joints))
            }
            LossKind::UniLoss => {
                let scores = task_scores(graph, outputs, cfg.task)?;
                let task = data.task_for(cfg.task, idx)?;
                let batch = ScoreBatch::new(
                    idx.len(),
                    task.score_width(),
                    graph.value(scores).data().to_vec(),
                )?;
                let mut refactored = task.refactor(&batch)?;
                if cfg.binary_fraction < 1.0 {
                    let keep =
                        subsample_by_group(&refactored.spec, cfg.binary_fraction, &mut self.rng)?;
                    let full = harden(&compute_comparisons(&batch, &refactored.spec)?);
                    refactored = refactored.restrict(&keep, &full)?;
                }
                let current = harden(&compute_comparisons(&batch, &refactored.spec)?);
                let anchors = build_anchor_set(&refactored, &current, &cfg.anchors, &mut self.rng)?;
                let relax = RelaxConfig {
                    temperature: cfg.temperature,
                };
                uniloss(graph, scores, &refactored, &anchors, relax)
            }
        }
    }

    /// One gradient step on the batch `idx`; returns the loss before the update.
    pub fn step(&mut self, model: &mut Mlp, data: &Dataset, idx: &[usize], lr: f64) -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut graph = Graph::new();
        let loss = self.loss_node(&mut graph, model, data, idx)?;
        let value = graph.value(loss).item().expect("scalar loss");
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        graph.backward_into(loss, model.params_mut())?;
        self.optimizer.update(model.params_mut(), lr)?;
        Ok(value)
    }

    /// Shuffled mini-batches for one epoch. For AP every batch gets a share of
    /// positives and negatives so that each one defines the metric.
    pub fn batches(&mut self, data: &Dataset) -> Vec<Vec<usize>> {
        let b = self.config.batch_size;
        let n = data.len();
        match &data.targets {
            Targets::Binary(flags) if self.config.task == TaskKind::BinaryAp => {
                let mut pos: Vec<usize> = (0..n).filter(|&i| flags[i]).collect();
                let mut neg: Vec<usize> = (0..n).filter(|&i| !flags[i]).collect();
                pos.shuffle(&mut self.rng);
                neg.shuffle(&mut self.rng);
                let count = n.div_ceil(b).max(1);
                let mut out = vec![Vec::with_capacity(b + 1); count];
                for (k, i) in pos.into_iter().enumerate() {
                    out[k % count].push(i);
                }
                for (k, i) in neg.into_iter().enumerate() {
                    out[count - 1 - k % count].push(i);
                }
                for batch in &mut out {
                    batch.shuffle(&mut self.rng);
                }
                out
            }
            _ => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut self.rng);
                order.chunks(b).map(<[usize]>::to_vec).collect()
            }
        }
    }
}

/// True metric over a whole split, from pooled scores.
pub fn evaluate(model: &Mlp, data: &Dataset, task: TaskKind) -> Result<f64> {
    let outputs = model.predict(&data.inputs, data.len())?;
    let scores = scores_from_outputs(&outputs, task);
    let all: Vec<usize> = (0..data.len()).collect();
    let definition = data.task_for(task, &all)?;
    let batch = ScoreBatch::new(data.len(), definition.score_width(), scores)?;
    definition.evaluate_original(&batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One line of metric history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    /// Mean training loss over the epoch's steps (train rows only).
    pub surrogate_loss: Option<f64>,
    pub true_metric: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    /// A non-finite loss or gradient stopped the run during this epoch.
    Diverged {
        epoch: usize,
    },
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Mlp,
    pub history: Vec<EpochRecord>,
    pub status: RunStatus,
}

impl TrainReport {
    /// Last recorded metric on `split`.
    pub fn final_metric(&self, split: Split) -> Option<f64> {
        self.history
            .iter()
            .rev()
            .find(|r| r.split == split)
            .map(|r| r.true_metric)
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    pub fn surrogate_losses(&self) -> Vec<f64> {
        self.history
            .iter()
            .filter_map(|r| r.surrogate_loss)
            .collect()
    }
}

/// Trains a fresh model. Epoch 0 rows describe the untrained model; the test
/// split, when given, is scored once at the end.
pub fn train(
    config: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<TrainReport> {
    train_with(config, train_set, val_set, test_set, |_| {})
}

/// [`train`] with a callback invoked on every new history record.
pub fn train_with(
    config: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: Option<&Dataset>,
    mut on_record: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(config)?;
    if train_set.dim != val_set.dim {
        return Err(Error::invalid(
            "train and validation inputs differ in width",
        ));
    }
    let mut model = Mlp::new(&config.layer_sizes(train_set.dim), &mut trainer.rng)?;
    let started = Instant::now();
    let mut history = Vec::new();
    let mut push = |history: &mut Vec<EpochRecord>,
                    epoch: usize,
                    split: Split,
                    loss: Option<f64>,
                    metric: f64| {
        let record = EpochRecord {
            epoch,
            split,
            surrogate_loss: loss,
            true_metric: metric,
            wallclock_s: started.elapsed().as_secs_f64(),
        };
        on_record(&record);
        history.push(record);
    };
    let train_metric = |model: &Mlp, epoch: usize| -> Result<f64> {
        if config.eval_train || epoch == 0 {
            evaluate(model, train_set, config.task)
        } else {
            Ok(f64::NAN)
        }
    };
    push(
        &mut history,
        0,
        Split::Train,
        None,
        train_metric(&model, 0)?,
    );
    push(
        &mut history,
        0,
        Split::Val,
        None,
        evaluate(&model, val_set, config.task)?,
    );

    let mut status = RunStatus::Completed;
    'epochs: for epoch in 1..=config.epochs {
        let lr = trainer.optimizer.schedule.at_epoch(epoch - 1);
        let mut total = 0.0;
        let mut steps = 0usize;
        for idx in trainer.batches(train_set) {
            match trainer.step(&mut model, train_set, &idx, lr) {
                Ok(loss) => {
                    total += loss;
                    steps += 1;
                }
                Err(Error::NonFinite(_)) => {
                    status = RunStatus::Diverged { epoch };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let mean = if steps > 0 {
            total / steps as f64
        } else {
            f64::NAN
        };
        if model.params().iter().any(|p| !p.tensor.all_finite()) {
            status = RunStatus::Diverged { epoch };
            break;
        }
        push(
            &mut history,
            epoch,
            Split::Train,
            Some(mean),
            train_metric(&model, epoch)?,
        );
        push(
            &mut history,
            epoch,
            Split::Val,
            None,
            evaluate(&model, val_set, config.task)?,
        );
    }

    if let (Some(test), RunStatus::Completed) = (test_set, status) {
        let metric = evaluate(&model, test, config.task)?;
        push(&mut history, config.epochs, Split::Test, None, metric);
    }
    Ok(TrainReport {
        model,
        history,
        status,
    })
}
