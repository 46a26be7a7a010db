//! Optimizers, learning-rate schedule and the training loop.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{ArrayViewD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::Mode;
use crate::loss::{bce_logit_grad, loss_ce, loss_mse, loss_mse_grad};
use crate::model::{sigmoid, Network, Task};
use crate::tensor::Tensor;
use crate::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    /// Stochastic gradient descent with momentum.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    /// The rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::detection()
    }
}

impl TrainConfig {
    pub fn detection() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            momentum: 0.98,
            decay_factor: 0.9,
            decay_every: 10,
            batch_size: 8,
            epochs: 100,
            seed: 0,
        }
    }

    pub fn regression() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::detection()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NetError::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(NetError::Parameter(format!(
                "decay factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(NetError::Parameter("decay_every, batch_size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NetError::Parameter(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

pub trait Optimizer {
    fn step(&mut self, net: &mut Network, lr: f64);
}

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new()
    }
}

impl Optimizer for Adam {
    fn step(&mut self, net: &mut Network, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = self.eps as f32;
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        let mut i = 0;
        net.visit_params(&mut |p| {
            if m_all.len() <= i {
                m_all.push(vec![0.0; p.len()]);
                v_all.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut m_all[i], &mut v_all[i]);
            for k in 0..p.len() {
                let g = p.grad[k];
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                p.value[k] -= step * m[k] / (v[k].sqrt() + eps);
            }
            i += 1;
        });
    }
}

pub struct Sgd {
    pub momentum: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum: momentum as f32,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, net: &mut Network, lr: f64) {
        let mu = self.momentum;
        let lr = lr as f32;
        let vel = &mut self.velocity;
        let mut i = 0;
        net.visit_params(&mut |p| {
            if vel.len() <= i {
                vel.push(vec![0.0; p.len()]);
            }
            for (k, v) in vel[i].iter_mut().enumerate() {
                *v = mu * *v + p.grad[k];
                p.value[k] -= lr * *v;
            }
            i += 1;
        });
    }
}

/// Inputs and targets, each a batch of one `[1, C, T, H, W]`.
#[derive(Debug, Clone, Default)]
pub struct Samples {
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Tensor>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, input: Tensor, target: Tensor) {
        self.inputs.push(input);
        self.targets.push(target);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Training-set loss of the initial weights.
    pub initial_loss: f64,
    /// Training-set loss of the returned weights.
    pub final_loss: f64,
}

pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_metric,lr\n");
    for r in log {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_metric, r.lr);
    }
    s
}

pub fn write_log_csv(path: &Path, log: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, log_csv(log)).map_err(|e| NetError::io(path, e))
}

/// Loss of a batch and its gradient with respect to the raw output.
pub fn batch_loss(task: Task, output: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if output.shape != target.shape {
        return Err(NetError::Shape(format!(
            "output {:?} and target {:?} differ",
            output.shape, target.shape
        )));
    }
    let dim = IxDyn(&output.shape);
    let n = output.len() as f32;
    let mut grad = Tensor::zeros(output.shape);
    let loss = match task {
        Task::Detection => {
            let prob: Vec<f32> = output.data.iter().map(|&z| sigmoid(z)).collect();
            bce_logit_grad(&prob, &target.data, &mut grad.data, n);
            let p = ArrayViewD::from_shape(dim.clone(), &prob).expect("shape matches");
            let t = ArrayViewD::from_shape(dim, &target.data).expect("shape matches");
            loss_ce(p, t)? as f64
        }
        Task::Regression => {
            let p = ArrayViewD::from_shape(dim.clone(), &output.data).expect("shape matches");
            let t = ArrayViewD::from_shape(dim, &target.data).expect("shape matches");
            grad.data = loss_mse_grad(p.view(), t.view())?.into_raw_vec_and_offset().0;
            loss_mse(p, t)? as f64
        }
    };
    Ok((loss, grad))
}

/// Per-pixel accuracy at threshold 0.5 (detection) or mean absolute error
/// (regression) of evaluation-mode predictions.
pub fn evaluate_metric(net: &mut Network, data: &Samples, batch_size: usize) -> Result<f64> {
    let task = net.task();
    let (mut sum, mut count) = (0.0f64, 0usize);
    for idx in (0..data.len()).collect::<Vec<_>>().chunks(batch_size.max(1)) {
        let x = Tensor::stack(&idx.iter().map(|&i| &data.inputs[i]).collect::<Vec<_>>())?;
        let t = Tensor::stack(&idx.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>())?;
        let y = net.predict(&x)?;
        if y.shape != t.shape {
            return Err(NetError::Shape(format!("prediction {:?} vs target {:?}", y.shape, t.shape)));
        }
        for (&p, &g) in y.data.iter().zip(&t.data) {
            sum += match task {
                Task::Detection => ((p > 0.5) == (g > 0.5)) as u8 as f64,
                Task::Regression => (p - g).abs() as f64,
            };
        }
        count += y.len();
    }
    Ok(sum / count.max(1) as f64)
}

/// Mean loss over a sample set with batch statistics, as seen by training.
/// Running statistics are left untouched.
pub fn dataset_loss(net: &mut Network, data: &Samples, batch_size: usize) -> Result<f64> {
    let mut buffers = Vec::new();
    net.visit_buffers(&mut |b| buffers.push(b.clone()));
    let loss = mean_train_loss(net, data, batch_size);
    let mut it = buffers.into_iter();
    net.visit_buffers(&mut |b| *b = it.next().expect("buffer layout is fixed"));
    loss
}

fn mean_train_loss(net: &mut Network, data: &Samples, batch_size: usize) -> Result<f64> {
    let task = net.task();
    let (mut sum, mut seen) = (0.0f64, 0usize);
    for idx in (0..data.len()).collect::<Vec<_>>().chunks(batch_size.max(1)) {
        let x = Tensor::stack(&idx.iter().map(|&i| &data.inputs[i]).collect::<Vec<_>>())?;
        let t = Tensor::stack(&idx.iter().map(|&i| &data.targets[i]).collect::<Vec<_>>())?;
        let y = net.forward(&x, Mode::Train)?;
        sum += batch_loss(task, &y, &t)?.0 * idx.len() as f64;
        seen += idx.len();
    }
    Ok(sum / seen.max(1) as f64)
}

fn better(task: Task, candidate: f64, best: f64) -> bool {
    match task {
        Task::Detection => candidate > best,
        Task::Regression => candidate < best,
    }
}

/// Trains `net` in place and leaves it holding the weights of the epoch
/// with the best validation metric.
pub fn train(
    net: &mut Network,
    train_set: &Samples,
    val_set: &Samples,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NetError::EmptyDataset("training"));
    }
    if val_set.is_empty() {
        return Err(NetError::EmptyDataset("validation"));
    }
    let task = net.task();
    let mut opt: Box<dyn Optimizer> = match cfg.optimizer {
        OptimizerKind::Adam => Box::new(Adam::new()),
        OptimizerKind::Sgd => Box::new(Sgd::new(cfg.momentum)),
    };
    let initial_loss = dataset_loss(net, train_set, cfg.batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<Vec<f32>>)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = Tensor::stack(&idx.iter().map(|&i| &train_set.inputs[i]).collect::<Vec<_>>())?;
            let t = Tensor::stack(&idx.iter().map(|&i| &train_set.targets[i]).collect::<Vec<_>>())?;
            let y = net.forward(&x, Mode::Train)?;
            let (loss, grad) = batch_loss(task, &y, &t)?;
            if !loss.is_finite() {
                return Err(NetError::Diverged {
                    epoch: epoch + 1,
                    batch: b,
                    loss,
                });
            }
            net.zero_grad();
            net.backward(&grad);
            opt.step(net, lr);
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        let val_metric = evaluate_metric(net, val_set, cfg.batch_size)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            val_metric,
            lr,
        };
        log::info!(
            "epoch {} loss {:.6} val {:.6} lr {:.6}",
            record.epoch,
            record.train_loss,
            record.val_metric,
            lr
        );
        on_epoch(&record);
        log.push(record);
        if best.as_ref().is_none_or(|(_, m, _)| better(task, val_metric, *m)) {
            best = Some((epoch + 1, val_metric, net.state()));
        }
    }
    let (best_epoch, best_metric, state) = best.expect("at least one epoch");
    net.load_state(&state)?;
    Ok(TrainReport {
        log,
        best_epoch,
        best_metric,
        initial_loss,
        final_loss: dataset_loss(net, train_set, cfg.batch_size)?,
    })
}
