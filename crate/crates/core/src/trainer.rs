//! Mini-batch momentum SGD on the loss, with one proximal pass of the
//! regularizer at the end of every epoch.
//!
//! The proximal step size is the learning rate of the epoch that just ran.
//! Once a group is exactly zero after a proximal pass it can be frozen: its
//! gradient updates are suppressed and its momentum buffer cleared, so it stays
//! zero for the rest of training.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{Network, ParamSet};
use crate::regularization::{prox_all_in_place, regularizer_value, RegularizerConfig};

/// Loss above this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// 1-based epochs at whose start the learning rate is multiplied by
    /// `lr_drop_factor`.
    #[serde(default)]
    pub lr_drop_epochs: Vec<usize>,
    #[serde(default = "default_drop")]
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub freeze_killed: bool,
    /// Plain `||theta||^2 / 2` weight decay added to the loss gradient.
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_drop() -> f64 {
    0.1
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.batches_per_epoch == 0 || self.batch_size == 0 {
            return err("batches_per_epoch and batch_size must be >= 1".into());
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return err(format!("initial_lr must be finite and >= 0, got {}", self.initial_lr));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor < 1.0) {
            return err(format!("lr_drop_factor must lie in (0, 1), got {}", self.lr_drop_factor));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return err(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.lr_drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return err("lr_drop_epochs must be strictly increasing".into());
        }
        if let Some(&e) = self.lr_drop_epochs.iter().find(|&&e| e < 1 || e > self.epochs) {
            return err(format!("lr_drop_epoch {e} outside [1, {}]", self.epochs));
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e <= epoch).count();
        self.initial_lr * self.lr_drop_factor.powi(drops as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    pub regularizer: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    /// Exactly-zero groups per regularized block after the proximal pass.
    pub zeroed_per_layer: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Indices of the exactly-zero groups per regularized block after the
    /// last epoch.
    #[serde(default)]
    pub kill_list: Vec<Vec<usize>>,
}

impl TrainingLog {
    /// One JSON object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for rec in &self.epochs {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn final_zeroed(&self) -> Option<&[usize]> {
        self.epochs.last().map(|r| r.zeroed_per_layer.as_slice())
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose largest logit (first one on ties) is the label.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        if argmax(net.predict(x)?.data()) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn check_compatible(net: &Network, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    if data.input_shape() != Some(net.input_shape()) {
        return Err(Error::shape("train", data.input_shape().unwrap_or(&[]), net.input_shape()));
    }
    if data.class_count > net.output_len() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the network outputs {}",
            data.class_count,
            net.output_len()
        )));
    }
    Ok(())
}

/// Mean loss and mean gradient over a mini-batch; samples are summed in
/// batch order.
fn batch_gradient(net: &Network, data: &Dataset, batch: &[usize]) -> Result<(f64, ParamSet)> {
    let mut total: Option<ParamSet> = None;
    let mut loss = 0.0;
    for &i in batch {
        let (l, g) = net.loss_and_grad(&data.inputs[i], data.labels[i])?;
        loss += l;
        match total.as_mut() {
            Some(t) => t.add_assign(&g),
            None => total = Some(g),
        }
    }
    let mut grad = total.expect("non-empty batch");
    let scale = 1.0 / batch.len() as f64;
    grad.scale(scale);
    Ok((loss * scale, grad))
}

struct Momentum {
    velocity: ParamSet,
    frozen: Vec<Vec<bool>>,
}

impl Momentum {
    fn new(net: &Network) -> Self {
        let velocity = ParamSet::zeros(net.layout());
        let frozen = velocity.blocks.iter().map(|b| vec![false; b.len()]).collect();
        Momentum { velocity, frozen }
    }

    /// `v <- mu v - lr g; theta <- theta + v` for every group that is not frozen.
    fn step(&mut self, params: &mut ParamSet, grad: &ParamSet, lr: f64, mu: f64, weight_decay: f64) {
        for (b, groups) in params.blocks.iter_mut().enumerate() {
            for (n, g) in groups.iter_mut().enumerate() {
                if self.frozen[b][n] {
                    continue;
                }
                let v = &mut self.velocity.blocks[b][n];
                let dg = &grad.blocks[b][n];
                for ((w, vel), &gw) in g.weights_mut().iter_mut().zip(v.weights_mut().iter_mut()).zip(dg.weights().data()) {
                    let gw = gw + weight_decay * *w;
                    *vel = mu * *vel - lr * gw;
                    *w += *vel;
                }
                let gb = dg.bias + weight_decay * g.bias;
                v.bias = mu * v.bias - lr * gb;
                g.bias += v.bias;
            }
        }
    }

    fn freeze(&mut self, killed: &[Vec<usize>]) {
        for (b, dead) in killed.iter().enumerate() {
            for &n in dead {
                self.frozen[b][n] = true;
                self.velocity.blocks[b][n].set_zero();
            }
        }
    }
}

/// Trains with momentum SGD and an end-of-epoch proximal pass of `rcfg`.
pub fn train(
    net: &Network,
    data: &Dataset,
    validation: Option<&Dataset>,
    tcfg: &TrainingConfig,
    rcfg: &RegularizerConfig,
) -> Result<(Network, TrainingLog)> {
    run(net, data, validation, tcfg, Some(rcfg))
}

/// The same loop with the regularization machinery removed entirely.
pub fn train_unregularized(
    net: &Network,
    data: &Dataset,
    validation: Option<&Dataset>,
    tcfg: &TrainingConfig,
) -> Result<(Network, TrainingLog)> {
    run(net, data, validation, tcfg, None)
}

fn run(
    net: &Network,
    data: &Dataset,
    validation: Option<&Dataset>,
    tcfg: &TrainingConfig,
    rcfg: Option<&RegularizerConfig>,
) -> Result<(Network, TrainingLog)> {
    tcfg.validate()?;
    check_compatible(net, data)?;
    if let Some(v) = validation {
        check_compatible(net, v)?;
    }
    if let Some(r) = rcfg {
        // fails early on a mismatched config
        regularizer_value(net.params(), r)?;
    }

    let mut net = net.clone();
    let mut momentum = Momentum::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut log = TrainingLog::default();

    for epoch in 1..=tcfg.epochs {
        let lr = tcfg.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for batch_idx in 0..tcfg.batches_per_epoch {
            let mut batch = Vec::with_capacity(tcfg.batch_size);
            while batch.len() < tcfg.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let take = (tcfg.batch_size - batch.len()).min(order.len() - cursor);
                batch.extend_from_slice(&order[cursor..cursor + take]);
                cursor += take;
            }
            let (loss, grad) = batch_gradient(&net, data, &batch)?;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            epoch_loss += loss;
            momentum.step(net.params_mut(), &grad, lr, tcfg.momentum, tcfg.weight_decay);
        }

        let (regularizer, killed) = match rcfg {
            Some(r) => {
                // the proximal pass needs t > 0; with a zero learning rate it is the identity
                let killed = if lr > 0.0 {
                    prox_all_in_place(net.params_mut(), lr, r)?
                } else {
                    dead_groups(net.params(), r.group_sizes.len())
                };
                if tcfg.freeze_killed {
                    momentum.freeze(&killed);
                }
                (regularizer_value(net.params(), r)?, killed)
            }
            None => (0.0, dead_groups(net.params(), net.params().blocks.len() - 1)),
        };

        log.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            loss: epoch_loss / tcfg.batches_per_epoch as f64,
            regularizer,
            train_accuracy: evaluate(&net, data)?,
            validation_accuracy: validation.map(|v| evaluate(&net, v)).transpose()?,
            zeroed_per_layer: killed.iter().map(Vec::len).collect(),
        });
        log.kill_list = killed;
    }
    Ok((net, log))
}

fn dead_groups(params: &ParamSet, blocks: usize) -> Vec<Vec<usize>> {
    params.blocks[..blocks]
        .iter()
        .map(|groups| groups.iter().enumerate().filter(|(_, g)| g.is_zero()).map(|(i, _)| i).collect())
        .collect()
}
